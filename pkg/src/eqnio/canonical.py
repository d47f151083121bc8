"""Canonicalization of gravity-aligned IMU windows.

Covers the angular-rate decomposition ``w -> (v1, v2)`` with ``v1 x v2 = w``,
the scalar/vector features fed to the frame network, orthonormalization of
the two predicted basis vectors into a yaw frame, and the maps into and out
of that frame.  Everything here runs in float64 and is vectorized over any
leading batch axes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .group import R90, YawFrame, lift3
from .imu import ImuWindow

log = logging.getLogger(__name__)

EPS = 1e-8
SO2, O2 = "so2", "o2"

# (C0_vectors, C0_scalars) per mode
FEATURE_COUNTS = {SO2: (2, 5), O2: (3, 9)}


class DegenerateFrame(ValueError):
    """No frame can be built from the given vectors; callers fall back to identity."""


def check_mode(mode: str) -> str:
    mode = str(mode).lower()
    if mode not in (SO2, O2):
        raise ValueError(f"mode must be 'so2' or 'o2', got {mode!r}")
    return mode


# ------------------------------------------------------------ decomposition


class OmegaPair(NamedTuple):
    v1: np.ndarray
    v2: np.ndarray


def _norm(x):
    return np.linalg.norm(x, axis=-1, keepdims=True)


def decompose_omega(w, a) -> OmegaPair:
    """Split angular rates into perpendicular vectors of norm ``sqrt|w|``.

    ``w1 = (-w_y, w_x, 0)`` in general.  When ``w`` is (numerically) parallel
    to z the gravity-aligned acceleration breaks the tie via ``w1 = a x w``;
    if that vanishes too, ``w1 = w x e_x`` (a fixed axis, so this last branch
    is not equivariant).  ``w = 0`` maps to a zero pair.
    """
    w = np.asarray(w, dtype=np.float64)
    a = np.broadcast_to(np.asarray(a, dtype=np.float64), w.shape)
    wn = _norm(w)
    zero = wn == 0
    # work with the unit axis so tiny rates cannot underflow the norms below
    u = w / np.where(zero, 1.0, wn)

    w1 = np.stack([-u[..., 1], u[..., 0], np.zeros_like(u[..., 0])], axis=-1)
    along_z = _norm(w1) <= EPS
    if np.any(along_z):
        axu = np.cross(a, u)
        w1 = np.where(along_z, axu, w1)
        still = along_z & (_norm(axu) <= EPS * _norm(a))
        if np.any(still):
            w1 = np.where(still, np.cross(u, [1.0, 0.0, 0.0]), w1)
    b1 = w1 / np.where(zero, 1.0, _norm(w1))
    w2 = np.cross(u, b1)
    b2 = w2 / np.where(zero, 1.0, _norm(w2))

    root = np.sqrt(wn)
    v1 = np.where(zero, 0.0, root * b1)
    v2 = np.where(zero, 0.0, root * b2)
    return OmegaPair(v1, v2)


def decomposition_branch(w, a) -> np.ndarray:
    """0 generic, 1 uses ``a x w``, 2 fixed-axis fallback, -1 zero rate."""
    w = np.asarray(w, dtype=np.float64)
    a = np.broadcast_to(np.asarray(a, dtype=np.float64), w.shape)
    wn = _norm(w)[..., 0]
    out = np.zeros(w.shape[:-1], dtype=int)
    along_z = np.hypot(w[..., 0], w[..., 1]) <= EPS * wn
    fallback = along_z & (_norm(np.cross(a, w))[..., 0] <= EPS * _norm(a)[..., 0] * wn)
    out[along_z] = 1
    out[fallback] = 2
    out[wn == 0] = -1
    return out


def recompose_omega(pair: OmegaPair) -> np.ndarray:
    return np.cross(pair.v1, pair.v2)


# ---------------------------------------------------------------- features


@dataclass
class FeatureBundle:
    """Frame-network input.

    ``vectors`` has shape ``(..., n, 2, C_v)`` (xy components on axis -2),
    ``scalars`` has shape ``(..., n, C_s)``.
    """

    vectors: np.ndarray
    scalars: np.ndarray


def _window_arrays(win):
    if isinstance(win, ImuWindow):
        return win.accel, win.gyro
    accel, gyro = win
    return np.asarray(accel, dtype=np.float64), np.asarray(gyro, dtype=np.float64)


def extract_features(win, mode: str) -> FeatureBundle:
    """Invariant scalars and equivariant xy vectors.

    ``win`` is an :class:`ImuWindow` or an ``(accel, gyro)`` pair of arrays
    shaped ``(..., n, 3)``.
    """
    mode = check_mode(mode)
    accel, gyro = _window_arrays(win)
    if mode == SO2:
        vecs = [accel, gyro]
    else:
        v1, v2 = decompose_omega(gyro, accel)
        vecs = [accel, v1, v2]
    xy = [v[..., :2] for v in vecs]
    z = [v[..., 2] for v in vecs]
    norms = [np.linalg.norm(v, axis=-1) for v in xy]
    dots = [np.sum(xy[i] * xy[j], axis=-1) for i in range(len(xy)) for j in range(i + 1, len(xy))]
    scalars = np.stack(z + norms + dots, axis=-1)
    vectors = np.stack(xy, axis=-1)
    return FeatureBundle(vectors, scalars)


# ------------------------------------------------------------------ frames


def orthonormalize_batch(raw1, raw2, mode: str):
    """Vectorized frame construction.

    Returns ``(frames, degenerate)`` with ``frames`` shaped ``(..., 2, 2)``
    (basis vectors as columns); degenerate entries hold the identity.
    """
    mode = check_mode(mode)
    raw1 = np.asarray(raw1, dtype=np.float64)
    raw2 = np.asarray(raw2, dtype=np.float64)
    n1 = np.linalg.norm(raw1, axis=-1, keepdims=True)
    bad = n1[..., 0] < EPS
    b1 = raw1 / np.where(bad[..., None], 1.0, n1)
    if mode == SO2:
        b2 = b1 @ R90.T
    else:
        u = raw2 - np.sum(b1 * raw2, axis=-1, keepdims=True) * b1
        nu = np.linalg.norm(u, axis=-1, keepdims=True)
        bad = bad | (nu[..., 0] < EPS)
        b2 = u / np.where(nu < EPS, 1.0, nu)
    frames = np.stack([b1, b2], axis=-1)
    frames = np.where(bad[..., None, None], np.eye(2), frames)
    return frames, bad


def orthonormalize_frame(raw1, raw2, mode: str) -> YawFrame:
    """Build a yaw frame from two predicted vectors; raises :class:`DegenerateFrame`."""
    frames, bad = orthonormalize_batch(np.reshape(raw1, 2), np.reshape(raw2, 2), mode)
    if bad:
        raise DegenerateFrame("predicted basis vectors are too short or parallel")
    return YawFrame(frames)


def orthonormalize_vjp(raw1, raw2, frames, bad, g_frames, mode: str):
    """Reverse-mode derivative of :func:`orthonormalize_batch`."""
    mode = check_mode(mode)
    g_b1 = g_frames[..., :, 0]
    g_b2 = g_frames[..., :, 1]
    b1 = frames[..., :, 0]
    b2 = frames[..., :, 1]
    n1 = np.linalg.norm(raw1, axis=-1, keepdims=True)
    n1 = np.where(n1 < EPS, 1.0, n1)
    g_r2 = np.zeros_like(raw2)
    if mode == SO2:
        g_b1 = g_b1 + g_b2 @ R90
    else:
        u = raw2 - np.sum(b1 * raw2, axis=-1, keepdims=True) * b1
        nu = np.linalg.norm(u, axis=-1, keepdims=True)
        nu = np.where(nu < EPS, 1.0, nu)
        g_u = (g_b2 - np.sum(g_b2 * b2, axis=-1, keepdims=True) * b2) / nu
        b1_gu = np.sum(b1 * g_u, axis=-1, keepdims=True)
        g_r2 = g_u - b1_gu * b1
        g_b1 = g_b1 - np.sum(b1 * raw2, axis=-1, keepdims=True) * g_u - b1_gu * raw2
    g_r1 = (g_b1 - np.sum(g_b1 * b1, axis=-1, keepdims=True) * b1) / n1
    mask = ~np.asarray(bad)[..., None]
    return g_r1 * mask, g_r2 * mask


def pca_frame(win) -> YawFrame:
    """Principal axes of the horizontal accelerometer spread.

    The dominant axis is signed so the mean horizontal acceleration projects
    non-negatively on it; the second axis completes a proper rotation, so
    reflections of the input cannot be represented.
    """
    accel, _ = _window_arrays(win)
    xy = accel[..., :2].reshape(-1, 2)
    if len(xy) < 2:
        raise DegenerateFrame("need at least two samples")
    evals, evecs = np.linalg.eigh(np.cov(xy, rowvar=False))
    if evals[0] <= EPS * max(evals[1], EPS):
        raise DegenerateFrame("horizontal accelerations span fewer than two directions")
    b1 = evecs[:, 1]
    if b1 @ xy.mean(axis=0) < 0:
        b1 = -b1
    return YawFrame.from_columns(b1, R90 @ b1)


# --------------------------------------------------- in and out of the frame


def _as_matrix(f):
    return f.m if isinstance(f, YawFrame) else np.asarray(f, dtype=np.float64)


def _into(F, x):
    # F^{-1} x = F^T x on the xy components
    out = np.array(x, dtype=np.float64, copy=True)
    out[..., :2] = np.einsum("...ij,...ni->...nj", F, x[..., :2])
    return out


def canonicalize(win, f, mode: str) -> np.ndarray:
    """Express a window in frame ``f``; returns ``(..., n, 6)`` channels.

    SO(2): ``(a'_x, a'_y, w'_x, w'_y, a_z, w_z)``.  O(2): ``(a', w')`` with
    ``w' = v1' x v2'`` recomposed from the mapped decomposition.
    """
    mode = check_mode(mode)
    accel, gyro = _window_arrays(win)
    F = _as_matrix(f)
    a_c = _into(F, accel)
    if mode == SO2:
        w_c = _into(F, gyro)
        return np.concatenate([a_c[..., :2], w_c[..., :2], accel[..., 2:], gyro[..., 2:]], axis=-1)
    v1, v2 = decompose_omega(gyro, accel)
    w_c = recompose_omega(OmegaPair(_into(F, v1), _into(F, v2)))
    return np.concatenate([a_c, w_c], axis=-1)


@dataclass
class PriorOutput:
    d: np.ndarray
    sigma: np.ndarray


def decanonicalize(out_d, out_u, f) -> PriorOutput:
    """Map canonical displacement and log-std back to the gravity-aligned frame."""
    F = _as_matrix(f)
    out_d = np.asarray(out_d, dtype=np.float64)
    out_u = np.asarray(out_u, dtype=np.float64)
    d = out_d.copy()
    d[..., :2] = np.einsum("...ij,...j->...i", F, out_d[..., :2])
    var = np.exp(2.0 * out_u)
    sigma = np.zeros(out_u.shape[:-1] + (3, 3))
    sigma[..., :2, :2] = np.einsum("...ik,...k,...jk->...ij", F, var[..., :2], F)
    sigma[..., 2, 2] = var[..., 2]
    return PriorOutput(d, sigma)


def frame_to_3d(F) -> np.ndarray:
    F = np.asarray(F, dtype=np.float64)
    out = np.zeros(F.shape[:-2] + (3, 3))
    out[..., :2, :2] = F
    out[..., 2, 2] = 1.0
    return out


__all__ = [
    "EPS", "SO2", "O2", "FEATURE_COUNTS", "DegenerateFrame", "OmegaPair", "FeatureBundle",
    "PriorOutput", "decompose_omega", "decomposition_branch", "recompose_omega",
    "extract_features", "orthonormalize_batch", "orthonormalize_frame", "orthonormalize_vjp",
    "pca_frame", "canonicalize", "decanonicalize", "frame_to_3d", "lift3", "check_mode",
]
