"""Differentiable canonicalization and the frame variants used by the prior.

The frame ``F`` is kept in float64 on the tape regardless of the model dtype;
cotangents are cast back when they flow into float32 network outputs.
"""

from __future__ import annotations

import numpy as np

from ..canonical import (SO2, DegenerateFrame, check_mode, orthonormalize_batch, orthonormalize_vjp,
                         pca_frame)
from ..eqnet.autodiff import Tape
from ..eqnet.layers import t_conv1d, t_dense, t_gelu, t_layernorm, t_mean_time

FRAME_KINDS = ("eq", "noneq", "pca", "identity")


# ------------------------------------------------------------ orthonormalize


def t_orthonormalize(tape: Tape, raw, mode: str):
    """``raw``: var ``(B, 2, 2)`` with columns ``raw1, raw2``.  Returns ``(F var, degenerate mask)``."""
    mode = check_mode(mode)
    r = raw.value.astype(np.float64)
    r1, r2 = r[..., :, 0], r[..., :, 1]
    frames, bad = orthonormalize_batch(r1, r2, mode)
    dtype = raw.value.dtype

    def vjp(g):
        g1, g2 = orthonormalize_vjp(r1, r2, frames, bad, g, mode)
        return (np.stack([g1, g2], axis=-1).astype(dtype),)

    return tape.apply(frames, (raw,), vjp), bad


# ------------------------------------------------------ input channels, d, loss


def canon_channels(F, accel, gyro, mode: str) -> np.ndarray:
    """Canonical ``(B, n, 6)`` channels from batched frames ``(B, 2, 2)``.

    In O(2) mode the rate channel uses ``det(F) F3^T w``, which equals the
    recomposition ``v1' x v2'`` of the mapped decomposition.
    """
    a_xy = np.einsum("bij,bni->bnj", F, accel[..., :2])
    w_xy = np.einsum("bij,bni->bnj", F, gyro[..., :2])
    if check_mode(mode) == SO2:
        return np.concatenate([a_xy, w_xy, accel[..., 2:], gyro[..., 2:]], axis=-1)
    det = np.sign(np.linalg.det(F))[:, None, None]
    return np.concatenate([a_xy, accel[..., 2:], det * w_xy, det * gyro[..., 2:]], axis=-1)


def t_canon_channels(tape: Tape, F, accel, gyro, mode: str, dtype):
    mode = check_mode(mode)
    out = canon_channels(F.value, accel, gyro, mode).astype(dtype)

    def vjp(g):
        g = g.astype(np.float64)
        if mode == SO2:
            ga, gw = g[..., 0:2], g[..., 2:4]
            gF = np.einsum("bni,bnj->bij", accel[..., :2], ga) + np.einsum("bni,bnj->bij", gyro[..., :2], gw)
        else:
            det = np.sign(np.linalg.det(F.value))[:, None, None]
            gF = (np.einsum("bni,bnj->bij", accel[..., :2], g[..., 0:2])
                  + det * np.einsum("bni,bnj->bij", gyro[..., :2], g[..., 3:5]))
        return (gF,)

    return tape.apply(out, (F,), vjp)


def to_world(F, d_c):
    """``F3 @ d_c`` batched."""
    d = np.array(d_c, dtype=np.float64, copy=True)
    d[..., :2] = np.einsum("bij,bj->bi", F, d_c[..., :2])
    return d


# ---------------------------------------------------------- non-equivariant


def noneq_param_count(hidden: int, blocks: int, kernel: int, in_channels: int = 6) -> int:
    H = hidden
    return (in_channels + 1) * H + blocks * (kernel * H * H + 3 * H) + H * H + H + 4 * H + 4


def match_noneq_width(target: int, blocks: int, kernel: int) -> int:
    """Width whose non-equivariant frame net has the parameter count closest to ``target``."""
    widths = np.arange(4, 1025)
    counts = np.array([noneq_param_count(int(h), blocks, kernel) for h in widths])
    return int(widths[np.argmin(np.abs(counts - target))])


def init_noneq_params(hidden: int, blocks: int, kernel: int, rng, dtype=np.float32) -> dict:
    H = hidden

    def kaiming(shape, fan_in):
        b = np.sqrt(6.0 / fan_in)
        return rng.uniform(-b, b, size=shape).astype(dtype)

    p = {"stem.W": kaiming((6, H), 6), "stem.b": np.zeros(H, dtype)}
    for i in range(blocks):
        p[f"block{i}.K"] = kaiming((kernel, H, H), kernel * H)
        p[f"block{i}.b"] = np.zeros(H, dtype)
        p[f"block{i}.ln_g"] = np.ones(H, dtype)
        p[f"block{i}.ln_b"] = np.zeros(H, dtype)
    p["fc.W"] = kaiming((H, H), H)
    p["fc.b"] = np.zeros(H, dtype)
    p["out.W"] = kaiming((H, 4), H)
    p["out.b"] = np.zeros(4, dtype)
    return p


def noneq_frame_tape(tape: Tape, P: dict, x, blocks: int):
    """Unconstrained frame head on raw ``(B, n, 6)`` windows; returns raw ``(B, 2, 2)``."""
    h = t_gelu(tape, t_dense(tape, x, P["stem.W"], P["stem.b"]))
    for i in range(blocks):
        h = t_gelu(tape, t_conv1d(tape, h, P[f"block{i}.K"], P[f"block{i}.b"]))
        h = t_layernorm(tape, h, P[f"block{i}.ln_g"], P[f"block{i}.ln_b"])
    h = t_mean_time(tape, h)
    h = t_gelu(tape, t_dense(tape, h, P["fc.W"], P["fc.b"]))
    out = t_dense(tape, h, P["out.W"], P["out.b"])
    # (B, 4) -> columns raw1 = out[:, :2], raw2 = out[:, 2:]
    B = out.value.shape[0]
    return tape.apply(out.value.reshape(B, 2, 2).transpose(0, 2, 1), (out,),
                      lambda g: (g.transpose(0, 2, 1).reshape(B, 4),))


# ---------------------------------------------------------------------- PCA


def pca_frames(accel) -> tuple[np.ndarray, np.ndarray]:
    frames = np.repeat(np.eye(2)[None], len(accel), axis=0)
    bad = np.zeros(len(accel), dtype=bool)
    for b, a in enumerate(accel):
        try:
            frames[b] = pca_frame((a, np.zeros_like(a))).m
        except DegenerateFrame:
            bad[b] = True
    return frames, bad
