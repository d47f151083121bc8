"""Displacement losses with explicit VJPs.

All batched functions take a leading batch axis and average over it.  The
MLE loss is evaluated in the canonical frame, where the equivariant
covariance is diagonal.
"""

from __future__ import annotations

import numpy as np

from ..canonical import PriorOutput

COV_KINDS = ("eq", "invariant", "pearson")
PEARSON_PAIRS = ((0, 1), (0, 2), (1, 2))


def loss_mse(pred, target) -> float:
    """Mean over axes of the squared error (and over a leading batch axis, if any)."""
    r = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.mean(r * r))


def loss_mse_vjp(pred, target, g=1.0):
    r = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return g * 2.0 * r / r.size


def loss_mle(pred: PriorOutput, target) -> float:
    """Gaussian negative log-likelihood without the constant, any frame."""
    r = np.asarray(pred.d, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    S = np.asarray(pred.sigma, dtype=np.float64)
    quad = np.einsum("...i,...i->...", r, np.linalg.solve(S, r[..., None])[..., 0])
    _, logdet = np.linalg.slogdet(S)
    return float(np.mean(0.5 * quad + 0.5 * logdet))


def _to_canon(F, t):
    tc = np.array(t, dtype=np.float64, copy=True)
    tc[..., :2] = np.einsum("bij,bi->bj", F, t[..., :2])
    return tc


def mse_canonical(d_c, F, target):
    """MSE and cotangents ``(g_dc, g_F)``; invariant to the frame by construction."""
    r = d_c - _to_canon(F, target)
    g_dc = 2.0 * r / r.size
    g_F = -np.einsum("bi,bj->bij", target[..., :2], g_dc[..., :2])
    return float(np.mean(r * r)), g_dc, g_F


def mle_canonical(d_c, u, F, target, cov: str = "eq"):
    """Batch-mean NLL and cotangents ``(g_dc, g_u, g_F)`` for each covariance kind.

    ``eq``: ``Sigma = F3 diag(e^{2u}) F3^T``.  ``invariant``: ``diag(e^{2u})``
    with no back-mapping, so the residual is taken in the original frame.
    ``pearson``: full canonical covariance from 3 log-stds and 3 tanh
    correlations, mapped back with ``F3``.
    """
    B = len(d_c)
    if cov == "eq":
        r = d_c - _to_canon(F, target)
        w = np.exp(-2.0 * u)
        loss = np.sum(0.5 * r * r * w + u, axis=-1)
        g_dc = r * w / B
        g_u = (1.0 - r * r * w) / B
        g_F = -np.einsum("bi,bj->bij", target[..., :2], g_dc[..., :2])
        return float(loss.mean()), g_dc, g_u, g_F
    if cov == "invariant":
        d = d_c.copy()
        d[..., :2] = np.einsum("bij,bj->bi", F, d_c[..., :2])
        r = d - target
        w = np.exp(-2.0 * u)
        loss = np.sum(0.5 * r * r * w + u, axis=-1)
        g_d = r * w / B
        g_dc = g_d.copy()
        g_dc[..., :2] = np.einsum("bij,bi->bj", F, g_d[..., :2])
        g_F = np.einsum("bi,bj->bij", g_d[..., :2], d_c[..., :2])
        return float(loss.mean()), g_dc, (1.0 - r * r * w) / B, g_F
    if cov == "pearson":
        r = d_c - _to_canon(F, target)
        S, rho, sig = pearson_cov(u)
        Sinv = np.linalg.inv(S)
        z = np.einsum("bij,bj->bi", Sinv, r)
        _, logdet = np.linalg.slogdet(S)
        loss = 0.5 * np.sum(r * z, axis=-1) + 0.5 * logdet
        G = 0.5 * (Sinv - np.einsum("bi,bj->bij", z, z))
        g_u = np.zeros_like(u)
        g_u[:, :3] = 2.0 * np.sum(G * S, axis=-1)
        for q, (i, j) in enumerate(PEARSON_PAIRS):
            g_u[:, 3 + q] = 2.0 * G[:, i, j] * (1.0 - rho[:, q] ** 2) * sig[:, i] * sig[:, j]
        g_dc = z / B
        g_F = -np.einsum("bi,bj->bij", target[..., :2], g_dc[..., :2])
        return float(loss.mean()), g_dc, g_u / B, g_F
    raise ValueError(f"unknown covariance kind {cov!r}")


def pearson_cov(u):
    """Canonical covariance from ``u = (log-std x3, pre-tanh correlation x3)``."""
    u = np.asarray(u, dtype=np.float64)
    sig = np.exp(u[..., :3])
    rho = np.tanh(u[..., 3:6])
    C = np.broadcast_to(np.eye(3), u.shape[:-1] + (3, 3)).copy()
    for q, (i, j) in enumerate(PEARSON_PAIRS):
        C[..., i, j] = C[..., j, i] = rho[..., q]
    return sig[..., :, None] * C * sig[..., None, :], rho, sig
