"""Numerical solution of the linear-layer equivariance constraint.

A 2x2 channel map ``W`` commutes with every group element ``R`` iff
``(R (x) R) vec(W) = vec(W)``.  Stacking ``R (x) R - I`` over a generating
set and taking the null space gives the admissible weights.
"""

from __future__ import annotations

import numpy as np

from ..canonical import check_mode, SO2
from ..group import R90, YawFrame

# 1 rad is not a rational multiple of pi, so it generates a dense subgroup
_GENERATOR_ANGLE = 1.0


def group_generators(mode: str) -> list[np.ndarray]:
    gens = [YawFrame.rotation(_GENERATOR_ANGLE).m]
    if check_mode(mode) != SO2:
        gens.append(YawFrame.reflection(0.0).m)
    return gens


def solve_weight_basis(mode: str, tol: float = 1e-10) -> list[np.ndarray]:
    """Orthonormal (Frobenius) basis of equivariant 2x2 maps."""
    A = np.vstack([np.kron(R, R) - np.eye(4) for R in group_generators(mode)])
    _, s, vt = np.linalg.svd(A)
    rank = int(np.sum(s > tol * max(1.0, s[0])))
    null = vt[rank:].T  # columns span the solution space in vec() coordinates
    # express the basis in a readable, deterministic orientation by projecting
    # I, R90 and then the unit matrices onto the solution space
    seeds = [np.eye(2), R90] + [np.eye(4)[i].reshape(2, 2, order="F") for i in range(4)]
    basis = []
    for seed in seeds:
        w = null @ (null.T @ seed.reshape(-1, order="F"))
        for b in basis:
            w = w - (b.reshape(-1, order="F") @ w) * b.reshape(-1, order="F")
        if np.linalg.norm(w) > 1e-6:
            basis.append((w / np.linalg.norm(w)).reshape(2, 2, order="F"))
        if len(basis) == null.shape[1]:
            break
    return basis


def commutation_residual(basis, frames) -> float:
    worst = 0.0
    for W in basis:
        for f in frames:
            R = f.m if isinstance(f, YawFrame) else f
            worst = max(worst, float(np.max(np.abs(R @ W - W @ R))))
    return worst
