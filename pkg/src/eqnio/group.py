"""Roto-reflections about the gravity axis and their representations.

A group element is stored as its 2x2 orthogonal block acting on the xy-plane;
the z axis (gravity) is left untouched.  Four representations are needed:

* accelerations, displacements and the ``v1``/``v2`` vectors: ``F3 @ x``
* angular rates: ``det(F3) * F3 @ w``
* covariances: ``F3 @ S @ F3.T`` (``F3 (x) F3`` acting on ``vec(S)``)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

R90 = np.array([[0.0, -1.0], [1.0, 0.0]])
_ORTHO_TOL = 1e-9


def _nearest_orthogonal(m: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(m)
    return u @ vt


@dataclass(frozen=True)
class YawFrame:
    """Element of O(2) (equivalently O_g(3)), stored as a 2x2 matrix."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64).reshape(2, 2)
        if not np.all(np.isfinite(m)):
            raise ValueError("frame entries must be finite")
        if np.linalg.norm(m.T @ m - np.eye(2)) > _ORTHO_TOL:
            m = _nearest_orthogonal(m)
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "YawFrame":
        return cls(np.eye(2))

    @classmethod
    def rotation(cls, theta: float) -> "YawFrame":
        c, s = np.cos(theta), np.sin(theta)
        return cls(np.array([[c, -s], [s, c]]))

    @classmethod
    def reflection(cls, phi: float = 0.0) -> "YawFrame":
        """Reflection across the vertical plane containing direction ``phi``."""
        c, s = np.cos(2 * phi), np.sin(2 * phi)
        return cls(np.array([[c, s], [s, -c]]))

    @classmethod
    def from_columns(cls, b1, b2) -> "YawFrame":
        return cls(np.column_stack([b1, b2]))

    @property
    def det(self) -> float:
        return 1.0 if np.linalg.det(self.m) > 0 else -1.0

    @property
    def is_reflection(self) -> bool:
        return self.det < 0

    def inverse(self) -> "YawFrame":
        return YawFrame(self.m.T)

    def __matmul__(self, other: "YawFrame") -> "YawFrame":
        return YawFrame(self.m @ other.m)

    def __repr__(self):
        return f"YawFrame({self.m.tolist()})"


def lift3(f: YawFrame) -> np.ndarray:
    """Block-diagonal 3x3 matrix ``f (+) 1``."""
    out = np.eye(3)
    out[:2, :2] = f.m
    return out


def act_accel(f: YawFrame, a) -> np.ndarray:
    """Action on accelerations, displacements and decomposed rate vectors.

    Works on a single vector or any array whose last axis has length 3.
    """
    return np.asarray(a, dtype=np.float64) @ lift3(f).T


act_disp = act_accel


def act_omega(f: YawFrame, w) -> np.ndarray:
    """Action on angular rates (pseudo-vectors flip sign under reflections)."""
    return f.det * act_accel(f, w)


def act_cov(f: YawFrame, s) -> np.ndarray:
    f3 = lift3(f)
    return f3 @ np.asarray(s, dtype=np.float64) @ f3.T


def cov_rep(f: YawFrame) -> np.ndarray:
    """9x9 matrix acting on column-stacked ``vec(S)``."""
    f3 = lift3(f)
    return np.kron(f3, f3)


def vec(s: np.ndarray) -> np.ndarray:
    return np.asarray(s).reshape(-1, order="F")


def sample_frames(rng: np.random.Generator, count: int, reflections: bool = True) -> list[YawFrame]:
    """Random group elements; half of them roto-reflections when ``reflections``."""
    out = []
    for i in range(count):
        f = YawFrame.rotation(rng.uniform(-np.pi, np.pi))
        if reflections and i % 2 == 1:
            f = f @ YawFrame.reflection(0.0)
        out.append(f)
    return out
