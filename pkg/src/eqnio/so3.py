"""SO(3) helpers: hat map, exponential/log maps, Jacobians, Euler factors."""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

_SMALL = 1e-8


def hat(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=np.float64).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def exp_so3(phi) -> np.ndarray:
    """Rodrigues formula, Taylor expansion below 1e-8 rad."""
    phi = np.asarray(phi, dtype=np.float64).reshape(3)
    angle = np.linalg.norm(phi)
    K = hat(phi)
    if angle < _SMALL:
        return np.eye(3) + K + 0.5 * K @ K
    s = np.sin(angle) / angle
    c = (1.0 - np.cos(angle)) / angle**2
    return np.eye(3) + s * K + c * K @ K


def log_so3(R) -> np.ndarray:
    return Rotation.from_matrix(np.asarray(R)).as_rotvec()


def right_jacobian(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64).reshape(3)
    angle = np.linalg.norm(phi)
    K = hat(phi)
    if angle < _SMALL:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    a2 = angle * angle
    return np.eye(3) - (1 - np.cos(angle)) / a2 * K + (angle - np.sin(angle)) / (a2 * angle) * K @ K


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_xyz(R) -> tuple[float, float, float, bool]:
    """Extrinsic XYZ angles with ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.

    Returns ``(roll, pitch, yaw, degenerate)``; at gimbal lock the yaw is
    set to 0 and the whole rotation is attributed to roll.
    """
    R = np.asarray(R, dtype=np.float64)
    cp = np.hypot(R[0, 0], R[1, 0])
    pitch = np.arctan2(-R[2, 0], cp)
    if cp < 1e-9:
        roll = np.arctan2(-R[1, 2], R[1, 1])
        return float(roll), float(pitch), 0.0, True
    yaw = np.arctan2(R[1, 0], R[0, 0])
    roll = np.arctan2(R[2, 1], R[2, 2])
    return float(roll), float(pitch), float(yaw), False


def quat_to_matrix(q) -> np.ndarray:
    """``(qw, qx, qy, qz)`` rows to rotation matrices."""
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    return Rotation.from_quat(q[:, [1, 2, 3, 0]]).as_matrix()


def matrix_to_quat(R) -> np.ndarray:
    xyzw = Rotation.from_matrix(np.asarray(R)).as_quat()
    xyzw = np.atleast_2d(xyzw)
    q = xyzw[:, [3, 0, 1, 2]]
    # canonical hemisphere keeps CSV output deterministic
    q[q[:, 0] < 0] *= -1
    return q
