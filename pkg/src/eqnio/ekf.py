"""Stochastic-cloning EKF driven by learned displacement measurements.

State: past-pose clones ``(R_i, p_i)`` followed by the current
``(R, v, p, b_g, b_a)``.  Error state order is ``(theta_i, dp_i)`` per clone
then ``(theta, dv, dp, dbg, dba)``; rotations are perturbed on the left,
``R <- exp(theta) R``, so ``theta`` lives in the world frame.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .imu import GRAVITY, ImuSample, ImuSequence, ImuWindow, PoseSequence, gravity_align, window_displacements
from .so3 import euler_xyz, exp_so3, hat, right_jacobian, rot_z

log = logging.getLogger(__name__)

CUR = 15  # size of the current error state
COV_FLOOR = 1e-6


@dataclass
class NoiseParams:
    """Per-sample white-noise std and bias random-walk densities."""

    gyro: float = 1e-3  # rad/s
    accel: float = 1e-2  # m/s^2
    gyro_bias_rw: float = 1e-5  # rad/s/sqrt(s)
    accel_bias_rw: float = 1e-4  # m/s^2/sqrt(s)

    def __post_init__(self):
        if min(self.gyro, self.accel, self.gyro_bias_rw, self.accel_bias_rw) < 0:
            raise ValueError("noise parameters must be non-negative")

    def W(self, dt: float) -> np.ndarray:
        return np.diag(np.repeat([self.gyro**2, self.accel**2,
                                  self.gyro_bias_rw**2 * dt, self.accel_bias_rw**2 * dt], 3))


@dataclass
class EkfState:
    rot: np.ndarray
    vel: np.ndarray
    pos: np.ndarray
    bg: np.ndarray
    ba: np.ndarray
    P: np.ndarray
    clone_rot: list = field(default_factory=list)
    clone_pos: list = field(default_factory=list)
    clone_idx: list = field(default_factory=list)  # sample index each clone was taken at

    @property
    def n_clones(self) -> int:
        return len(self.clone_rot)

    def copy(self) -> "EkfState":
        return EkfState(self.rot.copy(), self.vel.copy(), self.pos.copy(), self.bg.copy(), self.ba.copy(),
                        self.P.copy(), [r.copy() for r in self.clone_rot], [p.copy() for p in self.clone_pos],
                        list(self.clone_idx))


def initial_state(rot, vel, pos, bg=None, ba=None, sigmas=(1e-4, 1e-3, 1e-4, 1e-2, 1e-1)) -> EkfState:
    """State with diagonal ``P`` from stds ``(theta, v, p, b_g, b_a)``."""
    P = np.diag(np.repeat(np.square(np.asarray(sigmas, dtype=np.float64)), 3))
    z = np.zeros(3)
    return EkfState(np.array(rot, dtype=np.float64), np.array(vel, dtype=np.float64),
                    np.array(pos, dtype=np.float64), z.copy() if bg is None else np.array(bg, dtype=np.float64),
                    z.copy() if ba is None else np.array(ba, dtype=np.float64), P)


# ------------------------------------------------------------- propagation


def propagation_jacobians(state: EkfState, gyro, accel, dt: float):
    """Mean propagation plus the ``A`` (15x15) and ``B`` (15x12) blocks."""
    R = state.rot
    dtheta = (np.asarray(gyro) - state.bg) * dt
    R1 = R @ exp_so3(dtheta)
    dv = R @ (np.asarray(accel) - state.ba) * dt
    dp = 0.5 * dv * dt
    v1 = state.vel + GRAVITY * dt + dv
    p1 = state.pos + state.vel * dt + dp + 0.5 * GRAVITY * dt * dt

    A = np.eye(CUR)
    A[3:6, 0:3] = -hat(dv)
    A[6:9, 0:3] = -hat(dp)
    A[6:9, 3:6] = np.eye(3) * dt
    RJ = R1 @ right_jacobian(dtheta) * dt
    A[0:3, 9:12] = -RJ
    A[3:6, 12:15] = -R * dt
    A[6:9, 12:15] = -0.5 * R * dt * dt

    B = np.zeros((CUR, 12))
    B[0:3, 0:3] = RJ
    B[3:6, 3:6] = R * dt
    B[6:9, 3:6] = 0.5 * R * dt * dt
    B[9:12, 6:9] = np.eye(3)
    B[12:15, 9:12] = np.eye(3)
    return (R1, v1, p1), A, B


def _check_sample(gyro, accel, dt):
    if not (np.all(np.isfinite(gyro)) and np.all(np.isfinite(accel)) and np.isfinite(dt)):
        raise ValueError("non-finite IMU sample")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")


def propagate(state: EkfState, sample: ImuSample, dt: float, noise: NoiseParams | None = None,
              augment: bool = False, sample_index: int = -1) -> EkfState:
    """Strapdown step for mean and covariance.

    With ``augment=True`` the propagated pose is also cloned, using the
    stacked copy Jacobian so the new covariance is formed in one product.
    """
    _check_sample(sample.omega, sample.accel, dt)
    noise = noise or NoiseParams()
    (R1, v1, p1), A, B = propagation_jacobians(state, sample.omega, sample.accel, dt)
    out = state.copy()
    out.rot, out.vel, out.pos = R1, v1, p1
    m = 6 * state.n_clones
    Q = B @ noise.W(dt) @ B.T
    P = state.P
    if not augment:
        Pn = P.copy()
        Pn[m:, m:] = A @ P[m:, m:] @ A.T + Q
        Pn[:m, m:] = P[:m, m:] @ A.T
        Pn[m:, :m] = Pn[:m, m:].T
    else:
        # rows: old clones | new clone (copy of propagated theta, p) | current
        Abar = np.zeros((m + 6 + CUR, m + CUR))
        Abar[:m, :m] = np.eye(m)
        Abar[m:m + 3, m:] = A[0:3]
        Abar[m + 3:m + 6, m:] = A[6:9]
        Abar[m + 6:, m:] = A
        Bbar = np.zeros((m + 6 + CUR, 12))
        Bbar[m:m + 3] = B[0:3]
        Bbar[m + 3:m + 6] = B[6:9]
        Bbar[m + 6:] = B
        Pn = Abar @ P @ Abar.T + Bbar @ noise.W(dt) @ Bbar.T
        out.clone_rot.append(R1.copy())
        out.clone_pos.append(p1.copy())
        out.clone_idx.append(sample_index)
    out.P = 0.5 * (Pn + Pn.T)
    return out


def augment_state(state: EkfState, sample_index: int = -1) -> EkfState:
    """Clone the current pose; the covariance grows by the copy Jacobian."""
    m = 6 * state.n_clones
    N = m + CUR
    J = np.zeros((N + 6, N))
    J[:m, :m] = np.eye(m)
    J[m:m + 3, m:m + 3] = np.eye(3)  # theta
    J[m + 3:m + 6, m + 6:m + 9] = np.eye(3)  # p
    J[m + 6:, m:] = np.eye(CUR)
    out = state.copy()
    out.P = J @ state.P @ J.T
    out.clone_rot.append(state.rot.copy())
    out.clone_pos.append(state.pos.copy())
    out.clone_idx.append(sample_index)
    return out


def drop_clones(state: EkfState, count: int) -> EkfState:
    """Marginalize the ``count`` oldest clones (drop their rows/cols)."""
    if count <= 0:
        return state
    count = min(count, state.n_clones)
    out = state.copy()
    k = 6 * count
    out.P = state.P[k:, k:].copy()
    del out.clone_rot[:count], out.clone_pos[:count], out.clone_idx[:count]
    return out


# ---------------------------------------------------------------- update


@dataclass
class UpdateInfo:
    applied: bool
    reason: str = ""
    innovation: np.ndarray | None = None


def measurement_model(state: EkfState, i: int, j: int):
    """Predicted displacement ``Rz(yaw_i)^T (p_j - p_i)`` and its Jacobian."""
    roll, pitch, yaw, _ = euler_xyz(state.clone_rot[i])
    Rz = rot_z(yaw)
    dp = state.clone_pos[j] - state.clone_pos[i]
    h = Rz.T @ dp
    Hz = np.zeros((3, 3))
    Hz[2] = [np.cos(yaw) * np.tan(pitch), np.sin(yaw) * np.tan(pitch), 1.0]
    H = np.zeros((3, state.P.shape[0]))
    H[:, 6 * i:6 * i + 3] = Rz.T @ hat(dp) @ Hz
    H[:, 6 * i + 3:6 * i + 6] = -Rz.T
    H[:, 6 * j + 3:6 * j + 6] = Rz.T
    return h, H, pitch


def floor_covariance(S, floor: float = COV_FLOOR, scale: float = 1.0) -> np.ndarray:
    S = 0.5 * (np.asarray(S, dtype=np.float64) + np.asarray(S, dtype=np.float64).T)
    w, V = np.linalg.eigh(S)
    return scale * (V * np.maximum(w, floor)) @ V.T


def apply_correction(state: EkfState, dx) -> EkfState:
    out = state.copy()
    for c in range(state.n_clones):
        out.clone_rot[c] = exp_so3(dx[6 * c:6 * c + 3]) @ state.clone_rot[c]
        out.clone_pos[c] = state.clone_pos[c] + dx[6 * c + 3:6 * c + 6]
    e = dx[6 * state.n_clones:]
    out.rot = exp_so3(e[0:3]) @ state.rot
    out.vel = state.vel + e[3:6]
    out.pos = state.pos + e[6:9]
    out.bg = state.bg + e[9:12]
    out.ba = state.ba + e[12:15]
    return out


def measurement_update(state: EkfState, d_hat, sigma_hat, i: int, j: int, floor: float = COV_FLOOR,
                       scale: float = 1.0, max_pitch_deg: float = 85.0) -> tuple[EkfState, UpdateInfo]:
    """Displacement update between clones ``i`` and ``j`` (Joseph-form covariance)."""
    if not (0 <= i < state.n_clones and 0 <= j < state.n_clones):
        raise IndexError(f"clones {i}, {j} not in state with {state.n_clones} clones")
    h, H, pitch = measurement_model(state, i, j)
    if abs(pitch) > np.deg2rad(max_pitch_deg):
        return state, UpdateInfo(False, "pitch near singularity")
    Rm = floor_covariance(sigma_hat, floor, scale)
    P = state.P
    PHt = P @ H.T
    S = H @ PHt + Rm
    try:
        K = np.linalg.solve(S.T, PHt.T).T
    except np.linalg.LinAlgError:
        return state, UpdateInfo(False, "singular innovation covariance")
    if not np.all(np.isfinite(K)):
        return state, UpdateInfo(False, "singular innovation covariance")
    r = np.asarray(d_hat, dtype=np.float64) - h
    out = apply_correction(state, K @ r)
    IKH = np.eye(P.shape[0]) - K @ H
    Pn = IKH @ P @ IKH.T + K @ Rm @ K.T
    out.P = 0.5 * (Pn + Pn.T)
    return out, UpdateInfo(True, innovation=r)


# ----------------------------------------------------------------- filter


PriorFn = Callable[[ImuWindow], tuple]


@dataclass
class FilterConfig:
    window: int = 200
    update_stride: int = 20
    noise: NoiseParams = field(default_factory=NoiseParams)
    cov_scale: float = 1.0
    cov_floor: float = COV_FLOOR
    max_pitch_deg: float = 85.0

    def __post_init__(self):
        if self.window < 1 or self.update_stride < 1:
            raise ValueError("window and update_stride must be positive")
        if self.window % self.update_stride:
            raise ValueError("window must be a multiple of update_stride")


@dataclass
class FilterResult:
    poses: PoseSequence
    bg: np.ndarray
    ba: np.ndarray
    updates: int = 0
    skipped: int = 0
    P_last: np.ndarray | None = None
    measurements: list = field(default_factory=list)


def run_filter(imu: ImuSequence, prior: PriorFn | None, init: EkfState, cfg: FilterConfig | None = None
               ) -> FilterResult:
    """Propagate every sample; every ``update_stride`` samples clone the pose
    and, once a full window is available, update between the clones at the
    window's start and end using ``prior(window) -> (d, sigma)``.

    ``prior=None`` gives pure strapdown integration.
    """
    cfg = cfg or FilterConfig()
    n, stride = cfg.window, cfg.update_stride
    N = len(imu)
    rots = np.empty((N, 3, 3))
    vel = np.empty((N, 3))
    pos = np.empty((N, 3))
    bg = np.empty((N, 3))
    ba = np.empty((N, 3))
    state = init.copy()
    if prior is not None:
        state = augment_state(state, 0)
    updates = skipped = 0
    meas = []

    def record(k, s):
        rots[k], vel[k], pos[k], bg[k], ba[k] = s.rot, s.vel, s.pos, s.bg, s.ba

    record(0, state)
    dts = np.diff(imu.t)
    for k in range(1, N):
        clone_now = prior is not None and k % stride == 0
        state = propagate(state, imu[k - 1], dts[k - 1], cfg.noise, augment=clone_now, sample_index=k)
        if clone_now and k >= n:
            s = k - n
            i = state.clone_idx.index(s)
            j = state.n_clones - 1
            orient = rots[s:k].copy()
            orient[0] = state.clone_rot[i]
            win = gravity_align(_Slice(imu, s, k), orient, 0, n)
            win.start = s
            d_hat, sigma_hat = prior(win)
            state, info = measurement_update(state, d_hat, sigma_hat, i, j, cfg.cov_floor, cfg.cov_scale,
                                             cfg.max_pitch_deg)
            updates += info.applied
            skipped += not info.applied
            meas.append((s, k, np.asarray(d_hat), np.asarray(sigma_hat), info.applied))
            # clones older than the next window start are no longer needed
            state = drop_clones(state, state.clone_idx.index(s + stride))
        record(k, state)
    return FilterResult(PoseSequence(imu.t.copy(), rots, pos, vel), bg, ba, updates, skipped, state.P, meas)


class _Slice:
    """Light view of ``imu[start:stop]`` for :func:`gravity_align`."""

    def __init__(self, imu: ImuSequence, start: int, stop: int):
        self.t = imu.t[start:stop]
        self.gyro = imu.gyro[start:stop]
        self.accel = imu.accel[start:stop]

    def __len__(self):
        return len(self.t)


def ground_truth_prior(poses: PoseSequence, n: int, sigma: float = 1e-2) -> PriorFn:
    """Oracle prior: the true displacement in the true window-start yaw frame.

    This is what a perfect network returns: a common yaw error in the
    orientation estimates cancels in the gravity-aligned window, so the
    network output never sees the filter's yaw.
    """
    cov = np.eye(3) * sigma**2

    def prior(win: ImuWindow):
        return window_displacements(poses, [win.start], n)[0], cov

    return prior
