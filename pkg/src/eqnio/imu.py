"""IMU sample model, gravity alignment and a synthetic trajectory simulator.

Measurement model (body frame, gravity not compensated)::

    gyro  = w_true + b_g + n_g
    accel = R^T (acc_world - g) + b_a + n_a,      g = (0, 0, -9.81)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.interpolate import make_interp_spline

from .so3 import euler_xyz, exp_so3, hat, matrix_to_quat, quat_to_matrix, rot_x, rot_y, rot_z

GRAVITY = np.array([0.0, 0.0, -9.81])

IMU_HEADER = "t,wx,wy,wz,ax,ay,az"
POSE_HEADER = "t,qw,qx,qy,qz,px,py,pz,vx,vy,vz"


class ImuSample(NamedTuple):
    t: float
    omega: np.ndarray
    accel: np.ndarray


class PoseSample(NamedTuple):
    t: float
    rot: np.ndarray
    pos: np.ndarray
    vel: np.ndarray


@dataclass
class ImuSequence:
    t: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray
    # ground-truth biases, only known for simulated data
    bias_gyro: np.ndarray | None = None
    bias_accel: np.ndarray | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.gyro = np.asarray(self.gyro, dtype=np.float64).reshape(-1, 3)
        self.accel = np.asarray(self.accel, dtype=np.float64).reshape(-1, 3)
        if not (len(self.t) == len(self.gyro) == len(self.accel)):
            raise ValueError("IMU arrays must have equal length")
        if len(self.t) > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("IMU timestamps must be strictly increasing")

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i) -> ImuSample:
        return ImuSample(float(self.t[i]), self.gyro[i], self.accel[i])

    @property
    def dt(self) -> float:
        return float(np.median(np.diff(self.t)))


@dataclass
class PoseSequence:
    t: np.ndarray
    rot: np.ndarray
    pos: np.ndarray
    vel: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.rot = np.asarray(self.rot, dtype=np.float64).reshape(-1, 3, 3)
        self.pos = np.asarray(self.pos, dtype=np.float64).reshape(-1, 3)
        self.vel = np.asarray(self.vel, dtype=np.float64).reshape(-1, 3)

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i) -> PoseSample:
        return PoseSample(float(self.t[i]), self.rot[i], self.pos[i], self.vel[i])

    def yaws(self) -> np.ndarray:
        return np.array([euler_xyz(R)[2] for R in self.rot])


@dataclass
class ImuWindow:
    """Gravity-aligned window: z is world-up, yaw anchored at the first sample."""

    t: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray
    yaw: float = 0.0
    align_rot: np.ndarray = field(default_factory=lambda: np.eye(3))
    start: int = 0

    def __len__(self):
        return len(self.t)


class YawSplit(NamedTuple):
    yaw: float
    yaw_free: np.ndarray
    degenerate: bool


def extrinsic_xyz_yaw(rot) -> YawSplit:
    """Split ``rot = Rz(yaw) @ yaw_free`` using extrinsic XYZ Euler angles."""
    rot = np.asarray(rot, dtype=np.float64)
    _, _, yaw, degenerate = euler_xyz(rot)
    return YawSplit(yaw, rot_z(yaw).T @ rot, degenerate)


def gravity_align(imu: ImuSequence, orientations, start: int, stop: int) -> ImuWindow:
    """Rotate samples ``start:stop`` into the window-start local gravity frame.

    Sample ``k`` is mapped by ``Rz(yaw_start)^T @ R_k`` where ``R_k`` is the
    world-from-body orientation estimate of that sample.
    """
    if not 0 <= start < stop <= len(imu):
        raise IndexError(f"window [{start}, {stop}) out of bounds for {len(imu)} samples")
    rots = np.asarray(orientations, dtype=np.float64)
    if len(rots) < stop:
        raise IndexError("need one orientation per sample")
    split = extrinsic_xyz_yaw(rots[start])
    M = rot_z(split.yaw).T @ rots[start:stop]
    gyro = np.einsum("kij,kj->ki", M, imu.gyro[start:stop])
    accel = np.einsum("kij,kj->ki", M, imu.accel[start:stop])
    return ImuWindow(imu.t[start:stop].copy(), gyro, accel, split.yaw, split.yaw_free, start)


def align_windows(imu: ImuSequence, orientations, starts, n: int):
    """Batched ``gravity_align``; returns ``(gyro, accel, yaws)`` arrays."""
    rots = np.asarray(orientations, dtype=np.float64)
    gyro_w = np.einsum("kij,kj->ki", rots, imu.gyro)
    accel_w = np.einsum("kij,kj->ki", rots, imu.accel)
    starts = np.asarray(starts, dtype=int)
    yaws = np.array([euler_xyz(rots[s])[2] for s in starts])
    idx = starts[:, None] + np.arange(n)[None, :]
    c, s = np.cos(yaws)[:, None], np.sin(yaws)[:, None]

    def unyaw(x):
        out = x[idx].copy()
        xs, ys = out[..., 0].copy(), out[..., 1].copy()
        out[..., 0] = c * xs + s * ys
        out[..., 1] = -s * xs + c * ys
        return out

    return unyaw(gyro_w), unyaw(accel_w), yaws


def window_displacements(poses: PoseSequence, starts, n: int, yaws=None) -> np.ndarray:
    """Displacement over ``[t_s, t_{s+n}]`` expressed in the window-start yaw frame."""
    starts = np.asarray(starts, dtype=int)
    if yaws is None:
        yaws = np.array([euler_xyz(poses.rot[s])[2] for s in starts])
    dp = poses.pos[starts + n] - poses.pos[starts]
    c, s = np.cos(yaws), np.sin(yaws)
    out = dp.copy()
    out[:, 0] = c * dp[:, 0] + s * dp[:, 1]
    out[:, 1] = -s * dp[:, 0] + c * dp[:, 1]
    return out


# ---------------------------------------------------------------- simulation


@dataclass
class SimConfig:
    duration: float = 60.0
    rate: float = 200.0
    waypoints: int | None = None  # default: one every 2 s
    speed: float = 1.2  # m/s, mean horizontal speed
    turn_std: float = 0.8  # rad, heading change between waypoints
    vertical_std: float = 0.05  # m
    yaw_noise: float = 0.3  # rad, heading deviation (body not aligned with velocity)
    tilt_amp: float = np.deg2rad(12.0)  # roll/pitch oscillation amplitude
    gyro_noise: float = 1e-3  # rad/s per sample
    accel_noise: float = 1e-2  # m/s^2 per sample
    gyro_bias: float = 2e-3  # rad/s
    accel_bias: float = 5e-2  # m/s^2
    gyro_bias_rw: float = 0.0  # rad/s/sqrt(s)
    accel_bias_rw: float = 0.0  # m/s^2/sqrt(s)

    def validate(self):
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        if not self.duration > 0:
            raise ValueError(f"duration must be positive, got {self.duration}")
        if self.waypoints is not None and self.waypoints < 2:
            raise ValueError("need at least 2 waypoints")
        for name in ("speed", "gyro_noise", "accel_noise", "gyro_bias", "accel_bias",
                     "gyro_bias_rw", "accel_bias_rw", "tilt_amp", "yaw_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def noiseless(self) -> "SimConfig":
        from dataclasses import replace
        return replace(self, gyro_noise=0.0, accel_noise=0.0, gyro_bias=0.0, accel_bias=0.0,
                       gyro_bias_rw=0.0, accel_bias_rw=0.0)


def _quintic(knots, values):
    # C4 with zero velocity and acceleration at both ends
    rest = [(1, np.zeros(np.shape(values)[1:])), (2, np.zeros(np.shape(values)[1:]))]
    return make_interp_spline(knots, values, k=5, bc_type=(rest, rest))


class _Trajectory:
    """Analytic trajectory: quintic-spline position and yaw, sinusoidal tilt."""

    def __init__(self, cfg: SimConfig, rng: np.random.Generator):
        T = cfg.duration
        nw = cfg.waypoints or max(2, int(round(T / 2.0)) + 1)
        knots = np.linspace(0.0, T, nw)
        if nw > 2:
            spacing = T / (nw - 1)
            knots[1:-1] += rng.uniform(-0.25, 0.25, nw - 2) * spacing
        heading = rng.uniform(-np.pi, np.pi) + np.cumsum(rng.normal(0.0, cfg.turn_std, nw))
        steps = np.diff(knots)[:, None] * cfg.speed * np.column_stack(
            [np.cos(heading[:-1]), np.sin(heading[:-1])])
        xy = np.vstack([np.zeros((1, 2)), np.cumsum(steps, axis=0)])
        z = rng.normal(0.0, cfg.vertical_std, nw) if cfg.speed > 0 else np.zeros(nw)
        self.pos = _quintic(knots, np.column_stack([xy, z]))

        vel = self.pos(knots, 1)
        if cfg.speed > 0:
            vel_heading = np.unwrap(np.arctan2(vel[:, 1], vel[:, 0]))
            # the ends are at rest; borrow the neighbouring heading
            vel_heading[0], vel_heading[-1] = vel_heading[1], vel_heading[-2]
        else:
            vel_heading = np.zeros(nw)
        yaw_knots = vel_heading + rng.normal(0.0, cfg.yaw_noise, nw)
        self.yaw = _quintic(knots, yaw_knots)

        # roll and pitch: sums of two sinusoids each
        self.tilt_a = rng.uniform(0.3, 1.0, (2, 2)) * cfg.tilt_amp / 2
        self.tilt_f = 2 * np.pi * rng.uniform(0.05, 0.4, (2, 2))
        self.tilt_p = rng.uniform(0, 2 * np.pi, (2, 2))

    def _tilt(self, t, order):
        arg = self.tilt_f[..., None] * t + self.tilt_p[..., None]
        a, f = self.tilt_a[..., None], self.tilt_f[..., None]
        if order == 0:
            vals = a * np.sin(arg)
        elif order == 1:
            vals = a * f * np.cos(arg)
        else:
            vals = -a * f**2 * np.sin(arg)
        return vals.sum(axis=1)  # (2, N): roll, pitch

    def angles(self, t):
        roll, pitch = self._tilt(t, 0)
        return roll, pitch, self.yaw(t)

    def rotations(self, t):
        roll, pitch, yaw = self.angles(t)
        return np.stack([rot_z(c) @ rot_y(b) @ rot_x(a) for a, b, c in zip(roll, pitch, yaw)])

    def body_rates(self, t):
        roll, pitch, _ = self.angles(t)
        droll, dpitch = self._tilt(t, 1)
        dyaw = self.yaw(t, 1)
        sr, cr = np.sin(roll), np.cos(roll)
        sp, cp = np.sin(pitch), np.cos(pitch)
        return np.column_stack([
            droll - dyaw * sp,
            dpitch * cr + dyaw * cp * sr,
            -dpitch * sr + dyaw * cp * cr,
        ])


def simulate_trajectory(cfg: SimConfig, seed: int) -> tuple[PoseSequence, ImuSequence]:
    """Ground-truth poses and noisy IMU readings, deterministic per seed."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    traj = _Trajectory(cfg, rng)
    count = int(round(cfg.duration * cfg.rate)) + 1
    t = np.arange(count) / cfg.rate
    rots = traj.rotations(t)
    pos, vel, acc = traj.pos(t), traj.pos(t, 1), traj.pos(t, 2)

    omega_true = traj.body_rates(t)
    accel_true = np.einsum("kji,kj->ki", rots, acc - GRAVITY)

    dt = 1.0 / cfg.rate

    def bias(mag, rw):
        b = rng.normal(size=3)
        b *= mag / max(np.linalg.norm(b), 1e-12)
        walk = np.cumsum(rng.normal(0.0, rw * np.sqrt(dt), (count, 3)), axis=0) if rw > 0 else 0.0
        return b + np.zeros((count, 3)) + walk

    bg = bias(cfg.gyro_bias, cfg.gyro_bias_rw)
    ba = bias(cfg.accel_bias, cfg.accel_bias_rw)
    gyro = omega_true + bg + rng.normal(0.0, 1.0, (count, 3)) * cfg.gyro_noise
    accel = accel_true + ba + rng.normal(0.0, 1.0, (count, 3)) * cfg.accel_noise
    return PoseSequence(t, rots, pos, vel), ImuSequence(t, gyro, accel, bg, ba)


def integrate_imu(imu: ImuSequence, rot0, vel0, pos0, method: str = "trapezoid") -> PoseSequence:
    """Strapdown dead reckoning.

    ``method="euler"`` is the first-order scheme used by the filter;
    ``"trapezoid"`` is second order (coning-corrected rotation, trapezoidal
    velocity, exact-for-linear position).
    """
    n = len(imu)
    R = np.empty((n, 3, 3))
    v = np.empty((n, 3))
    p = np.empty((n, 3))
    R[0], v[0], p[0] = rot0, vel0, pos0
    dts = np.diff(imu.t)
    for k in range(n - 1):
        dt = dts[k]
        wk, ak = imu.gyro[k], imu.accel[k]
        if method == "euler":
            f = R[k] @ ak + GRAVITY
            R[k + 1] = R[k] @ exp_so3(wk * dt)
            v[k + 1] = v[k] + f * dt
            p[k + 1] = p[k] + v[k] * dt + 0.5 * f * dt * dt
        elif method == "trapezoid":
            w1 = imu.gyro[k + 1]
            phi = 0.5 * (wk + w1) * dt + np.cross(wk, w1) * dt * dt / 12.0
            R[k + 1] = R[k] @ exp_so3(phi)
            f0 = R[k] @ ak + GRAVITY
            f1 = R[k + 1] @ imu.accel[k + 1] + GRAVITY
            v[k + 1] = v[k] + 0.5 * (f0 + f1) * dt
            p[k + 1] = p[k] + v[k] * dt + (2 * f0 + f1) * dt * dt / 6.0
        else:
            raise ValueError(f"unknown integration method {method!r}")
    return PoseSequence(imu.t.copy(), R, p, v)


def reflect_sequence(poses: PoseSequence, imu: ImuSequence, S) -> tuple[PoseSequence, ImuSequence]:
    """Mirror a recording through the world roto-reflection ``S`` (det -1, fixes z).

    The mirrored body frame is ``S R S``; accelerations map by ``S`` and
    angular rates by ``det(S) S``.
    """
    S = np.asarray(S, dtype=np.float64)
    rots = S @ poses.rot @ S
    new_poses = PoseSequence(poses.t, rots, poses.pos @ S.T, poses.vel @ S.T)
    det = np.sign(np.linalg.det(S))
    new_imu = ImuSequence(imu.t, det * imu.gyro @ S.T, imu.accel @ S.T)
    return new_poses, new_imu


def rotate_world(poses: PoseSequence, theta: float) -> PoseSequence:
    Q = rot_z(theta)
    return PoseSequence(poses.t, Q @ poses.rot, poses.pos @ Q.T, poses.vel @ Q.T)


# ---------------------------------------------------------------- CSV files


def write_imu_csv(path, imu: ImuSequence):
    data = np.column_stack([imu.t, imu.gyro, imu.accel])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=IMU_HEADER, comments="")


def read_imu_csv(path) -> ImuSequence:
    _check_header(path, IMU_HEADER)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return ImuSequence(data[:, 0], data[:, 1:4], data[:, 4:7])


def write_pose_csv(path, poses: PoseSequence):
    data = np.column_stack([poses.t, matrix_to_quat(poses.rot), poses.pos, poses.vel])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=POSE_HEADER, comments="")


def read_pose_csv(path) -> PoseSequence:
    _check_header(path, POSE_HEADER)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return PoseSequence(data[:, 0], quat_to_matrix(data[:, 1:5]), data[:, 5:8], data[:, 8:11])


def _check_header(path, expected):
    with open(Path(path)) as fh:
        header = fh.readline().strip()
    if header != expected:
        raise ValueError(f"{path}: expected header {expected!r}, got {header!r}")


__all__ = [
    "GRAVITY", "ImuSample", "PoseSample", "ImuSequence", "PoseSequence", "ImuWindow",
    "extrinsic_xyz_yaw", "gravity_align", "align_windows", "window_displacements",
    "SimConfig", "simulate_trajectory", "integrate_imu", "reflect_sequence", "rotate_world",
    "write_imu_csv", "read_imu_csv", "write_pose_csv", "read_pose_csv",
]
