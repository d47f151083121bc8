"""Trajectory reconstruction and the ATE / RTE / AYE / MSE metric suite.

Every metric defaults to the root-mean-square convention.  ``literal=True``
drops the square inside the mean, i.e. ``sqrt(mean(|e|))``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np

from .imu import ImuSequence, PoseSequence, align_windows
from .so3 import euler_xyz, rot_z


def cumulate(displacements, start) -> np.ndarray:
    """Positions ``start, start + d0, start + d0 + d1, ...`` as ``(N + 1, 3)``."""
    start = np.asarray(start, dtype=np.float64).reshape(3)
    d = np.asarray(displacements, dtype=np.float64).reshape(-1, 3)
    return np.vstack([start, start + np.cumsum(d, axis=0)])


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {gt.shape}")
    if len(pred) == 0:
        raise ValueError("empty trajectory")
    return pred, gt


def _root_mean(err, literal: bool) -> float:
    return float(np.sqrt(np.mean(err if literal else err * err)))


def ate(pred, gt, literal: bool = False) -> float:
    pred, gt = _pair(pred, gt)
    return _root_mean(np.linalg.norm(pred - gt, axis=-1), literal)


def window_steps(t, dt_window: float) -> int:
    t = np.asarray(t, dtype=np.float64)
    if len(t) < 2:
        raise ValueError("need at least two timestamps")
    step = int(round(dt_window / np.median(np.diff(t))))
    if step < 1:
        raise ValueError(f"window {dt_window} s is shorter than one sample")
    if step >= len(t):
        raise ValueError(f"window {dt_window} s is not shorter than the {t[-1] - t[0]:.3f} s sequence")
    return step


def rte(pred, gt, t, dt_window: float = 60.0, literal: bool = False) -> float:
    """Error of displacements over every window of ``dt_window`` seconds."""
    pred, gt = _pair(pred, gt)
    k = window_steps(t, dt_window)
    e = (gt[k:] - gt[:-k]) - (pred[k:] - pred[:-k])
    return _root_mean(np.linalg.norm(e, axis=-1), literal)


def wrap_angle(x):
    """Wrap to ``(-pi, pi]``."""
    x = np.asarray(x, dtype=np.float64)
    return np.pi - np.mod(np.pi - x, 2.0 * np.pi)


def aye(pred_yaws, gt_yaws, literal: bool = False) -> float:
    """Absolute yaw error in degrees; yaws in radians."""
    pred, gt = _pair(pred_yaws, gt_yaws)
    return float(np.rad2deg(_root_mean(np.abs(wrap_angle(pred - gt)), literal)))


def mse(pred_d, gt_d) -> float:
    """Squared displacement error averaged over windows and axes."""
    pred, gt = _pair(pred_d, gt_d)
    return float(np.mean((pred - gt) ** 2))


# ------------------------------------------------------- network trajectory


def network_trajectory(imu: ImuSequence, predict, orientations, start_pos, window: int = 200):
    """Dead-reckon by chaining the prior over back-to-back windows.

    ``predict(accel, gyro) -> (d, sigma)`` maps batched gravity-aligned
    windows ``(B, n, 3)`` to displacements ``(B, 3)`` and covariances; each is
    rotated back to the world by its window's yaw.  Returns ``(indices,
    positions, world_d, world_sigma)``, ``positions[i]`` being the position
    at sample ``indices[i]``.
    """
    starts = np.arange(0, len(imu) - window, window)
    if len(starts) == 0:
        raise ValueError(f"sequence of {len(imu)} samples is shorter than one window")
    gyro, accel, yaws = align_windows(imu, orientations, starts, window)
    d_hat, s_hat = predict(accel, gyro)
    Q = np.stack([rot_z(y) for y in yaws])
    d = np.einsum("bij,bj->bi", Q, d_hat)
    sig = Q @ s_hat @ np.swapaxes(Q, -1, -2)
    idx = np.append(starts, starts[-1] + window)
    return idx, cumulate(d, start_pos), d, sig


# ------------------------------------------------------------------ report


@dataclass
class MetricsReport:
    name: str
    ate: float
    rte: float
    aye: float
    mse: float = float("nan")

    def __post_init__(self):
        for k in ("ate", "rte", "aye", "mse"):
            v = getattr(self, k)
            if v < 0:
                raise ValueError(f"{k} must be non-negative, got {v}")


def match_times(t_pred, t_gt, tol: float = 1e-6) -> np.ndarray:
    """Indices into ``t_gt`` for every entry of ``t_pred``; raises when one is missing."""
    t_gt = np.asarray(t_gt, dtype=np.float64)
    t_pred = np.asarray(t_pred, dtype=np.float64)
    idx = np.clip(np.searchsorted(t_gt, t_pred), 0, len(t_gt) - 1)
    lower = np.clip(idx - 1, 0, len(t_gt) - 1)
    idx = np.where(np.abs(t_gt[lower] - t_pred) < np.abs(t_gt[idx] - t_pred), lower, idx)
    if np.any(np.abs(t_gt[idx] - t_pred) > tol):
        raise ValueError("timestamps of the estimate do not appear in the ground truth")
    return idx


def compare(name: str, pred: PoseSequence, gt: PoseSequence, dt_window: float = 60.0,
            literal: bool = False) -> MetricsReport:
    """Metrics of an estimated trajectory against ground truth sampled at the same times."""
    if len(gt) != len(pred) or not np.allclose(gt.t, pred.t):
        i = match_times(pred.t, gt.t)
        gt = PoseSequence(gt.t[i], gt.rot[i], gt.pos[i], gt.vel[i])
    yaw_p = np.array([euler_xyz(R)[2] for R in pred.rot])
    yaw_g = np.array([euler_xyz(R)[2] for R in gt.rot])
    step_ok = len(pred) > 1 and (pred.t[-1] - pred.t[0]) > dt_window
    return MetricsReport(
        name,
        ate(pred.pos, gt.pos, literal),
        rte(pred.pos, gt.pos, pred.t, dt_window, literal) if step_ok else float("nan"),
        aye(yaw_p, yaw_g, literal),
    )


def aggregate(reports: list[MetricsReport]) -> MetricsReport:
    """Mean over sequences, ignoring NaNs."""
    if not reports:
        raise ValueError("no reports")

    def mean(k):
        vals = np.array([getattr(r, k) for r in reports])
        return float(np.nanmean(vals)) if np.any(np.isfinite(vals)) else float("nan")

    return MetricsReport("mean", mean("ate"), mean("rte"), mean("aye"), mean("mse"))


FIELDS = ("name", "ate", "rte", "aye", "mse")


def report_csv(reports: list[MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FIELDS)
    for r in reports:
        d = asdict(r)
        w.writerow([d["name"]] + [f"{d[k]:.9g}" for k in FIELDS[1:]])
    return buf.getvalue()


def report_table(reports: list[MetricsReport]) -> str:
    width = max(8, *(len(r.name) for r in reports))
    lines = [f"{'sequence':<{width}}  {'ATE [m]':>10}  {'RTE [m]':>10}  {'AYE [deg]':>10}  {'MSE [m2]':>10}"]
    for r in reports:
        lines.append(f"{r.name:<{width}}  {r.ate:>10.4f}  {r.rte:>10.4f}  {r.aye:>10.4f}  {r.mse:>10.4g}")
    return "\n".join(lines)


__all__ = [
    "cumulate", "ate", "rte", "aye", "mse", "wrap_angle", "window_steps", "network_trajectory",
    "MetricsReport", "match_times", "compare", "aggregate", "report_csv", "report_table",
]
