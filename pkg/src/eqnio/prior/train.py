"""Window datasets, augmentation, and the two-stage MSE -> MLE training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..eqnet.autodiff import Tape
from ..group import YawFrame, lift3
from ..imu import ImuSequence, PoseSequence, align_windows, window_displacements
from ..so3 import exp_so3
from .losses import mle_canonical, mse_canonical
from .model import ModelConfig, PriorModel, model_tape

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


# ------------------------------------------------------------------- data


@dataclass
class WindowSet:
    """Gravity-aligned windows ``(N, n, 3)`` with displacement targets ``(N, 3)``."""

    accel: np.ndarray
    gyro: np.ndarray
    target: np.ndarray
    seq: np.ndarray = field(default=None)
    start: np.ndarray = field(default=None)

    def __post_init__(self):
        N = len(self.target)
        if self.seq is None:
            self.seq = np.zeros(N, dtype=int)
        if self.start is None:
            self.start = np.zeros(N, dtype=int)
        if self.accel.shape != self.gyro.shape or len(self.accel) != N:
            raise ValueError("window arrays disagree in shape")

    def __len__(self):
        return len(self.target)

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.accel[idx], self.gyro[idx], self.target[idx], self.seq[idx], self.start[idx])

    @classmethod
    def concat(cls, sets) -> "WindowSet":
        sets = list(sets)
        return cls(*(np.concatenate([getattr(s, k) for s in sets]) for k in ("accel", "gyro", "target", "seq", "start")))


def window_starts(length: int, n: int, stride: int) -> np.ndarray:
    # the target needs sample s + n, hence the strict bound
    return np.arange(0, length - n, stride)


def build_windows(poses: PoseSequence, imu: ImuSequence, n: int = 200, stride: int = 20, seq_id: int = 0,
                  orientations=None) -> WindowSet:
    """Windows aligned with ground-truth (or given) orientations, targets from ground truth."""
    starts = window_starts(len(imu), n, stride)
    rots = poses.rot if orientations is None else orientations
    gyro, accel, yaws = align_windows(imu, rots, starts, n)
    target = window_displacements(poses, starts, n, yaws)
    return WindowSet(accel, gyro, target, np.full(len(starts), seq_id), starts)


# ----------------------------------------------------------- augmentation


@dataclass
class AugmentConfig:
    yaw: bool = False
    reflect: bool = False
    tilt_deg: float = 0.0


def apply_frame(f: YawFrame, accel, gyro, target):
    """Act on a window and its target with one group element."""
    F3 = lift3(f)
    return accel @ F3.T, f.det * (gyro @ F3.T), target @ F3.T


def augment(accel, gyro, target, rng: np.random.Generator, cfg: AugmentConfig):
    """Per-window random yaw (optionally with reflection) and gravity tilt.

    The yaw element acts on inputs and target alike; the tilt perturbs only
    the inputs, imitating an imperfect gravity estimate.
    """
    if not (cfg.yaw or cfg.reflect or cfg.tilt_deg > 0):
        return accel, gyro, target
    accel, gyro, target = accel.copy(), gyro.copy(), target.copy()
    for b in range(len(accel)):
        if cfg.yaw or cfg.reflect:
            f = YawFrame.rotation(rng.uniform(-np.pi, np.pi) if cfg.yaw else 0.0)
            if cfg.reflect and rng.random() < 0.5:
                f = f @ YawFrame.reflection(0.0)
            accel[b], gyro[b], target[b] = apply_frame(f, accel[b], gyro[b], target[b])
        if cfg.tilt_deg > 0:
            phi = rng.uniform(-np.pi, np.pi)
            angle = np.deg2rad(rng.uniform(-cfg.tilt_deg, cfg.tilt_deg))
            R = exp_so3(angle * np.array([np.cos(phi), np.sin(phi), 0.0]))
            accel[b] = accel[b] @ R.T
            gyro[b] = gyro[b] @ R.T
    return accel, gyro, target


# ------------------------------------------------------------------- Adam


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            p = params[k]
            g = g.astype(p.dtype, copy=False)
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            v = self.v[k]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            step = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            params[k] = (p - step).astype(p.dtype, copy=False)

    def state(self) -> dict:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        out["adam.t"] = np.array(self.t, dtype=np.int64)
        return out

    def load(self, tensors: dict):
        self.m = {k[7:]: v.copy() for k, v in tensors.items() if k.startswith("adam.m.")}
        self.v = {k[7:]: v.copy() for k, v in tensors.items() if k.startswith("adam.v.")}
        self.t = int(tensors.get("adam.t", 0))


# --------------------------------------------------------------- training


@dataclass
class TrainConfig:
    epochs_mse: int = 10
    epochs_mle: int = 40
    lr: float = 1e-3
    batch: int = 64
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.epochs_mse < 0 or self.epochs_mle < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")

    @property
    def epochs(self) -> int:
        return self.epochs_mse + self.epochs_mle

    def stage(self, epoch: int) -> str:
        return "mse" if epoch < self.epochs_mse else "mle"


def loss_and_grads(model_cfg: ModelConfig, params: dict, accel, gyro, target, stage: str):
    """One forward/backward pass; returns ``(loss, grads)``."""
    tape = Tape()
    P = {k: tape.var(v) for k, v in params.items()}
    d_c, u, F, _ = model_tape(tape, model_cfg, P, accel, gyro)
    if stage == "mse":
        loss, g_dc, g_F = mse_canonical(d_c.value.astype(np.float64), F.value, target)
        g_u = np.zeros_like(u.value)
    else:
        loss, g_dc, g_u, g_F = mle_canonical(d_c.value.astype(np.float64), u.value.astype(np.float64),
                                             F.value, target, model_cfg.cov)
    dt = d_c.value.dtype
    grads_in = (g_dc.astype(dt), g_u.astype(dt), g_F)
    root = tape.apply(np.array(loss), (d_c, u, F), lambda g: tuple(g * x for x in grads_in))
    tape.backward(root)
    grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in P.items()}
    return loss, grads


@dataclass
class TrainResult:
    model: PriorModel
    history: list
    adam: Adam
    epochs_done: int


def train(data: WindowSet, model_cfg: ModelConfig, cfg: TrainConfig, model: PriorModel | None = None,
          adam: Adam | None = None, start_epoch: int = 0, on_epoch=None) -> TrainResult:
    """Adam over ``cfg.epochs`` epochs: MSE first, then MLE.

    Shuffling and augmentation draw from ``default_rng([seed, epoch])`` so a
    run resumed from a checkpoint (parameters, Adam state, epoch index)
    reproduces the uninterrupted run exactly.
    """
    model = model or PriorModel.init(model_cfg, cfg.seed)
    params = {k: v.copy() for k, v in model.params.items()}
    adam = adam or Adam(cfg.lr)
    adam.lr = cfg.lr
    history = []
    step = 0
    for epoch in range(start_epoch, cfg.epochs):
        stage = cfg.stage(epoch)
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(data))
        total, count = 0.0, 0
        for b, i in enumerate(range(0, len(order), cfg.batch)):
            idx = np.sort(order[i:i + cfg.batch])
            a, w, t = augment(data.accel[idx], data.gyro[idx], data.target[idx], rng, cfg.augment)
            loss, grads = loss_and_grads(model_cfg, params, a, w, t, stage)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} step {step} batch {b}")
            adam.step(params, grads)
            total += loss * len(idx)
            count += len(idx)
            step += 1
        row = {"epoch": epoch, "stage": stage, "loss": total / max(count, 1)}
        history.append(row)
        log.info("epoch %d %s loss %.6g", epoch, stage, row["loss"])
        if on_epoch is not None:
            on_epoch(epoch, PriorModel(model_cfg, params), adam, row)
    return TrainResult(PriorModel(model_cfg, params), history, adam, max(cfg.epochs, start_epoch))


def evaluate_mse(model: PriorModel, data: WindowSet, dtype=np.float64, batch: int = 64) -> float:
    out, _, _ = model.predict_many(data.accel, data.gyro, batch=batch, dtype=dtype)
    return float(np.mean((out.d - data.target) ** 2))
