"""End-to-end displacement prior: frame, canonicalization, backbone, back-mapping."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..canonical import PriorOutput, check_mode, decanonicalize, extract_features
from ..eqnet.autodiff import Tape
from ..eqnet.frame_net import FrameNetConfig, count_params, frame_net_tape, init_frame_params
from ..group import YawFrame
from ..imu import ImuWindow
from .backbone import BackboneConfig, backbone_tape, init_backbone_params
from .frames import (FRAME_KINDS, init_noneq_params, match_noneq_width, noneq_frame_tape, pca_frames,
                     t_canon_channels, t_orthonormalize, to_world)
from .losses import COV_KINDS, pearson_cov

log = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    mode: str = "so2"
    frame: str = "eq"  # eq | noneq | pca | identity
    cov: str = "eq"  # eq | invariant | pearson
    window: int = 200
    frame_hidden: int = 0  # 0 -> mode default
    frame_blocks: int = -1
    frame_kernel: int = 16
    noneq_hidden: int = 0  # 0 -> matched to the equivariant frame net
    width: int = 32
    blocks: int = 4
    kernel: int = 7
    dtype: str = "float32"

    def __post_init__(self):
        self.mode = check_mode(self.mode)
        if self.frame not in FRAME_KINDS:
            raise ValueError(f"frame must be one of {FRAME_KINDS}, got {self.frame!r}")
        if self.cov not in COV_KINDS:
            raise ValueError(f"cov must be one of {COV_KINDS}, got {self.cov!r}")
        if self.window < 1:
            raise ValueError("window must be positive")
        np.dtype(self.dtype)

    @property
    def frame_cfg(self) -> FrameNetConfig:
        return FrameNetConfig(self.mode, self.frame_hidden, self.frame_blocks, self.frame_kernel)

    @property
    def backbone_cfg(self) -> BackboneConfig:
        return BackboneConfig(self.width, self.blocks, self.kernel, 6, 6 if self.cov == "pearson" else 3)

    def resolved_noneq_hidden(self) -> int:
        if self.noneq_hidden > 0:
            return self.noneq_hidden
        fc = self.frame_cfg
        target = count_params(init_frame_params(fc, np.random.default_rng(0), np.float32))
        return match_noneq_width(target, fc.blocks, fc.kernel)

    def to_strings(self) -> dict:
        return {k: str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_strings(cls, d: dict) -> "ModelConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for k, v in d.items():
            if k not in types:
                continue
            kw[k] = int(v) if types[k] in ("int", int) else v
        return cls(**kw)


def init_model_params(cfg: ModelConfig, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    dtype = np.dtype(cfg.dtype)
    params = {}
    if cfg.frame == "eq":
        sub = init_frame_params(cfg.frame_cfg, rng, dtype)
        params.update({f"frame.{k}": v for k, v in sub.items()})
    elif cfg.frame == "noneq":
        fc = cfg.frame_cfg
        sub = init_noneq_params(cfg.resolved_noneq_hidden(), fc.blocks, fc.kernel, rng, dtype)
        params.update({f"frame.{k}": v for k, v in sub.items()})
    sub = init_backbone_params(cfg.backbone_cfg, rng, dtype)
    params.update({f"bb.{k}": v for k, v in sub.items()})
    return params


def _sub(P: dict, prefix: str) -> dict:
    n = len(prefix)
    return {k[n:]: v for k, v in P.items() if k.startswith(prefix)}


def model_tape(tape: Tape, cfg: ModelConfig, P: dict, accel, gyro):
    """Record the prior on ``tape``.

    ``accel``/``gyro``: float64 arrays ``(B, n, 3)`` of gravity-aligned windows.
    Returns ``(d_c, u, F, degenerate)``: canonical displacement and log-std
    vars, the frame var ``(B, 2, 2)`` and the degenerate-frame mask.
    """
    dtype = np.dtype(cfg.dtype) if not P else next(iter(P.values())).value.dtype
    B = len(accel)
    if cfg.frame == "eq":
        fb = extract_features((accel, gyro), cfg.mode)
        raw = frame_net_tape(tape, _sub(P, "frame."), tape.const(fb.vectors.astype(dtype)),
                             tape.const(fb.scalars.astype(dtype)), cfg.frame_cfg)
        F, bad = t_orthonormalize(tape, raw, cfg.mode)
    elif cfg.frame == "noneq":
        x = np.concatenate([accel, gyro], axis=-1).astype(dtype)
        raw = noneq_frame_tape(tape, _sub(P, "frame."), tape.const(x), cfg.frame_cfg.blocks)
        F, bad = t_orthonormalize(tape, raw, cfg.mode)
    elif cfg.frame == "pca":
        frames, bad = pca_frames(accel)
        F = tape.const(frames)
    else:
        F, bad = tape.const(np.repeat(np.eye(2)[None], B, axis=0)), np.zeros(B, dtype=bool)
    x = t_canon_channels(tape, F, accel, gyro, cfg.mode, dtype)
    d_c, u = backbone_tape(tape, _sub(P, "bb."), x, cfg.backbone_cfg)
    return d_c, u, F, bad


def outputs_to_world(cfg: ModelConfig, d_c, u, F) -> PriorOutput:
    """Map canonical network outputs back to the gravity-aligned frame."""
    d_c = np.asarray(d_c, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if cfg.cov == "eq":
        return decanonicalize(d_c, u, F)
    d = to_world(F, d_c)
    if cfg.cov == "invariant":
        sigma = np.zeros(u.shape[:-1] + (3, 3))
        idx = np.arange(3)
        sigma[..., idx, idx] = np.exp(2.0 * u)
        return PriorOutput(d, sigma)
    S, _, _ = pearson_cov(u)
    F3 = np.zeros(F.shape[:-2] + (3, 3))
    F3[..., :2, :2] = F
    F3[..., 2, 2] = 1.0
    return PriorOutput(d, F3 @ S @ np.swapaxes(F3, -1, -2))


class PriorModel:
    """Configuration plus parameters, with batched inference helpers."""

    def __init__(self, cfg: ModelConfig, params: dict):
        self.cfg = cfg
        self.params = params
        self.degenerate_frames = 0

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int = 0) -> "PriorModel":
        return cls(cfg, init_model_params(cfg, seed))

    def n_params(self, prefix: str = "") -> int:
        return count_params({k: v for k, v in self.params.items() if k.startswith(prefix)})

    def predict_batch(self, accel, gyro, dtype=None):
        """Returns ``(PriorOutput, frames (B, 2, 2), degenerate (B,))``.

        ``dtype`` selects the inference precision (parameters are cast);
        ``None`` keeps the stored precision.
        """
        accel = np.asarray(accel, dtype=np.float64)
        gyro = np.asarray(gyro, dtype=np.float64)
        if accel.ndim != 3 or accel.shape != gyro.shape or accel.shape[-1] != 3:
            raise ValueError(f"expected (B, n, 3) windows, got {accel.shape} and {gyro.shape}")
        tape = Tape(record=False)
        P = {k: tape.const(v if dtype is None else np.asarray(v, dtype)) for k, v in self.params.items()}
        d_c, u, F, bad = model_tape(tape, self.cfg, P, accel, gyro)
        n_bad = int(np.sum(bad))
        if n_bad:
            self.degenerate_frames += n_bad
            log.warning("%d degenerate frame(s), identity substituted", n_bad)
        return outputs_to_world(self.cfg, d_c.value, u.value, F.value), F.value, bad

    def predict_many(self, accel, gyro, batch: int = 64, dtype=None, workers: int | None = None):
        """Chunked :meth:`predict_batch`; chunks run on a thread pool of ``workers``."""
        if workers is None:
            workers = int(os.environ.get("EQNIO_THREADS", "1") or 1)
        chunks = [slice(i, i + batch) for i in range(0, len(accel), batch)]
        run = lambda sl: self.predict_batch(accel[sl], gyro[sl], dtype)  # noqa: E731
        if workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run, chunks))
        else:
            results = [run(sl) for sl in chunks]
        if not results:
            return PriorOutput(np.zeros((0, 3)), np.zeros((0, 3, 3))), np.zeros((0, 2, 2)), np.zeros(0, bool)
        d = np.concatenate([r[0].d for r in results])
        s = np.concatenate([r[0].sigma for r in results])
        return PriorOutput(d, s), np.concatenate([r[1] for r in results]), np.concatenate([r[2] for r in results])

    def predict(self, win: ImuWindow, dtype=None) -> tuple[PriorOutput, YawFrame, bool]:
        out, F, bad = self.predict_batch(win.accel[None], win.gyro[None], dtype)
        return PriorOutput(out.d[0], out.sigma[0]), YawFrame(F[0]), bool(bad[0])

    def as_prior(self, dtype=np.float64):
        """Callable ``ImuWindow -> (d, sigma)`` for :func:`eqnio.ekf.run_filter`."""
        def prior(win: ImuWindow):
            out, _, _ = self.predict_batch(win.accel[None], win.gyro[None], dtype)
            return out.d[0], out.sigma[0]
        return prior
