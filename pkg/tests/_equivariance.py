"""Shared oracles for the equivariance suites (unit tests and acceptance)."""

import numpy as np

from eqnio.canonical import extract_features, orthonormalize_batch
from eqnio.eqnet.frame_net import FrameNetConfig, frame_net_forward, init_frame_params
from eqnio.eqnet.layers import eq_conv1d_fwd, eq_linear_fwd, gate_fwd, mean_time_fwd, vector_ln_fwd
from eqnio.group import act_accel, act_cov, act_omega, sample_frames
from eqnio.prior.model import ModelConfig, PriorModel


def act_vec(f, v):
    """Group action on ``(..., 2, C)`` vector features."""
    return np.einsum("ij,...jc->...ic", f.m, v)


def group_elements(mode, rng, count=16):
    return sample_frames(rng, count, reflections=(mode == "o2"))


def _weights(rng, mode, shape, dtype):
    W1 = rng.normal(size=shape).astype(dtype) / np.sqrt(shape[-2])
    W2 = rng.normal(size=shape).astype(dtype) / np.sqrt(shape[-2]) if mode == "so2" else None
    return W1, W2


def layer_residuals(mode, dtype, rng, frames, B=2, n=12, C=5):
    """Max equivariance residual of every primitive layer for one parameter draw."""
    v = rng.normal(size=(B, n, 2, C)).astype(dtype)
    s = rng.normal(size=(B, n, C)).astype(dtype)
    W1, W2 = _weights(rng, mode, (C, 4), dtype)
    K1, K2 = _weights(rng, mode, (3, C, 4), dtype)
    G = [rng.normal(size=(2 * C, 2 * C)).astype(dtype) / np.sqrt(2 * C) for _ in range(2)]
    gb = [rng.normal(size=2 * C).astype(dtype) * 0.1 for _ in range(2)]

    layers = {
        "eq_linear": lambda x, y: (eq_linear_fwd(x, W1, W2)[0], None),
        "eq_conv1d": lambda x, y: (eq_conv1d_fwd(x, K1, K2)[0], None),
        "eq_conv1d_stride2": lambda x, y: (eq_conv1d_fwd(x, K1, K2, stride=2)[0], None),
        "gate": lambda x, y: gate_fwd(x, y, G[0], gb[0], G[1], gb[1])[0],
        "vector_ln": lambda x, y: (vector_ln_fwd(x)[0], None),
        "mean_pool": lambda x, y: (mean_time_fwd(x)[0], None),
    }
    out = {}
    for name, fn in layers.items():
        base_v, base_s = fn(v, s)
        worst = 0.0
        for f in frames:
            got_v, got_s = fn(act_vec(f, v), s)
            worst = max(worst, float(np.max(np.abs(got_v - act_vec(f, base_v)))))
            if base_s is not None:
                worst = max(worst, float(np.max(np.abs(got_s - base_s))))
        out[name] = worst
    return out


def random_windows(rng, B, n):
    accel = rng.normal(size=(B, n, 3)) + np.array([0.0, 0.0, 9.81])
    gyro = rng.normal(size=(B, n, 3))
    return accel, gyro


def act_windows(f, accel, gyro):
    return act_accel(f, accel), act_omega(f, gyro)


def frame_net_residual(mode, dtype, rng, frames, n=50, cfg=None):
    cfg = cfg or FrameNetConfig(mode)
    params = init_frame_params(cfg, rng, dtype)
    accel, gyro = random_windows(rng, 1, n)
    # all transformed copies go through one batched call
    A = np.concatenate([accel] + [act_accel(f, accel) for f in frames])
    W = np.concatenate([gyro] + [act_omega(f, gyro) for f in frames])
    r1, r2 = frame_net_forward(extract_features((A, W), mode), params, cfg, dtype)
    raw = np.stack([r1, r2], axis=-1).astype(np.float64)
    worst = 0.0
    for q, f in enumerate(frames, start=1):
        worst = max(worst, float(np.max(np.abs(raw[q] - f.m @ raw[0]))))
    frames_out, bad = orthonormalize_batch(raw[..., 0], raw[..., 1], mode)
    ortho = 0.0
    for q, f in enumerate(frames, start=1):
        if not bad[0]:
            ortho = max(ortho, float(np.max(np.abs(frames_out[q] - f.m @ frames_out[0]))))
    return worst, ortho


def predict_residual(mode, dtype, rng, frames, n=50, seed=0, model_cfg=None, windows=None):
    """Residuals of ``d`` and ``sigma``; ``windows=(accel, gyro)`` of shape ``(1, n, 3)`` overrides the random input."""
    cfg = model_cfg or ModelConfig(mode=mode, window=n, dtype=np.dtype(dtype).name)
    model = PriorModel.init(cfg, seed)
    accel, gyro = windows if windows is not None else random_windows(rng, 1, n)
    A = np.concatenate([accel] + [act_accel(f, accel) for f in frames])
    W = np.concatenate([gyro] + [act_omega(f, gyro) for f in frames])
    out, F, bad = model.predict_batch(A, W, dtype=dtype)
    worst_d = worst_s = 0.0
    for q, f in enumerate(frames, start=1):
        worst_d = max(worst_d, float(np.max(np.abs(out.d[q] - act_accel(f, out.d[0])))))
        worst_s = max(worst_s, float(np.max(np.abs(out.sigma[q] - act_cov(f, out.sigma[0])))))
    return worst_d, worst_s, out, F
