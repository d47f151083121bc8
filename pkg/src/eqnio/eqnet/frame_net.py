"""The equivariant frame network.

Vector features pass through equivariant linear/conv layers, scalar features
through ordinary dense/conv layers of the same widths; the two streams only
meet inside the gated nonlinearities.  After mean pooling over time a fully
connected block and an output layer produce two 2-D vectors, which are
orthonormalized into the frame elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..canonical import FEATURE_COUNTS, SO2, FeatureBundle, check_mode
from .autodiff import Tape
from .layers import (t_add, t_dense, t_conv1d, t_eq_conv1d, t_eq_linear, t_gate, t_layernorm,
                     t_mean_time, t_vector_ln)

_DEFAULTS = {"so2": (128, 1), "o2": (64, 2)}


@dataclass
class FrameNetConfig:
    mode: str = SO2
    hidden: int = 0
    blocks: int = -1
    kernel: int = 16

    def __post_init__(self):
        self.mode = check_mode(self.mode)
        hidden, blocks = _DEFAULTS[self.mode]
        if self.hidden <= 0:
            self.hidden = hidden
        if self.blocks < 0:
            self.blocks = blocks
        if self.kernel < 1:
            raise ValueError("kernel must be >= 1")


def _uniform(rng, bound, shape, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _gate_params(prefix, C, rng, dtype):
    fan = 2 * C
    bound = np.sqrt(6.0 / fan)  # Kaiming-uniform
    return {
        f"{prefix}.W1": _uniform(rng, bound, (fan, fan), dtype),
        f"{prefix}.b1": np.zeros(fan, dtype),
        f"{prefix}.W2": _uniform(rng, bound, (fan, fan), dtype),
        f"{prefix}.b2": np.zeros(fan, dtype),
    }


def init_frame_params(cfg: FrameNetConfig, rng: np.random.Generator, dtype=np.float32) -> dict:
    cv, cs = FEATURE_COUNTS[cfg.mode]
    H, k = cfg.hidden, cfg.kernel
    so2 = cfg.mode == SO2
    p = {}

    def eq(prefix, c_in, c_out, taps=None):
        shape = (c_in, c_out) if taps is None else (taps, c_in, c_out)
        bound = 1.0 / np.sqrt(c_in * (taps or 1))
        names = ("W1", "W2") if taps is None else ("K1", "K2")
        p[f"{prefix}.{names[0]}"] = _uniform(rng, bound, shape, dtype)
        if so2:
            p[f"{prefix}.{names[1]}"] = _uniform(rng, bound, shape, dtype)

    eq("in", cv, H)
    p["in.Ws"] = _uniform(rng, np.sqrt(6.0 / cs), (cs, H), dtype)
    p["in.bs"] = np.zeros(H, dtype)
    p.update(_gate_params("gate0", H, rng, dtype))
    for i in range(cfg.blocks):
        b = f"block{i}"
        eq(b, H, H, taps=k)
        p[f"{b}.Ks"] = _uniform(rng, np.sqrt(6.0 / (k * H)), (k, H, H), dtype)
        p[f"{b}.bs"] = np.zeros(H, dtype)
        p.update(_gate_params(f"{b}.gate", H, rng, dtype))
        p[f"{b}.ln_g"] = np.ones(H, dtype)
        p[f"{b}.ln_b"] = np.zeros(H, dtype)
    eq("fc", H, H)
    p["fc.Ws"] = _uniform(rng, np.sqrt(6.0 / H), (H, H), dtype)
    p["fc.bs"] = np.zeros(H, dtype)
    p.update(_gate_params("fc.gate", H, rng, dtype))
    eq("out", H, 2)
    return p


def check_frame_params(params: dict, cfg: FrameNetConfig):
    ref = init_frame_params(cfg, np.random.default_rng(0), np.float64)
    missing = sorted(set(ref) - set(params))
    extra = sorted(set(params) - set(ref))
    if missing or extra:
        raise ValueError(f"frame parameters do not match config: missing {missing}, unexpected {extra}")
    for name, arr in ref.items():
        if np.shape(params[name]) != arr.shape:
            raise ValueError(f"parameter {name} has shape {np.shape(params[name])}, expected {arr.shape}")


def _gate(tape, P, prefix, v, s):
    return t_gate(tape, v, s, P[f"{prefix}.W1"], P[f"{prefix}.b1"], P[f"{prefix}.W2"], P[f"{prefix}.b2"])


def frame_net_tape(tape: Tape, P: dict, vectors, scalars, cfg: FrameNetConfig):
    """Record the network on ``tape``; ``P`` maps names to vars.

    ``vectors``: var ``(B, n, 2, C0v)``, ``scalars``: var ``(B, n, C0s)``.
    Returns a var of shape ``(B, 2, 2)`` whose columns are ``raw1, raw2``.
    """
    W2 = P.get  # second weights are absent in O(2) mode
    v = t_eq_linear(tape, vectors, P["in.W1"], W2("in.W2"))
    s = t_dense(tape, scalars, P["in.Ws"], P["in.bs"])
    v, s = _gate(tape, P, "gate0", v, s)
    for i in range(cfg.blocks):
        b = f"block{i}"
        v = t_eq_conv1d(tape, v, P[f"{b}.K1"], W2(f"{b}.K2"))
        s = t_conv1d(tape, s, P[f"{b}.Ks"], P[f"{b}.bs"])
        v, s = _gate(tape, P, f"{b}.gate", v, s)
        v = t_vector_ln(tape, v)
        s = t_layernorm(tape, s, P[f"{b}.ln_g"], P[f"{b}.ln_b"])
    v = t_mean_time(tape, v)
    s = t_mean_time(tape, s)
    v = t_eq_linear(tape, v, P["fc.W1"], W2("fc.W2"))
    s = t_dense(tape, s, P["fc.Ws"], P["fc.bs"])
    v, s = _gate(tape, P, "fc.gate", v, s)
    v = t_vector_ln(tape, v)
    # the scalar stream ends here: only vectors reach the output layer
    return t_eq_linear(tape, v, P["out.W1"], W2("out.W2"))


def frame_net_forward(fb: FeatureBundle, params: dict, cfg: FrameNetConfig | str, dtype=None):
    """Plain forward pass; returns ``(raw1, raw2)`` each shaped ``(..., 2)``."""
    if isinstance(cfg, str):
        cfg = FrameNetConfig(mode=cfg)
    vec, sca = np.asarray(fb.vectors), np.asarray(fb.scalars)
    cv, cs = FEATURE_COUNTS[cfg.mode]
    if vec.shape[-1] != cv or sca.shape[-1] != cs:
        raise ValueError(f"feature bundle does not match mode {cfg.mode}")
    dtype = dtype or next(iter(params.values())).dtype
    lead = vec.shape[:-3]
    n = vec.shape[-3]
    tape = Tape(record=False)
    P = {k: tape.const(np.asarray(a, dtype)) for k, a in params.items()}
    raw = frame_net_tape(tape, P,
                         tape.const(vec.reshape((-1, n, 2, cv)).astype(dtype)),
                         tape.const(sca.reshape((-1, n, cs)).astype(dtype)), cfg).value
    raw = raw.reshape(lead + (2, 2))
    return raw[..., :, 0], raw[..., :, 1]


def count_params(params: dict) -> int:
    return int(sum(np.size(a) for a in params.values()))
