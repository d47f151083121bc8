"""Residual 1-D conv backbone on canonicalized ``n x 6`` channels.

stem conv -> GELU -> residual blocks ``x <- gelu(x + conv(gelu(conv(x))))``
-> mean over time -> two linear heads (displacement, log-std).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..eqnet.autodiff import Tape
from ..eqnet.layers import t_add, t_conv1d, t_dense, t_gelu, t_mean_time


@dataclass
class BackboneConfig:
    width: int = 32
    blocks: int = 4
    kernel: int = 7
    in_channels: int = 6
    u_dim: int = 3  # 6 for the Pearson parameterization


def init_backbone_params(cfg: BackboneConfig, rng: np.random.Generator, dtype=np.float32) -> dict:
    W, k = cfg.width, cfg.kernel

    def kaiming(shape, fan_in):
        b = np.sqrt(6.0 / fan_in)
        return rng.uniform(-b, b, size=shape).astype(dtype)

    p = {"stem.K": kaiming((k, cfg.in_channels, W), k * cfg.in_channels), "stem.b": np.zeros(W, dtype)}
    for i in range(cfg.blocks):
        for j in (1, 2):
            p[f"block{i}.K{j}"] = kaiming((k, W, W), k * W)
            p[f"block{i}.b{j}"] = np.zeros(W, dtype)
        # start residual branches small so the initial net is close to the stem
        p[f"block{i}.K2"] *= np.asarray(0.1, dtype)
    head = 1.0 / np.sqrt(W)
    p["head_d.W"] = rng.uniform(-head, head, size=(W, 3)).astype(dtype)
    p["head_d.b"] = np.zeros(3, dtype)
    p["head_u.W"] = rng.uniform(-0.1 * head, 0.1 * head, size=(W, cfg.u_dim)).astype(dtype)
    p["head_u.b"] = np.zeros(cfg.u_dim, dtype)
    return p


def backbone_tape(tape: Tape, P: dict, x, cfg: BackboneConfig):
    """``x``: var ``(B, n, 6)``; returns vars ``(d_c (B, 3), u (B, u_dim))``."""
    h = t_gelu(tape, t_conv1d(tape, x, P["stem.K"], P["stem.b"]))
    for i in range(cfg.blocks):
        r = t_gelu(tape, t_conv1d(tape, h, P[f"block{i}.K1"], P[f"block{i}.b1"]))
        r = t_conv1d(tape, r, P[f"block{i}.K2"], P[f"block{i}.b2"])
        h = t_gelu(tape, t_add(tape, h, r))
    h = t_mean_time(tape, h)
    return t_dense(tape, h, P["head_d.W"], P["head_d.b"]), t_dense(tape, h, P["head_u.W"], P["head_u.b"])


def backbone_forward(channels, params: dict, cfg: BackboneConfig | None = None):
    """Plain forward; ``channels`` is ``(n, 6)`` or ``(B, n, 6)``."""
    cfg = cfg or BackboneConfig(blocks=sum(1 for k in params if k.endswith(".K1")),
                                width=params["stem.b"].shape[0], kernel=params["stem.K"].shape[0],
                                u_dim=params["head_u.b"].shape[0])
    dtype = params["stem.K"].dtype
    x = np.asarray(channels)
    single = x.ndim == 2
    tape = Tape(record=False)
    P = {k: tape.const(v) for k, v in params.items()}
    d, u = backbone_tape(tape, P, tape.const((x[None] if single else x).astype(dtype)), cfg)
    if single:
        return d.value[0], u.value[0]
    return d.value, u.value
