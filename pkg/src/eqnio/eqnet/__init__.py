"""Equivariant layers, the frame network, and a small reverse-mode tape."""

from .autodiff import Tape, Var
from .basis import commutation_residual, solve_weight_basis
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .frame_net import FrameNetConfig, count_params, frame_net_forward, frame_net_tape, init_frame_params
from .layers import (conv1d_fwd, conv1d_vjp, eq_conv1d_fwd, eq_conv1d_vjp, eq_linear_fwd, eq_linear_vjp,
                     gate_fwd, gate_vjp, vector_ln_fwd, vector_ln_vjp)

__all__ = [
    "Tape", "Var", "solve_weight_basis", "commutation_residual", "save_checkpoint", "load_checkpoint",
    "CheckpointError", "FrameNetConfig", "init_frame_params", "frame_net_forward", "frame_net_tape",
    "count_params", "eq_linear_fwd", "eq_linear_vjp", "eq_conv1d_fwd", "eq_conv1d_vjp", "conv1d_fwd",
    "conv1d_vjp", "gate_fwd", "gate_vjp", "vector_ln_fwd", "vector_ln_vjp",
]
