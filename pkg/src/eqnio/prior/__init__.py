"""Displacement prior: canonicalized backbone, losses, augmentation, training."""

from .backbone import BackboneConfig, backbone_forward, backbone_tape, init_backbone_params
from .frames import canon_channels, match_noneq_width, noneq_param_count, pca_frames
from .losses import loss_mle, loss_mse, loss_mse_vjp, mle_canonical, mse_canonical, pearson_cov
from .model import ModelConfig, PriorModel, init_model_params, model_tape, outputs_to_world
from .train import (Adam, AugmentConfig, TrainConfig, TrainingDiverged, TrainResult, WindowSet, apply_frame,
                    augment, build_windows, evaluate_mse, loss_and_grads, train, window_starts)

__all__ = [
    "BackboneConfig", "backbone_forward", "backbone_tape", "init_backbone_params", "canon_channels",
    "match_noneq_width", "noneq_param_count", "pca_frames", "loss_mle", "loss_mse", "loss_mse_vjp",
    "mle_canonical", "mse_canonical", "pearson_cov", "ModelConfig", "PriorModel", "init_model_params",
    "model_tape", "outputs_to_world", "Adam", "AugmentConfig", "TrainConfig", "TrainingDiverged",
    "TrainResult", "WindowSet", "apply_frame", "augment", "build_windows", "evaluate_mse", "loss_and_grads",
    "train", "window_starts",
]
