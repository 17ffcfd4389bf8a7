"""Differentiable layer substrate shared by every trainable model."""
from .checkpoint import CheckpointError, read_checkpoint, save_checkpoint
from .layers import LAYER_KINDS, LayerSpec, ShapeError, backward, build_layer, build_stack, forward
from .losses import bce_loss, bce_with_logits_loss, mse_loss
from .optim import Adam, AdamConfig, AdamState, adam_step

__all__ = [
    "Adam", "AdamConfig", "AdamState", "CheckpointError", "LAYER_KINDS", "LayerSpec",
    "ShapeError", "adam_step", "backward", "bce_loss", "bce_with_logits_loss", "build_layer",
    "build_stack", "forward", "mse_loss", "read_checkpoint", "save_checkpoint",
]
