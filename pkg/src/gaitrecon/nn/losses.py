from __future__ import annotations

import torch
import torch.nn.functional as F

BCE_EPS = 1e-7


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def bce_loss(prediction: torch.Tensor, target: torch.Tensor, eps: float = BCE_EPS) -> torch.Tensor:
    """Pixel-wise binary cross-entropy, summed over pixels and batch items.

    Predictions are clamped to ``[eps, 1 - eps]`` so the logs stay finite.
    """
    _same_shape(prediction, target)
    p = prediction.clamp(eps, 1.0 - eps)
    return -(target * torch.log(p) + (1.0 - target) * torch.log1p(-p)).sum()


def bce_with_logits_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Same summed BCE evaluated on pre-sigmoid values (stable when saturated)."""
    _same_shape(logits, target)
    return F.binary_cross_entropy_with_logits(logits, target, reduction="sum")


def mse_loss(prediction: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _same_shape(prediction, target)
    return ((prediction - target) ** 2).mean()
