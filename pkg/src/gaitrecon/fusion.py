"""Residual fusion network merging the forward and backward frame predictions."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .nn import Adam, AdamConfig, LayerSpec, build_stack
from .nn.checkpoint import expect_kind, load_state, read_checkpoint, save_checkpoint
from .nn.losses import bce_with_logits_loss
from .nn.training import Saturation, minibatches, resolve_dtype
from .silhouette import FRAME_SHAPE, FrameStatus, SilhouetteFrame

log = logging.getLogger(__name__)


def fusion_layers(block_count: int = 3, width: int = 16) -> tuple[LayerSpec, ...]:
    """conv(2->w) + relu, then residual blocks alternating with conv + relu, then conv(w->1) + sigmoid."""
    specs = [LayerSpec.conv2d(2, width), LayerSpec.relu()]
    for b in range(block_count):
        specs.append(LayerSpec.residual_block(width))
        if b < block_count - 1:
            specs += [LayerSpec.conv2d(width, width), LayerSpec.relu()]
    specs += [LayerSpec.conv2d(width, width), LayerSpec.relu(), LayerSpec.conv2d(width, 1), LayerSpec.sigmoid()]
    return tuple(specs)


@dataclass(frozen=True)
class FusionConfig:
    block_count: int = 3
    width: int = 16
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0
    dtype: str = "float32"
    saturation_tol: float = 1e-4
    saturation_patience: int = 5


class FusionModel(nn.Module):
    def __init__(self, block_count: int = 3, width: int = 16, seed: int = 0, dtype: str = "float32"):
        super().__init__()
        self.block_count = block_count
        self.width = width
        self.dtype_name = dtype
        self.layer_specs = fusion_layers(block_count, width)
        self.net = build_stack(self.layer_specs, torch.Generator().manual_seed(seed), resolve_dtype(dtype))

    @property
    def dtype(self):
        return self.net[0].weight.dtype

    def config_dict(self) -> dict:
        return {"block_count": self.block_count, "width": self.width, "dtype": self.dtype_name}

    def logits(self, f1: torch.Tensor, f2: torch.Tensor) -> torch.Tensor:
        """Two (N, 150, 200) binary maps -> (N, 150, 200) pre-sigmoid output."""
        if f1.shape != f2.shape or tuple(f1.shape[-2:]) != FRAME_SHAPE:
            raise ValueError(f"fusion inputs must both be (N, {FRAME_SHAPE[0]}, {FRAME_SHAPE[1]})")
        x = torch.stack([f1, f2], dim=1).to(self.dtype)
        return self.net[:-1](x).squeeze(1)

    def forward(self, f1, f2):
        return torch.sigmoid(self.logits(f1, f2))


def _binary(a) -> np.ndarray:
    a = np.asarray(a.pixels if isinstance(a, SilhouetteFrame) else a)
    if a.shape[-2:] != FRAME_SHAPE:
        raise ValueError(f"expected {FRAME_SHAPE} maps, got {a.shape}")
    return a


@torch.no_grad()
def fuse_batch(model: FusionModel, f1: np.ndarray, f2: np.ndarray) -> np.ndarray:
    """Fused probability maps for stacks of binarized predictions."""
    model.eval()
    f1, f2 = _binary(f1), _binary(f2)
    if f1.shape != f2.shape:
        raise ValueError(f"shape mismatch: {f1.shape} vs {f2.shape}")
    out = model(torch.from_numpy(np.ascontiguousarray(f1, dtype=np.float64)),
                torch.from_numpy(np.ascontiguousarray(f2, dtype=np.float64)))
    return out.to(torch.float64).numpy()


def fuse(model: FusionModel, f1, f2) -> SilhouetteFrame:
    """Fuse two binarized predictions; output >= 0.5 becomes foreground."""
    p = fuse_batch(model, _binary(f1)[None], _binary(f2)[None])[0]
    return SilhouetteFrame((p >= 0.5).astype(np.uint8), FrameStatus.RECONSTRUCTED)


def train_fusion(model: FusionModel | None, triples, config: FusionConfig = FusionConfig()):
    """Minimize summed BCE between fused output and ground truth.

    ``triples`` holds ``(f1, f2, truth)`` binary maps. A fresh model is built
    from ``config`` when ``model`` is None. Returns ``(model, history)``.
    """
    triples = list(triples)
    if not triples:
        raise ValueError("fusion training set is empty")
    if model is None:
        model = FusionModel(config.block_count, config.width, config.seed, config.dtype)
    dt = model.dtype
    f1 = torch.from_numpy(np.stack([_binary(t[0]) for t in triples]).astype(np.float64)).to(dt)
    f2 = torch.from_numpy(np.stack([_binary(t[1]) for t in triples]).astype(np.float64)).to(dt)
    gt = torch.from_numpy(np.stack([_binary(t[2]) for t in triples]).astype(np.float64)).to(dt)
    opt = Adam(model.parameters(), AdamConfig(learning_rate=config.learning_rate))
    rng = np.random.default_rng(config.seed)
    stop = Saturation(config.saturation_tol, config.saturation_patience)
    history = []
    model.train()
    for epoch in range(config.epochs):
        total = 0.0
        for idx in minibatches(len(gt), config.batch_size, rng):
            ix = torch.from_numpy(idx)
            opt.zero_grad()
            loss = bce_with_logits_loss(model.logits(f1[ix], f2[ix]), gt[ix])
            loss.backward()
            opt.step()
            total += float(loss.detach())
        history.append(total / gt.numel())
        log.info("fusion epoch %d: bce %.5f", epoch + 1, history[-1])
        if stop.update(history[-1]):
            break
    model.eval()
    return model, history


def save_fusion(model: FusionModel, path):
    return save_checkpoint(path, "fusion", model, model.config_dict(), model.layer_specs)


def load_fusion(path) -> FusionModel:
    header, tensors = read_checkpoint(path)
    expect_kind(header, "fusion")
    cfg = header["config"]
    model = FusionModel(cfg["block_count"], cfg["width"], 0, cfg["dtype"])
    load_state(model, tensors)
    return model.eval()
