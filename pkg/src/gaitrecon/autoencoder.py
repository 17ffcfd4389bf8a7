"""Two-layer convolutional autoencoder producing 15200-d frame embeddings."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn

from .nn import Adam, AdamConfig, LayerSpec, build_stack
from .nn.checkpoint import expect_kind, load_state, read_checkpoint, save_checkpoint
from .nn.losses import bce_with_logits_loss
from .nn.training import Saturation, minibatches, resolve_dtype
from .silhouette import FRAME_SHAPE, SilhouetteFrame

log = logging.getLogger(__name__)

CODE_SHAPE = (8, 38, 50)
EMBEDDING_DIM = 8 * 38 * 50  # 15200

ENCODER_LAYERS = (
    LayerSpec.conv2d(1, 32), LayerSpec.relu(), LayerSpec.maxpool2d(2),
    LayerSpec.conv2d(32, 8), LayerSpec.relu(), LayerSpec.maxpool2d(2),
)
DECODER_LAYERS = (
    LayerSpec.upsample2d_nearest(2), LayerSpec.conv2d(8, 8), LayerSpec.relu(),
    LayerSpec.upsample2d_nearest(2), LayerSpec.conv2d(8, 32), LayerSpec.relu(),
    LayerSpec.crop_rows(1), LayerSpec.conv2d(32, 1), LayerSpec.sigmoid(),
)


@dataclass(frozen=True)
class AutoencoderConfig:
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0
    dtype: str = "float32"
    saturation_tol: float = 1e-4
    saturation_patience: int = 5


class AutoencoderModel(nn.Module):
    def __init__(self, seed: int = 0, dtype: str = "float32"):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.dtype_name = dtype
        dt = resolve_dtype(dtype)
        self.encoder = build_stack(ENCODER_LAYERS, gen, dt)
        self.decoder = build_stack(DECODER_LAYERS, gen, dt)
        self._check_shapes()

    @property
    def dtype(self) -> torch.dtype:
        return self.encoder[0].weight.dtype

    def _check_shapes(self):
        with torch.no_grad():
            x = torch.zeros(1, 1, *FRAME_SHAPE, dtype=self.dtype)
            h = self.encoder[:3](x)
            assert tuple(h.shape[1:]) == (32, 75, 100), h.shape
            z = self.encoder[3:](h)
            assert tuple(z.shape[1:]) == CODE_SHAPE, z.shape
            assert z[0].numel() == EMBEDDING_DIM
            y = self.decoder[:6](z)
            assert tuple(y.shape[1:]) == (32, 152, 200), y.shape
            out = self.decoder[6:](y)
            assert tuple(out.shape[1:]) == (1, *FRAME_SHAPE), out.shape

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        """(N, 150, 200) or (N, 1, 150, 200) binary frames -> (N, 15200)."""
        if x.dim() == 3:
            x = x.unsqueeze(1)
        if tuple(x.shape[1:]) != (1, *FRAME_SHAPE):
            raise ValueError(f"expected frames of shape {FRAME_SHAPE}, got {tuple(x.shape[-2:])}")
        return self.encoder(x.to(self.dtype)).flatten(1)

    def logits(self, e: torch.Tensor) -> torch.Tensor:
        """(N, 15200) -> (N, 150, 200) pre-sigmoid decoder output."""
        if e.dim() != 2 or e.shape[1] != EMBEDDING_DIM:
            raise ValueError(f"embedding must have dimension {EMBEDDING_DIM}, got {tuple(e.shape)}")
        return self.decoder[:-1](e.to(self.dtype).reshape(-1, *CODE_SHAPE)).squeeze(1)

    def reconstruct(self, e: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(e))

    def forward(self, x):
        return self.logits(self.embed(x))


def _as_batch(frames) -> torch.Tensor:
    return torch.from_numpy(np.stack([f.pixels if isinstance(f, SilhouetteFrame) else np.asarray(f) for f in frames]))


@torch.no_grad()
def encode_frames(model: AutoencoderModel, frames, chunk: int = 32) -> np.ndarray:
    """Embeddings of many frames as an (N, 15200) float64 array."""
    model.eval()
    out = []
    for i in range(0, len(frames), chunk):
        out.append(model.embed(_as_batch(frames[i:i + chunk])).to(torch.float64).numpy())
    return np.concatenate(out) if out else np.zeros((0, EMBEDDING_DIM))


def encode(model: AutoencoderModel, frame: SilhouetteFrame) -> np.ndarray:
    if tuple(frame.pixels.shape) != FRAME_SHAPE:
        raise ValueError(f"frame must be {FRAME_SHAPE}, got {frame.pixels.shape}")
    return encode_frames(model, [frame])[0]


@torch.no_grad()
def decode_batch(model: AutoencoderModel, embeddings: np.ndarray) -> np.ndarray:
    model.eval()
    e = torch.as_tensor(np.asarray(embeddings, dtype=np.float64))
    return model.reconstruct(e).to(torch.float64).numpy()


def decode(model: AutoencoderModel, e) -> np.ndarray:
    """Decode one embedding to a 150x200 grid with values in (0, 1)."""
    e = np.asarray(e, dtype=np.float64)
    if e.shape != (EMBEDDING_DIM,):
        raise ValueError(f"embedding must have dimension {EMBEDDING_DIM}, got {e.shape}")
    return decode_batch(model, e[None])[0]


def train_autoencoder(corpus, config: AutoencoderConfig = AutoencoderConfig()):
    """Minimize summed pixel-wise BCE with Adam.

    Returns ``(model, history)`` where ``history`` holds the epoch mean
    per-pixel BCE. Stops early once the loss saturates.
    """
    if not corpus:
        raise ValueError("autoencoder corpus is empty")
    model = AutoencoderModel(config.seed, config.dtype)
    x = _as_batch(corpus).to(model.dtype)
    opt = Adam(model.parameters(), AdamConfig(learning_rate=config.learning_rate))
    rng = np.random.default_rng(config.seed)
    stop = Saturation(config.saturation_tol, config.saturation_patience)
    history = []
    model.train()
    for epoch in range(config.epochs):
        total = 0.0
        for idx in minibatches(len(x), config.batch_size, rng):
            batch = x[torch.from_numpy(idx)]
            opt.zero_grad()
            loss = bce_with_logits_loss(model(batch), batch)
            loss.backward()
            opt.step()
            total += float(loss.detach())
        history.append(total / x.numel())
        log.info("autoencoder epoch %d: bce %.5f", epoch + 1, history[-1])
        if stop.update(history[-1]):
            break
    model.eval()
    return model, history


def save_autoencoder(model: AutoencoderModel, path):
    cfg = {"dtype": model.dtype_name}
    return save_checkpoint(path, "autoencoder", model, cfg, ENCODER_LAYERS + DECODER_LAYERS)


def load_autoencoder(path) -> AutoencoderModel:
    header, tensors = read_checkpoint(path)
    expect_kind(header, "autoencoder")
    model = AutoencoderModel(0, header["config"]["dtype"])
    load_state(model, tensors)
    return model.eval()
