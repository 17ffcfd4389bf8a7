"""Forward (M1) and backward (M2) LSTM embedding predictors.

Each model reads five neighbouring frame embeddings through two stacked
LSTM layers and maps the last top-layer output to a 15200-d embedding.
Embeddings are standardized on the way in (per-dimension mean, one global
scale fitted on the training targets) and mapped back on the way out.
Raw autoencoder codes share a large common offset that otherwise drives
every window to the same hidden state, so the model can only learn the mean.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn

from .autoencoder import EMBEDDING_DIM, AutoencoderModel, encode_frames
from .nn import Adam, AdamConfig, LayerSpec, build_layer
from .nn.checkpoint import expect_kind, load_state, read_checkpoint, save_checkpoint
from .nn.losses import mse_loss
from .nn.training import Saturation, minibatches, resolve_dtype
from .silhouette import FrameStatus, GaitSequence

log = logging.getLogger(__name__)

CONTEXT = 5
DIRECTIONS = ("forward", "backward")


def context_indices(target: int, direction: str) -> list[int]:
    """Frame indices feeding the prediction of ``target``, in temporal order."""
    if direction == "forward":
        return list(range(target - CONTEXT, target))
    if direction == "backward":
        return list(range(target + 1, target + CONTEXT + 1))
    raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")


@dataclass(frozen=True)
class ContextWindow:
    """Five embeddings preceding (forward) or following (backward) ``target_index``.

    Embeddings are stored in temporal order. Sources are derived from the
    target, so the target frame can never be part of its own context.
    """

    embeddings: np.ndarray
    direction: str
    target_index: int

    def __post_init__(self):
        e = np.asarray(self.embeddings, dtype=np.float64)
        if e.shape != (CONTEXT, EMBEDDING_DIM):
            raise ValueError(f"context must be {CONTEXT} embeddings of dim {EMBEDDING_DIM}, got shape {e.shape}")
        context_indices(self.target_index, self.direction)
        object.__setattr__(self, "embeddings", e)

    @property
    def source_indices(self) -> list[int]:
        return context_indices(self.target_index, self.direction)

    @classmethod
    def gather(cls, embeddings, target_index: int, direction: str) -> "ContextWindow":
        """Pick the window for ``target_index`` out of a per-frame mapping/array."""
        idx = context_indices(target_index, direction)
        if idx[0] < 0:
            raise IndexError(f"no {direction} context for frame {target_index}")
        try:
            rows = [embeddings[i] for i in idx]
        except (IndexError, KeyError):
            raise IndexError(f"no {direction} context for frame {target_index}") from None
        return cls(np.stack(rows), direction, target_index)


@dataclass(frozen=True)
class PredictorConfig:
    hidden: int = 1024
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    dtype: str = "float32"
    reverse_backward: bool = True
    standardize: bool = True
    saturation_tol: float = 1e-4
    saturation_patience: int = 5


class LstmPredictor(nn.Module):
    def __init__(self, direction: str, hidden: int = 1024, seed: int = 0, dtype: str = "float32",
                 reverse_backward: bool = True):
        super().__init__()
        if direction not in DIRECTIONS:
            raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
        self.direction = direction
        self.hidden = hidden
        self.dtype_name = dtype
        self.reverse_backward = reverse_backward
        gen = torch.Generator().manual_seed(seed)
        dt = resolve_dtype(dtype)
        self.layer_specs = (
            LayerSpec.lstm_cell(EMBEDDING_DIM, hidden),
            LayerSpec.lstm_cell(hidden, hidden),
            LayerSpec.dense(hidden, EMBEDDING_DIM),
        )
        self.cell1 = build_layer(self.layer_specs[0], gen, dt)
        self.cell2 = build_layer(self.layer_specs[1], gen, dt)
        self.head = build_layer(self.layer_specs[2], gen, dt)
        self.register_buffer("input_mean", torch.zeros(EMBEDDING_DIM, dtype=dt))
        self.register_buffer("input_scale", torch.ones((), dtype=dt))

    def fit_standardization(self, embeddings: np.ndarray) -> None:
        """Set the input mean and scale from a stack of training embeddings."""
        e = np.asarray(embeddings, dtype=np.float64)
        mean = e.mean(axis=0)
        scale = float((e - mean).std())
        with torch.no_grad():
            self.input_mean.copy_(torch.from_numpy(mean))
            self.input_scale.fill_(scale if scale > 0 else 1.0)

    @property
    def dtype(self):
        return self.head.weight.dtype

    def config_dict(self) -> dict:
        return {"direction": self.direction, "hidden": self.hidden, "dtype": self.dtype_name,
                "reverse_backward": self.reverse_backward}

    def forward(self, ctx: torch.Tensor) -> torch.Tensor:
        """(B, 5, 15200) windows in temporal order -> (B, 15200)."""
        if ctx.dim() != 3 or ctx.shape[1] != CONTEXT or ctx.shape[2] != EMBEDDING_DIM:
            raise ValueError(f"context batch must be (B, {CONTEXT}, {EMBEDDING_DIM}), got {tuple(ctx.shape)}")
        ctx = (ctx.to(self.dtype) - self.input_mean) / self.input_scale
        if self.direction == "backward" and self.reverse_backward:
            ctx = ctx.flip(1)
        gx = self.cell1.input_projection(ctx)
        s1 = self.cell1.zero_state(ctx.shape[0])
        s2 = self.cell2.zero_state(ctx.shape[0])
        for t in range(CONTEXT):
            s1 = self.cell1.step_projected(gx[:, t], s1)
            s2 = self.cell2(s1[0], s2)
        return self.head(s2[0]) * self.input_scale + self.input_mean


@torch.no_grad()
def predict_batch(model: LstmPredictor, contexts: np.ndarray) -> np.ndarray:
    model.eval()
    return model(torch.as_tensor(np.asarray(contexts, dtype=np.float64))).to(torch.float64).numpy()


def predict(model: LstmPredictor, ctx: ContextWindow) -> np.ndarray:
    if ctx.direction != model.direction:
        raise ValueError(f"{ctx.direction} context given to {model.direction} model")
    return predict_batch(model, ctx.embeddings[None])[0]


def _observed_runs(seq: GaitSequence):
    run = []
    for i, f in enumerate(seq.frames):
        if f.status is FrameStatus.OBSERVED:
            run.append(i)
        else:
            if run:
                yield run
            run = []
    if run:
        yield run


def build_windows(direction: str, sequences, embeddings_per_seq) -> tuple[np.ndarray, np.ndarray]:
    """Sliding 6-frame windows over observed runs: (contexts, targets)."""
    ctx, tgt = [], []
    for seq, emb in zip(sequences, embeddings_per_seq):
        for run in _observed_runs(seq):
            for k in range(len(run) - CONTEXT):
                w = run[k:k + CONTEXT + 1]
                if direction == "forward":
                    ctx.append(emb[w[:CONTEXT]])
                    tgt.append(emb[w[CONTEXT]])
                else:
                    ctx.append(emb[w[1:]])
                    tgt.append(emb[w[0]])
    if not ctx:
        return np.zeros((0, CONTEXT, EMBEDDING_DIM)), np.zeros((0, EMBEDDING_DIM))
    return np.stack(ctx), np.stack(tgt)


def sequence_windows(direction: str, sequences, ae: AutoencoderModel):
    embs = [encode_frames(ae, list(s.frames)) for s in sequences]
    return build_windows(direction, sequences, embs)


def copy_nearest_baseline(contexts: np.ndarray, direction: str) -> np.ndarray:
    """Predict the target as the temporally closest context embedding."""
    return contexts[:, -1] if direction == "forward" else contexts[:, 0]


def train_predictor(direction: str, corpus, ae: AutoencoderModel, config: PredictorConfig = PredictorConfig(),
                    windows=None):
    """Fit M1 (forward) or M2 (backward) on embedding-space MSE with Adam.

    ``windows`` may supply precomputed ``(contexts, targets)``. Returns
    ``(model, history)`` with per-epoch mean MSE.
    """
    contexts, targets = windows if windows is not None else sequence_windows(direction, corpus, ae)
    if len(contexts) == 0:
        raise ValueError("no 6-frame observed windows in the training corpus")
    model = LstmPredictor(direction, config.hidden, config.seed, config.dtype, config.reverse_backward)
    if config.standardize:
        model.fit_standardization(targets)
    opt = Adam(model.parameters(), AdamConfig(config.learning_rate, config.beta1, config.beta2))
    x = torch.as_tensor(contexts).to(model.dtype)
    y = torch.as_tensor(targets).to(model.dtype)
    rng = np.random.default_rng(config.seed)
    stop = Saturation(config.saturation_tol, config.saturation_patience)
    history = []
    model.train()
    for epoch in range(config.epochs):
        total = 0.0
        for idx in minibatches(len(x), config.batch_size, rng):
            ix = torch.from_numpy(idx)
            opt.zero_grad()
            loss = mse_loss(model(x[ix]), y[ix])
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
        history.append(total / len(x))
        log.info("%s predictor epoch %d: mse %.6f", direction, epoch + 1, history[-1])
        if stop.update(history[-1]):
            break
    model.eval()
    return model, history


def save_predictor(model: LstmPredictor, path):
    return save_checkpoint(path, f"lstm_{model.direction}", model, model.config_dict(), model.layer_specs)


def load_predictor(path) -> LstmPredictor:
    header, tensors = read_checkpoint(path)
    expect_kind(header, "lstm_forward", "lstm_backward")
    cfg = header["config"]
    model = LstmPredictor(cfg["direction"], cfg["hidden"], 0, cfg["dtype"], cfg["reverse_backward"])
    load_state(model, tensors)
    return model.eval()
