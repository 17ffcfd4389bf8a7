"""Synthetic frame blackening and occluded-frame detection."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import torch
import torch.nn as nn

from .nn import Adam, AdamConfig, LayerSpec, build_stack
from .nn.checkpoint import expect_kind, load_state, read_checkpoint, save_checkpoint
from .nn.losses import bce_with_logits_loss
from .nn.training import minibatches, resolve_dtype
from .silhouette import FRAME_SHAPE, FrameStatus, GaitSequence, SilhouetteFrame

log = logging.getLogger(__name__)

MIN_OCCLUSION_LENGTH = 11
PAPER_BANDS = ((0.05, 0.10), (0.10, 0.20), (0.20, 0.30), (0.30, 0.40), (0.40, 0.50))


class DegenerateBandWarning(UserWarning):
    pass


@dataclass(frozen=True)
class OcclusionSpec:
    band: tuple[float, float]
    rng_seed: int = 0
    mode: str = "blacken_full_frame"
    contiguous: bool = False

    def __post_init__(self):
        lo, hi = (float(x) for x in self.band)
        if not 0.0 <= lo <= hi <= 0.5:
            raise ValueError(f"occlusion band must satisfy 0 <= low <= high <= 0.5, got {self.band}")
        if self.mode != "blacken_full_frame":
            raise ValueError(f"unsupported occlusion mode {self.mode!r}")
        object.__setattr__(self, "band", (lo, hi))


@dataclass(frozen=True)
class OcclusionMask:
    indices: tuple[int, ...] = ()

    def __post_init__(self):
        idx = tuple(sorted({int(i) for i in self.indices}))
        if idx and idx[0] < 0:
            raise ValueError("mask indices must be non-negative")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)

    def __contains__(self, i):
        return i in self.indices

    def check(self, n: int) -> None:
        if self.indices and self.indices[-1] >= n:
            raise ValueError(f"mask index {self.indices[-1]} out of range for {n} frames")

    @classmethod
    def of(cls, seq: GaitSequence) -> "OcclusionMask":
        return cls(tuple(seq.occluded_indices))


def parse_band(text: str) -> tuple[float, float]:
    """'0.40:0.50' -> (0.4, 0.5)."""
    lo, sep, hi = text.partition(":")
    if not sep:
        raise ValueError(f"band must look like LOW:HIGH, got {text!r}")
    return float(lo), float(hi)


def synthesize_occlusion(seq: GaitSequence, spec: OcclusionSpec) -> tuple[GaitSequence, OcclusionMask]:
    """Blacken ``round(p * N)`` frames, with ``p`` drawn uniformly from the band.

    Frames are scattered uniformly without replacement, or form a single run
    when ``spec.contiguous`` is set. The input sequence is left untouched.
    """
    n = len(seq)
    if n < MIN_OCCLUSION_LENGTH:
        raise ValueError(f"sequence too short for occlusion: {n} < {MIN_OCCLUSION_LENGTH} frames")
    rng = np.random.default_rng(spec.rng_seed)
    lo, hi = spec.band
    p = lo if lo == hi else rng.uniform(lo, hi)
    k = int(math.floor(p * n + 0.5))
    if k == 0:
        warnings.warn(f"band {spec.band} selects no frames of {n}; sequence returned unchanged",
                      DegenerateBandWarning, stacklevel=2)
        return seq.with_frames(seq.frames), OcclusionMask()
    if spec.contiguous:
        start = int(rng.integers(0, n - k + 1))
        chosen = range(start, start + k)
    else:
        chosen = rng.choice(n, size=k, replace=False)
    mask = OcclusionMask(tuple(int(i) for i in chosen))
    blank = np.zeros_like(seq.frames[0].pixels)
    frames = [SilhouetteFrame(blank, FrameStatus.OCCLUDED) if i in mask.indices else f
              for i, f in enumerate(seq.frames)]
    return seq.with_frames(frames), mask


# ---------------------------------------------------------------- detection

class OcclusionDetector(Protocol):
    def flags(self, frames) -> list[bool]: ...


@dataclass(frozen=True)
class HeuristicDetector:
    """Flag frames with too little foreground or a foreground count far from the median.

    The median is taken over frames holding at least ``min_foreground``
    pixels, so heavily blackened sequences do not drag it to zero.
    """

    min_foreground: int = 50
    max_relative_deviation: float = 0.5

    def flags(self, frames) -> list[bool]:
        counts = np.array([int(np.asarray(f.pixels if isinstance(f, SilhouetteFrame) else f).sum()) for f in frames])
        if counts.size == 0:
            return []
        present = counts[counts >= self.min_foreground]
        if present.size == 0:
            return [True] * len(counts)
        med = float(np.median(present))
        dev = np.abs(counts - med) / med
        return [bool(c < self.min_foreground or d > self.max_relative_deviation) for c, d in zip(counts, dev)]


DETECTOR_LAYERS = (
    LayerSpec.conv2d(1, 8), LayerSpec.relu(), LayerSpec.maxpool2d(2),
    LayerSpec.conv2d(8, 16), LayerSpec.relu(), LayerSpec.maxpool2d(2),
    LayerSpec.dense(16 * 38 * 50, 1),
)


class CnnDetector(nn.Module):
    """Two conv+pool blocks and a dense sigmoid head scoring P(occluded)."""

    def __init__(self, seed: int = 0, dtype: str = "float32"):
        super().__init__()
        self.dtype_name = dtype
        self.net = build_stack(DETECTOR_LAYERS, torch.Generator().manual_seed(seed), resolve_dtype(dtype))

    def forward(self, x):
        if x.dim() == 3:
            x = x.unsqueeze(1)
        return self.net(x.to(self.net[0].weight.dtype)).squeeze(1)

    @torch.no_grad()
    def probabilities(self, frames) -> np.ndarray:
        self.eval()
        px = torch.from_numpy(np.stack([np.asarray(f.pixels if isinstance(f, SilhouetteFrame) else f) for f in frames]))
        return torch.sigmoid(self(px)).to(torch.float64).numpy()

    def flags(self, frames) -> list[bool]:
        if len(frames) == 0:
            return []
        return [bool(p >= 0.5) for p in self.probabilities(frames)]


def detect_occluded_frames(seq: GaitSequence, detector: OcclusionDetector | None = None) -> OcclusionMask:
    detector = detector or HeuristicDetector()
    return OcclusionMask(tuple(i for i, hit in enumerate(detector.flags(list(seq.frames))) if hit))


def mark_occluded(seq: GaitSequence, mask: OcclusionMask) -> GaitSequence:
    """Copy of ``seq`` with exactly the masked frames set to status occluded."""
    mask.check(len(seq))
    frames = []
    for i, f in enumerate(seq.frames):
        if i in mask.indices:
            frames.append(f.with_status(FrameStatus.OCCLUDED))
        elif f.status is FrameStatus.OCCLUDED:
            frames.append(f.with_status(FrameStatus.OBSERVED))
        else:
            frames.append(f)
    return seq.with_frames(frames)


@dataclass(frozen=True)
class DetectorTrainingConfig:
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0
    dtype: str = "float32"


def train_occlusion_detector(labeled_frames, config: DetectorTrainingConfig = DetectorTrainingConfig()) -> CnnDetector:
    """Fit the CNN detector on ``(frame, is_occluded)`` pairs with summed BCE."""
    if not labeled_frames:
        raise ValueError("detector training set is empty")
    labels = np.array([bool(y) for _, y in labeled_frames])
    if labels.all() or not labels.any():
        raise ValueError("detector training needs both occluded and clean frames")
    model = CnnDetector(config.seed, config.dtype)
    dt = resolve_dtype(config.dtype)
    x = torch.from_numpy(np.stack([f.pixels for f, _ in labeled_frames])).to(dt)
    y = torch.from_numpy(labels.astype(np.float64)).to(dt)
    opt = Adam(model.parameters(), AdamConfig(learning_rate=config.learning_rate))
    rng = np.random.default_rng(config.seed)
    model.train()
    for epoch in range(config.epochs):
        total = 0.0
        for idx in minibatches(len(x), config.batch_size, rng):
            ix = torch.from_numpy(idx)
            opt.zero_grad()
            loss = bce_with_logits_loss(model(x[ix]), y[ix])
            loss.backward()
            opt.step()
            total += float(loss.detach())
        log.info("detector epoch %d: bce %.5f", epoch + 1, total / len(x))
    return model.eval()


def save_detector(model: CnnDetector, path):
    return save_checkpoint(path, "occlusion_cnn", model, {"dtype": model.dtype_name}, DETECTOR_LAYERS)


def load_detector(path) -> CnnDetector:
    header, tensors = read_checkpoint(path)
    expect_kind(header, "occlusion_cnn")
    model = CnnDetector(0, header["config"]["dtype"])
    load_state(model, tensors)
    return model.eval()


def detector_from_name(name: str) -> OcclusionDetector:
    """'heuristic' or 'cnn:<checkpoint path>'."""
    if name == "heuristic":
        return HeuristicDetector()
    kind, sep, path = name.partition(":")
    if kind == "cnn" and sep:
        return load_detector(path)
    raise ValueError(f"unknown detector {name!r}; use 'heuristic' or 'cnn:PATH'")
