"""Gait energy images, cycle segmentation and a bagged decision-forest recognizer."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Protocol

import numpy as np
from sklearn.tree import DecisionTreeClassifier

from .silhouette import FRAME_SHAPE, FrameStatus, GaitSequence, SilhouetteFrame

DOWNSAMPLE = 4
FEATURE_SHAPE = (38, 50)
FEATURE_DIM = FEATURE_SHAPE[0] * FEATURE_SHAPE[1]  # 1900


@dataclass(frozen=True)
class GaitEnergyImage:
    values: np.ndarray
    cycle_frame_count: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"GEI must be 2-D, got shape {v.shape}")
        if v.size and (v.min() < 0 or v.max() > 1):
            raise ValueError("GEI values must lie in [0, 1]")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def compute_gei(frames, occluded: str = "skip") -> GaitEnergyImage:
    """Per-pixel mean of binary frames.

    Frames with status occluded are skipped by default; ``occluded="black"``
    averages them in as empty frames instead.
    """
    if occluded not in ("skip", "black"):
        raise ValueError("occluded must be 'skip' or 'black'")
    frames = list(frames)
    if occluded == "skip":
        frames = [f for f in frames if not (isinstance(f, SilhouetteFrame) and f.status is FrameStatus.OCCLUDED)]
    if not frames:
        raise ValueError("cannot compute a GEI from zero usable frames")
    stack = np.stack([
        (np.zeros_like(f.pixels) if f.status is FrameStatus.OCCLUDED else f.pixels) if isinstance(f, SilhouetteFrame)
        else np.asarray(f)
        for f in frames
    ]).astype(np.float64)
    return GaitEnergyImage(stack.mean(axis=0), len(frames))


def gei_features(gei) -> np.ndarray:
    """4x4 block mean of a 150x200 GEI -> 1900-d vector.

    One zero row is padded above and below first so the height divides by 4.
    """
    v = gei.values if isinstance(gei, GaitEnergyImage) else np.asarray(gei, dtype=np.float64)
    if v.shape != FRAME_SHAPE:
        raise ValueError(f"GEI must be {FRAME_SHAPE}, got {v.shape}")
    padded = np.pad(v, ((1, 1), (0, 0)))
    h, w = padded.shape
    return padded.reshape(h // DOWNSAMPLE, DOWNSAMPLE, w // DOWNSAMPLE, DOWNSAMPLE).mean(axis=(1, 3)).ravel()


# ---------------------------------------------------------------- cycles

class CycleSegmentation(NamedTuple):
    bounds: list[tuple[int, int]]
    heuristic: bool


def lower_width_signal(seq: GaitSequence) -> np.ndarray:
    """Number of foreground columns in the lower half of each frame."""
    if not len(seq):
        return np.zeros(0)
    px = seq.pixel_stack()
    lower = px[:, px.shape[1] // 2:, :]
    return lower.any(axis=1).sum(axis=1).astype(np.float64)


def _autocorrelation(x: np.ndarray, max_lag: int) -> np.ndarray:
    x = x - x.mean()
    var = float((x * x).mean())
    r = np.zeros(max_lag + 1)
    for k in range(max_lag + 1):
        r[k] = float((x[:len(x) - k] * x[k:]).mean()) / var
    return r


def segment_cycles(seq: GaitSequence, min_step: int = 3, min_corr: float = 0.3) -> CycleSegmentation:
    """Gait cycles of ``seq`` as half-open index ranges.

    Manifest-provided boundaries are returned verbatim. Otherwise the lower
    body width, which peaks once per step, is autocorrelated; the first
    clear peak gives the step period and a cycle spans two steps, cut from
    one width maximum to the next-but-one. Without periodicity the whole
    sequence is returned as one span with ``heuristic=True``.
    """
    if seq.cycle_boundaries is not None:
        return CycleSegmentation(list(seq.cycle_boundaries), False)
    n = len(seq)
    fallback = CycleSegmentation([(0, n)] if n else [], True)
    s = lower_width_signal(seq)
    if n < 2 * min_step + 2 or np.ptp(s) < 1.0:
        return fallback
    r = _autocorrelation(s, n // 2)
    step = None
    for k in range(min_step, len(r) - 1):
        if r[k] >= min_corr and r[k] >= r[k - 1] and r[k] >= r[k + 1]:
            step = k
            break
    if step is None:
        return fallback
    peaks = []
    half = max(1, step // 2)
    for t in range(n):
        lo, hi = max(0, t - half), min(n, t + half + 1)
        if s[t] == s[lo:hi].max() and (not peaks or t - peaks[-1] > half):
            peaks.append(t)
    bounds = [(peaks[j], peaks[j + 2]) for j in range(0, len(peaks) - 2, 2)]
    if not bounds:
        return fallback
    return CycleSegmentation(bounds, False)


def cycle_geis(seq: GaitSequence, occluded: str = "skip") -> list[GaitEnergyImage]:
    return [compute_gei(seq.frames[s:e], occluded) for s, e in segment_cycles(seq).bounds]


# ---------------------------------------------------------------- forest

class Recognizer(Protocol):
    """Anything that ranks gallery identities for a query GEI."""

    def rank(self, gei) -> list[tuple[str, float]]: ...


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    seed: int = 0
    max_features: str = "sqrt"


@dataclass
class TreeArrays:
    """Flat CART tree; ``left == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, n_classes) training samples reaching each node
    bootstrap: np.ndarray

    def leaves(self, X: np.ndarray) -> np.ndarray:
        # split tests run on float32-cast features, as during induction
        X = np.asarray(X, dtype=np.float32).astype(np.float64)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.left[node] != -1
        while active.any():
            n = node[active]
            go_left = X[rows[active], self.feature[n]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = self.left[node] != -1
        return node


@dataclass
class ForestModel:
    classes: list[str]
    trees: list[TreeArrays]
    feature_dim: int = FEATURE_DIM
    seed: int = 0

    def votes(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if X.shape[1] != self.feature_dim:
            raise ValueError(f"feature dim {X.shape[1]} != trained dim {self.feature_dim}")
        v = np.zeros((len(X), len(self.classes)), dtype=np.int64)
        for tree in self.trees:
            winners = tree.counts[tree.leaves(X)].argmax(axis=1)
            np.add.at(v, (np.arange(len(X)), winners), 1)
        return v

    def rank(self, gei) -> list[tuple[str, float]]:
        return ranking_from_votes(self.votes(gei_features(gei)[None])[0], self.classes)


def ranking_from_votes(votes, classes) -> list[tuple[str, float]]:
    """Vote fractions in descending order; ties keep class order."""
    votes = np.asarray(votes, dtype=np.float64)
    scores = votes / votes.sum()
    order = sorted(range(len(classes)), key=lambda c: (-scores[c], c))
    return [(classes[c], float(scores[c])) for c in order]


def train_forest(geis, config: ForestConfig = ForestConfig()) -> ForestModel:
    """Bagged CART trees over downsampled GEIs, one seeded RNG stream per tree."""
    geis = list(geis)
    if not geis:
        raise ValueError("forest training set is empty")
    classes = sorted({sid for _, sid in geis})
    if len(classes) < 2:
        raise ValueError("forest training needs at least two subjects")
    X = np.stack([gei_features(g) for g, _ in geis])
    y = np.array([classes.index(sid) for _, sid in geis])
    trees = []
    for stream in np.random.SeedSequence(config.seed).spawn(config.n_trees):
        rng = np.random.default_rng(stream)
        boot = rng.integers(0, len(X), size=len(X))
        clf = DecisionTreeClassifier(max_features=config.max_features, random_state=int(rng.integers(2**31 - 1)))
        clf.fit(X[boot], y[boot])
        t = clf.tree_
        counts = np.zeros((t.node_count, len(classes)), dtype=np.int64)
        # every node on each sample's path gets the count; leaves are what matter
        path = clf.decision_path(X[boot].astype(np.float32)).tocoo()
        np.add.at(counts, (path.col, y[boot][path.row]), 1)
        trees.append(TreeArrays(
            feature=np.where(t.children_left == -1, 0, t.feature).astype(np.int64),
            threshold=t.threshold.astype(np.float64),
            left=t.children_left.astype(np.int64),
            right=t.children_right.astype(np.int64),
            counts=counts,
            bootstrap=boot.astype(np.int64),
        ))
    return ForestModel(classes, trees, X.shape[1], config.seed)


def classify(model: ForestModel, gei) -> list[tuple[str, float]]:
    return model.rank(gei)


FOREST_MAGIC = b"GRFRST\x00\x01"
FOREST_VERSION = 1


def save_forest(model: ForestModel, path) -> Path:
    """Binary layout: magic, u32 version, u32 header length, JSON header, then per tree
    u32 node count, u32 bootstrap size and the node arrays (int32 feature,
    float64 threshold, int32 left, int32 right, uint32 class counts) plus int32
    bootstrap indices, all little-endian."""
    path = Path(path)
    header = json.dumps({"classes": model.classes, "feature_dim": model.feature_dim, "n_trees": len(model.trees),
                         "seed": model.seed}, sort_keys=True).encode()
    parts = [FOREST_MAGIC, struct.pack("<II", FOREST_VERSION, len(header)), header]
    for t in model.trees:
        parts.append(struct.pack("<II", len(t.left), len(t.bootstrap)))
        parts += [t.feature.astype("<i4").tobytes(), t.threshold.astype("<f8").tobytes(),
                  t.left.astype("<i4").tobytes(), t.right.astype("<i4").tobytes(),
                  t.counts.astype("<u4").tobytes(), t.bootstrap.astype("<i4").tobytes()]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(parts))
    return path


def load_forest(path) -> ForestModel:
    data = Path(path).read_bytes()
    if data[:8] != FOREST_MAGIC:
        raise ValueError(f"{path}: not a forest checkpoint")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != FOREST_VERSION:
        raise ValueError(f"{path}: unsupported forest version {version}")
    header = json.loads(data[16:16 + hlen])
    off = 16 + hlen
    n_cls = len(header["classes"])

    def take(dtype, count):
        nonlocal off
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=off)
        off += arr.nbytes
        return arr

    trees = []
    for _ in range(header["n_trees"]):
        n, nb = struct.unpack_from("<II", data, off)
        off += 8
        feature = take("<i4", n).astype(np.int64)
        threshold = take("<f8", n).astype(np.float64)
        left = take("<i4", n).astype(np.int64)
        right = take("<i4", n).astype(np.int64)
        counts = take("<u4", n * n_cls).astype(np.int64).reshape(n, n_cls)
        boot = take("<i4", nb).astype(np.int64)
        trees.append(TreeArrays(feature, threshold, left, right, counts, boot))
    return ForestModel(list(header["classes"]), trees, header["feature_dim"], header["seed"])
