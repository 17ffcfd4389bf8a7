"""Whole-sequence reconstruction: scheduling, the two prediction sweeps, fusion."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .autoencoder import AutoencoderModel, decode, encode_frames
from .fusion import FusionModel, fuse
from .occlusion import OcclusionMask
from .predictors import CONTEXT, ContextWindow, LstmPredictor, context_indices, predict
from .silhouette import FrameStatus, GaitSequence, SilhouetteFrame

USABLE = (FrameStatus.OBSERVED, FrameStatus.RECONSTRUCTED)


class Source(str, Enum):
    BOTH = "both"
    FORWARD_ONLY = "forward_only"
    BACKWARD_ONLY = "backward_only"
    UNRECONSTRUCTABLE = "unreconstructable"


@dataclass(frozen=True)
class ReconstructionPlan:
    """Which predictions each occluded frame gets, plus the order of both sweeps."""

    length: int
    sources: dict[int, Source]
    forward_order: tuple[int, ...]
    backward_order: tuple[int, ...]

    @property
    def unreconstructable(self) -> list[int]:
        return sorted(i for i, s in self.sources.items() if s is Source.UNRECONSTRUCTABLE)


def _sweep_targets(n: int, occluded: set[int], direction: str) -> list[int]:
    order = sorted(occluded) if direction == "forward" else sorted(occluded, reverse=True)
    done: set[int] = set()
    for i in order:
        ctx = context_indices(i, direction)
        if ctx[0] >= 0 and ctx[-1] < n and all(j not in occluded or j in done for j in ctx):
            done.add(i)
    return [i for i in order if i in done]


def plan_reconstruction(n: int, occluded) -> ReconstructionPlan:
    """Schedule a sequence of ``n`` frames with the given occluded indices.

    A frame is forward-predictable when each of its five predecessors is
    either visible or itself forward-predictable, which an ascending sweep
    decides in one pass; backward mirrors this with a descending sweep.
    """
    occluded = set(int(i) for i in occluded)
    if any(not 0 <= i < n for i in occluded):
        raise IndexError(f"occluded index outside [0, {n})")
    fwd = _sweep_targets(n, occluded, "forward")
    bwd = _sweep_targets(n, occluded, "backward")
    f, b = set(fwd), set(bwd)
    sources = {}
    for i in sorted(occluded):
        if i in f and i in b:
            sources[i] = Source.BOTH
        elif i in f:
            sources[i] = Source.FORWARD_ONLY
        elif i in b:
            sources[i] = Source.BACKWARD_ONLY
        else:
            sources[i] = Source.UNRECONSTRUCTABLE
    return ReconstructionPlan(n, sources, tuple(fwd), tuple(bwd))


def verify_plan(plan: ReconstructionPlan, statuses) -> None:
    """Replay both sweeps and raise if any prediction would read an unusable frame."""
    statuses = list(statuses)
    if len(statuses) != plan.length:
        raise ValueError("status list does not match plan length")
    for direction, order in (("forward", plan.forward_order), ("backward", plan.backward_order)):
        state = list(statuses)
        step = 1 if direction == "forward" else -1
        if list(order) != sorted(order, key=lambda i: step * i):
            raise AssertionError(f"{direction} sweep is not monotone")
        for i in order:
            for j in context_indices(i, direction):
                if not 0 <= j < plan.length or state[j] not in USABLE:
                    raise AssertionError(f"{direction} prediction of frame {i} reads unusable frame {j}")
            state[i] = FrameStatus.RECONSTRUCTED


@dataclass(frozen=True)
class ReconstructionModels:
    ae: AutoencoderModel
    m1: LstmPredictor
    m2: LstmPredictor
    fusion: FusionModel | None = None


@dataclass
class ReconstructionResult:
    source: GaitSequence
    sequence: GaitSequence
    plan: ReconstructionPlan
    forward: dict[int, np.ndarray] = field(default_factory=dict)
    backward: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def unreconstructable(self) -> list[int]:
        return [i for i in self.plan.unreconstructable]

    def _single(self, preds: dict[int, np.ndarray]) -> GaitSequence:
        frames = list(self.source.frames)
        for i, px in preds.items():
            frames[i] = SilhouetteFrame(px, FrameStatus.RECONSTRUCTED)
        return self.source.with_frames(frames)

    def forward_sequence(self) -> GaitSequence:
        """Source sequence filled with forward predictions only."""
        return self._single(self.forward)

    def backward_sequence(self) -> GaitSequence:
        return self._single(self.backward)


def _check_mask(seq: GaitSequence, mask: OcclusionMask) -> None:
    mask.check(len(seq))
    if set(mask.indices) != set(seq.occluded_indices):
        raise ValueError(f"mask {sorted(mask.indices)} disagrees with occluded statuses {seq.occluded_indices}")


def _sweep(order, base: dict[int, np.ndarray], ae, model: LstmPredictor,
           reencode: bool) -> dict[int, np.ndarray]:
    # each sweep owns its embedding table so the two directions never share outputs
    table = dict(base)
    out = {}
    for i in order:
        pred = predict(model, ContextWindow.gather(table, i, model.direction))
        px = (decode(ae, pred) >= 0.5).astype(np.uint8)
        out[i] = px
        table[i] = encode_frames(ae, [px])[0] if reencode else pred
    return out


def prediction_sweeps(seq: GaitSequence, plan: ReconstructionPlan, models: ReconstructionModels,
                      single_direction: str | None = None, reencode: bool = True):
    """Binarized forward and backward predictions, keyed by frame index."""
    visible = [i for i, f in enumerate(seq.frames) if f.status in USABLE]
    base = dict(zip(visible, encode_frames(models.ae, [seq.frames[i] for i in visible])))
    fwd = bwd = {}
    if single_direction in (None, "forward"):
        fwd = _sweep(plan.forward_order, base, models.ae, models.m1, reencode)
    if single_direction in (None, "backward"):
        bwd = _sweep(plan.backward_order, base, models.ae, models.m2, reencode)
    return fwd, bwd


def reconstruct_detailed(seq: GaitSequence, mask: OcclusionMask, models: ReconstructionModels,
                         single_direction: str | None = None, reencode: bool = True) -> ReconstructionResult:
    """Run both sweeps and fuse; see :func:`reconstruct_sequence`."""
    _check_mask(seq, mask)
    if models.m1.direction != "forward" or models.m2.direction != "backward":
        raise ValueError("m1 must be the forward model and m2 the backward model")
    if single_direction not in (None, "forward", "backward"):
        raise ValueError(f"single_direction must be forward, backward or None, got {single_direction!r}")
    plan = plan_reconstruction(len(seq), mask.indices)
    if single_direction is None and models.fusion is None and any(s is Source.BOTH for s in plan.sources.values()):
        raise ValueError("a fusion model is required when both directions are available")
    result = ReconstructionResult(seq, seq, plan)
    if not plan.sources:
        return result
    result.forward, result.backward = prediction_sweeps(seq, plan, models, single_direction, reencode)

    frames = list(seq.frames)
    for i in plan.sources:
        f1, f2 = result.forward.get(i), result.backward.get(i)
        if f1 is not None and f2 is not None:
            frames[i] = fuse(models.fusion, f1, f2)
        elif f1 is not None or f2 is not None:
            frames[i] = SilhouetteFrame(f1 if f1 is not None else f2, FrameStatus.RECONSTRUCTED)
    result.sequence = seq.with_frames(frames)
    return result


def build_fusion_triples(sequences, ae, m1, m2, band=(0.1, 0.3), repeats: int = 1, seed: int = 0):
    """``(F1, F2, truth)`` triples from simulated gaps in clean sequences.

    Every sequence is occluded ``repeats`` times with a fresh draw from
    ``band``; each frame predicted by both sweeps yields one triple.
    """
    from .occlusion import OcclusionSpec, synthesize_occlusion

    models = ReconstructionModels(ae, m1, m2)
    triples = []
    for si, seq in enumerate(sequences):
        for r in range(repeats):
            state = int(np.random.SeedSequence([seed, si, r]).generate_state(1)[0])
            occluded, mask = synthesize_occlusion(seq, OcclusionSpec(tuple(band), rng_seed=state))
            plan = plan_reconstruction(len(seq), mask.indices)
            fwd, bwd = prediction_sweeps(occluded, plan, models)
            for i in sorted(set(fwd) & set(bwd)):
                triples.append((fwd[i], bwd[i], seq.frames[i].pixels))
    return triples


def reconstruct_sequence(seq: GaitSequence, mask: OcclusionMask, ae, m1, m2, fusion=None,
                         single_direction: str | None = None, reencode: bool = True) -> GaitSequence:
    """Fill the occluded frames of ``seq``.

    Forward predictions are produced in ascending order and backward ones in
    descending order, each sweep feeding its own reconstructions back as
    context (re-encoded from the binarized frame unless ``reencode`` is
    False). Frames predicted both ways are fused; frames reachable from only
    one side take that prediction; the rest stay occluded. Visible frames are
    returned untouched.
    """
    models = ReconstructionModels(ae, m1, m2, fusion)
    return reconstruct_detailed(seq, mask, models, single_direction, reencode).sequence


__all__ = [
    "CONTEXT", "ReconstructionModels", "build_fusion_triples", "ReconstructionPlan", "ReconstructionResult", "Source",
    "plan_reconstruction", "prediction_sweeps", "reconstruct_detailed", "reconstruct_sequence", "verify_plan",
]
