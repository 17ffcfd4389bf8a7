"""Procedural side-view walkers used as a stand-in for licensed gait corpora."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .silhouette import GaitSequence, SequenceManifest, normalize_frame, save_corpus

RAW_SHAPE = (200, 260)


@dataclass(frozen=True)
class WalkerStyle:
    """Body geometry and motion, in units of standing height."""

    head_radius: float = 0.065
    torso_width: float = 0.13
    leg_length: float = 0.48
    leg_width: float = 0.06
    stride_amplitude: float = 0.42  # thigh swing, radians
    knee_bend: float = 0.55
    arm_swing: float = 0.35
    arm_width: float = 0.045
    lean: float = 0.04
    asymmetry: float = 0.2  # far-side limbs swing less


def _segments_mask(yy, xx, segments):
    mask = np.zeros(yy.shape, bool)
    for (y0, x0), (y1, x1), width in segments:
        dy, dx = y1 - y0, x1 - x0
        denom = dy * dy + dx * dx
        t = np.clip(((yy - y0) * dy + (xx - x0) * dx) / denom, 0.0, 1.0) if denom > 0 else 0.0
        d2 = (yy - (y0 + t * dy)) ** 2 + (xx - (x0 + t * dx)) ** 2
        mask |= d2 <= (width / 2) ** 2
    return mask


def render_walker(style: WalkerStyle, phase: float, shape=RAW_SHAPE) -> np.ndarray:
    """Rasterize one pose at gait phase ``phase`` (radians) as a raw binary grid."""
    H, W = shape
    unit = H * 0.85
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    hip_y = H * 0.06 + unit * (1.0 - style.leg_length)
    hip_x = W * 0.5
    shoulder_y = H * 0.06 + unit * (2.2 * style.head_radius + 0.04)
    shoulder_x = hip_x + unit * style.lean
    thigh = shin = unit * style.leg_length / 2

    segs = []
    for side, reach in ((0.0, 1.0), (np.pi, 1.0 - style.asymmetry)):
        a = reach * style.stride_amplitude * np.sin(phase + side)
        bend = style.knee_bend * max(0.0, np.sin(phase + side + np.pi / 2))
        knee = (hip_y + thigh * np.cos(a), hip_x + thigh * np.sin(a))
        b = a - bend
        foot = (knee[0] + shin * np.cos(b), knee[1] + shin * np.sin(b))
        w = unit * style.leg_width
        segs += [((hip_y, hip_x), knee, w), (knee, foot, w * 0.85)]
        toe = (foot[0], foot[1] + unit * 0.06)
        segs.append((foot, toe, w * 0.6))
        arm = -reach * style.arm_swing * np.sin(phase + side)
        hand = (shoulder_y + unit * 0.32 * np.cos(arm), shoulder_x + unit * 0.32 * np.sin(arm))
        segs.append(((shoulder_y, shoulder_x), hand, unit * style.arm_width))
    segs.append(((shoulder_y, shoulder_x), (hip_y, hip_x), unit * style.torso_width))
    mask = _segments_mask(yy, xx, segs)
    head_y = H * 0.06 + unit * style.head_radius
    head_x = shoulder_x + unit * style.lean * 0.5
    mask |= (yy - head_y) ** 2 + (xx - head_x) ** 2 <= (unit * style.head_radius) ** 2
    return mask.astype(np.uint8)


_RANGES = {
    "head_radius": (0.055, 0.08),
    "torso_width": (0.10, 0.19),
    "leg_length": (0.42, 0.54),
    "leg_width": (0.045, 0.08),
    "stride_amplitude": (0.25, 0.55),
    "knee_bend": (0.3, 0.8),
    "arm_swing": (0.1, 0.5),
    "lean": (-0.02, 0.08),
    "asymmetry": (0.15, 0.4),
}


def subject_styles(n: int, rng: np.random.Generator) -> list[WalkerStyle]:
    """Stratified draw so that every parameter spreads across its range."""
    cols = {}
    for name, (lo, hi) in _RANGES.items():
        strata = (rng.permutation(n) + rng.uniform(0.2, 0.8, n)) / n
        cols[name] = lo + strata * (hi - lo)
    return [WalkerStyle(**{k: float(v[i]) for k, v in cols.items()}) for i in range(n)]


def render_cycle(style: WalkerStyle, period: int, phase0: float = 0.0):
    return [normalize_frame(render_walker(style, phase0 + 2 * np.pi * t / period)) for t in range(period)]


def walk_sequence(style, cycles, period, subject_id, sequence_id, rng, jitter=0.03, phase0=0.0) -> GaitSequence:
    """A walk of ``cycles`` whole periods with mild per-cycle variation."""
    frames = []
    for _ in range(cycles):
        s = replace(
            style,
            stride_amplitude=style.stride_amplitude * (1 + rng.uniform(-jitter, jitter)),
            arm_swing=style.arm_swing * (1 + rng.uniform(-jitter, jitter)),
        )
        frames += render_cycle(s, period, phase0 + rng.uniform(-jitter, jitter) * np.pi)
    bounds = tuple((c * period, (c + 1) * period) for c in range(cycles))
    return GaitSequence(tuple(frames), subject_id, sequence_id, bounds)


def generate_corpus(subjects: int, cycles_per_subject: int, period: int, seed: int, jitter: float = 0.03) -> list[GaitSequence]:
    """One contiguous walk per subject with ``cycles_per_subject`` cycles."""
    if subjects < 2:
        raise ValueError("need at least 2 subjects")
    if period < 8:
        raise ValueError("period must be >= 8 frames")
    if cycles_per_subject < 1:
        raise ValueError("need at least one cycle per subject")
    rng = np.random.default_rng(seed)
    styles = subject_styles(subjects, rng)
    out = []
    for i, style in enumerate(styles):
        phase0 = rng.uniform(0, 2 * np.pi)
        out.append(walk_sequence(style, cycles_per_subject, period, f"s{i:03d}", "walk", rng, jitter, phase0))
    return out


def synth_corpus(subjects: int, cycles_per_subject: int, period: int, seed: int, directory, jitter: float = 0.03) -> SequenceManifest:
    return save_corpus(generate_corpus(subjects, cycles_per_subject, period, seed, jitter), directory)
