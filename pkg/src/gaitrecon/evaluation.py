"""Dice scores, CMC curves, occlusion-band sweeps and report files."""
from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .occlusion import OcclusionSpec, synthesize_occlusion
from .recognition import GaitEnergyImage, compute_gei, segment_cycles
from .reconstruct import ReconstructionModels, reconstruct_detailed
from .silhouette import FrameStatus

log = logging.getLogger(__name__)

REPORT_VERSION = 1


@dataclass(frozen=True)
class DiceResult:
    score: float
    mode: str

    def __float__(self):
        return self.score


def _values(x) -> np.ndarray:
    if isinstance(x, GaitEnergyImage):
        return x.values
    if hasattr(x, "pixels"):
        return x.pixels.astype(np.float64)
    return np.asarray(x, dtype=np.float64)


DICE_MODES = ("soft", "soft_linear", "hard")


def dice(a, b, mode: str = "soft") -> DiceResult:
    """Dice overlap of two equally shaped grids.

    ``soft``: 2*sum(a*b) / (sum(a**2) + sum(b**2)), which is 1 exactly when
    a == b and equals the set Dice on binary grids. ``soft_linear``:
    2*sum(a*b) / (sum(a) + sum(b)), which stays below 1 for identical
    real-valued grids. ``hard``: set Dice after thresholding both at 0.5.
    Two empty grids score 1.0.
    """
    a, b = _values(a), _values(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if mode == "hard":
        a, b = (a >= 0.5).astype(np.float64), (b >= 0.5).astype(np.float64)
        mode = "hard_threshold_0.5"
    elif mode not in ("soft", "soft_linear"):
        raise ValueError(f"unknown Dice mode {mode!r}")
    denom = a.sum() + b.sum() if mode == "soft_linear" else (a * a).sum() + (b * b).sum()
    if denom == 0:
        return DiceResult(1.0, mode)
    return DiceResult(float(min(1.0, 2.0 * (a * b).sum() / denom)), mode)


@dataclass(frozen=True)
class CmcSeries:
    accuracies: tuple[float, ...]

    def __post_init__(self):
        acc = tuple(float(a) for a in self.accuracies)
        if any(not 0.0 <= a <= 1.0 for a in acc):
            raise ValueError("CMC accuracies must lie in [0, 1]")
        if any(x > y for x, y in zip(acc, acc[1:])):
            raise ValueError("CMC accuracies must be non-decreasing")
        object.__setattr__(self, "accuracies", acc)

    def at(self, rank: int) -> float:
        return self.accuracies[rank - 1]


def true_rank(ranked, truth) -> int | None:
    """1-based position of ``truth`` among ranked ids (or (id, score) pairs)."""
    for pos, item in enumerate(ranked, start=1):
        if (item[0] if isinstance(item, tuple) else item) == truth:
            return pos
    return None


def compute_cmc(ranked_predictions, K: int | None = None) -> CmcSeries:
    """Fraction of queries whose true subject sits within the top k, for k = 1..K."""
    ranked_predictions = list(ranked_predictions)
    if not ranked_predictions:
        raise ValueError("no predictions to score")
    n_classes = min(len(r) for r, _ in ranked_predictions)
    K = n_classes if K is None else K
    if not 1 <= K <= n_classes:
        raise ValueError(f"K must be in [1, {n_classes}], got {K}")
    ranks = [true_rank(r, t) for r, t in ranked_predictions]
    q = len(ranks)
    return CmcSeries(tuple(sum(1 for r in ranks if r is not None and r <= k) / q for k in range(1, K + 1)))


# ---------------------------------------------------------------- reports

def _band_label(band) -> str:
    return f"{round(band[0] * 100)}-{round(band[1] * 100)}%"


@dataclass
class BandResult:
    band: tuple[float, float]
    mean_dice: float
    rank1_accuracy: float
    cmc: tuple[float, ...]
    queries: int
    mean_occluded_fraction: float
    unreconstructed_frames: int
    ablation_dice: dict[str, float] = field(default_factory=dict)

    @property
    def label(self) -> str:
        return _band_label(self.band)


@dataclass
class EvaluationReport:
    bands: list[BandResult] = field(default_factory=list)
    ablation: dict[str, float] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "bands": [
                {
                    "band": list(b.band), "label": b.label, "mean_dice": b.mean_dice,
                    "rank1_accuracy": b.rank1_accuracy, "cmc": list(b.cmc), "queries": b.queries,
                    "mean_occluded_fraction": b.mean_occluded_fraction,
                    "unreconstructed_frames": b.unreconstructed_frames,
                    "ablation_dice": dict(sorted(b.ablation_dice.items())),
                }
                for b in self.bands
            ],
            "ablation": [{"model": k, "mean_dice": v} for k, v in self.ablation.items()],
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        if d.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {d.get('version')!r}")
        bands = [
            BandResult(tuple(b["band"]), b["mean_dice"], b["rank1_accuracy"], tuple(b["cmc"]), b["queries"],
                       b["mean_occluded_fraction"], b["unreconstructed_frames"], dict(b.get("ablation_dice", {})))
            for b in d["bands"]
        ]
        ablation = {row["model"]: row["mean_dice"] for row in d.get("ablation", [])}
        return cls(bands, ablation, d.get("metadata", {}))

    @classmethod
    def read(cls, path) -> "EvaluationReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _gei_or_blank(frames) -> GaitEnergyImage:
    try:
        return compute_gei(frames)
    except ValueError:
        return compute_gei(frames, occluded="black")


ABLATION_MODELS = ("M1", "M2", "fused")


def run_band_sweep(corpus, bands, models: ReconstructionModels, recognizer, seed: int = 0,
                   contiguous: bool = False) -> EvaluationReport:
    """Occlude, reconstruct and score every test sequence at every band.

    Each cycle of a clean test sequence is one query: Dice between the GEI
    of the reconstructed cycle and the clean-cycle GEI, plus the
    recognizer's ranking of the reconstructed GEI. The single-direction
    (M1, M2) reconstructions from the same sweeps give the ablation rows.
    """
    corpus = list(corpus)
    bands = [tuple(float(x) for x in b) for b in bands]
    if not bands:
        raise ValueError("no occlusion bands given")
    for seq in corpus:
        if seq.cycle_boundaries is None and segment_cycles(seq).heuristic:
            raise ValueError(f"{seq.subject_id}/{seq.sequence_id}: no clean ground-truth cycles")
        if any(f.status is not FrameStatus.OBSERVED for f in seq.frames):
            raise ValueError(f"{seq.subject_id}/{seq.sequence_id}: ground truth must be fully observed")
    report = EvaluationReport()
    totals = {m: [] for m in ABLATION_MODELS}
    for bi, band in enumerate(bands):
        dices = {m: [] for m in ABLATION_MODELS}
        ranked, fractions, missing = [], [], 0
        for qi, seq in enumerate(corpus):
            spec = OcclusionSpec(band, rng_seed=int(np.random.SeedSequence([seed, bi, qi]).generate_state(1)[0]),
                                 contiguous=contiguous)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                occluded, mask = synthesize_occlusion(seq, spec)
            fractions.append(len(mask) / len(seq))
            result = reconstruct_detailed(occluded, mask, models)
            missing += len(result.unreconstructable)
            variants = {"M1": result.forward_sequence(), "M2": result.backward_sequence(), "fused": result.sequence}
            for start, end in segment_cycles(seq).bounds:
                truth = compute_gei(seq.frames[start:end])
                for name, rec in variants.items():
                    g = _gei_or_blank(rec.frames[start:end])
                    dices[name].append(dice(g, truth).score)
                    if name == "fused":
                        ranked.append((recognizer.rank(g), seq.subject_id))
        cmc = compute_cmc(ranked)
        row = BandResult(
            band=band,
            mean_dice=float(np.mean(dices["fused"])),
            rank1_accuracy=cmc.at(1),
            cmc=cmc.accuracies,
            queries=len(ranked),
            mean_occluded_fraction=float(np.mean(fractions)),
            unreconstructed_frames=missing,
            ablation_dice={m: float(np.mean(v)) for m, v in dices.items()},
        )
        log.info("band %s: dice %.4f rank-1 %.3f", row.label, row.mean_dice, row.rank1_accuracy)
        report.bands.append(row)
        for m in ABLATION_MODELS:
            totals[m] += dices[m]
    report.ablation = {m: float(np.mean(totals[m])) for m in ABLATION_MODELS}
    report.metadata = {"seed": seed, "bands": [list(b) for b in bands], "contiguous": contiguous,
                       "sequences": len(corpus)}
    return report


def corpus_hash(sequences) -> str:
    h = hashlib.sha256()
    for s in sequences:
        h.update(f"{s.subject_id}/{s.sequence_id}/{len(s)}".encode())
        h.update(s.pixel_stack().tobytes())
        h.update(",".join(f.status.value for f in s.frames).encode())
    return h.hexdigest()


def markdown_table(report: EvaluationReport) -> str:
    ranks = max((len(b.cmc) for b in report.bands), default=0)
    shown = min(ranks, 5)
    lines = ["# Reconstruction and recognition results", "",
             "| Occlusion | Dice score | Rank-1 accuracy (%) | " + " | ".join(f"Rank-{k}" for k in range(2, shown + 1)) + " |",
             "|---|---|---|" + "---|" * (shown - 1)]
    for b in report.bands:
        extra = " | ".join(f"{100 * b.cmc[k - 1]:.2f}" for k in range(2, shown + 1))
        lines.append(f"| {b.label} | {b.mean_dice:.4f} | {100 * b.rank1_accuracy:.2f} | {extra} |")
    if report.ablation:
        lines += ["", "## Ablation (mean GEI Dice over all bands)", "", "| Model | Dice score |", "|---|---|"]
        lines += [f"| {k} | {v:.4f} |" for k, v in report.ablation.items()]
    if report.metadata:
        lines += ["", "## Run metadata", "", "```json", json.dumps(report.metadata, indent=2, sort_keys=True), "```"]
    return "\n".join(lines) + "\n"


def emit_report(report: EvaluationReport, out_dir) -> list[Path]:
    """Write results.json, results.md, cmc.png and dice.png into ``out_dir``."""
    if not report.bands:
        raise ValueError("report has no band rows")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "results.json", out / "results.md", out / "cmc.png", out / "dice.png"]
    paths[0].write_text(report.to_json())
    paths[1].write_text(markdown_table(report))

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    meta = {"Software": None}
    fig, ax = plt.subplots(figsize=(5, 4))
    for b in report.bands:
        ax.plot(range(1, len(b.cmc) + 1), [100 * a for a in b.cmc], marker="o", label=b.label)
    ax.set_xlabel("Rank")
    ax.set_ylabel("Recognition accuracy (%)")
    ax.set_ylim(0, 102)
    ax.legend(title="Occlusion")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(paths[2], dpi=100, metadata=meta)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 4))
    labels = [b.label for b in report.bands]
    ax.plot(labels, [b.mean_dice for b in report.bands], marker="o", label="fused")
    for m in ("M1", "M2"):
        if all(m in b.ablation_dice for b in report.bands):
            ax.plot(labels, [b.ablation_dice[m] for b in report.bands], marker=".", linestyle="--", label=m)
    ax.set_xlabel("Occlusion")
    ax.set_ylabel("Mean GEI Dice")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(paths[3], dpi=100, metadata=meta)
    plt.close(fig)
    return paths
