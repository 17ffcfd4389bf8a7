"""End-to-end run: corpus, model training, band sweep and report, with stage caching."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .autoencoder import AutoencoderConfig, load_autoencoder, save_autoencoder, train_autoencoder
from .evaluation import EvaluationReport, corpus_hash, emit_report, run_band_sweep
from .fusion import FusionConfig, load_fusion, save_fusion, train_fusion
from .occlusion import PAPER_BANDS
from .predictors import PredictorConfig, load_predictor, save_predictor, train_predictor
from .recognition import ForestConfig, compute_gei, load_forest, save_forest, segment_cycles, train_forest
from .reconstruct import ReconstructionModels, build_fusion_triples
from .silhouette import GaitSequence, load_manifest, save_corpus
from .synth import generate_corpus

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
OUTPUT_ROOT_ENV = "GAITRECON_OUTPUT_ROOT"
STAGES = ("corpus", "train-ae", "train-lstm", "train-fusion", "train-forest", "evaluate", "report")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class CorpusSettings:
    manifest: str | None = None
    subjects: int = 10
    cycles: int = 4
    period: int = 12
    jitter: float = 0.03
    gallery_cycles: int = 2


@dataclass(frozen=True)
class AeSettings:
    frames: int = 50
    epochs: int = 40
    batch_size: int = 16
    learning_rate: float = 1e-3


@dataclass(frozen=True)
class LstmSettings:
    hidden: int = 1024
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 1e-3
    reverse_backward: bool = True


@dataclass(frozen=True)
class FusionSettings:
    epochs: int = 30
    block_count: int = 3
    width: int = 16
    batch_size: int = 16
    learning_rate: float = 1e-3
    band: tuple[float, float] = (0.1, 0.3)
    repeats: int = 3


@dataclass(frozen=True)
class ForestSettings:
    n_trees: int = 100


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run depends on; saved verbatim next to its outputs."""

    seed: int = 0
    output_dir: str = "gaitrecon-run"
    dtype: str = "float32"
    bands: tuple[tuple[float, float], ...] = PAPER_BANDS
    contiguous: bool = False
    log_level: str = "INFO"
    corpus: CorpusSettings = field(default_factory=CorpusSettings)
    ae: AeSettings = field(default_factory=AeSettings)
    lstm: LstmSettings = field(default_factory=LstmSettings)
    fusion: FusionSettings = field(default_factory=FusionSettings)
    forest: ForestSettings = field(default_factory=ForestSettings)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["bands"] = [list(b) for b in self.bands]
        d["fusion"]["band"] = list(self.fusion.band)
        return {"version": CONFIG_VERSION, **d}

    def result_dict(self) -> dict:
        """The settings that can change results; where outputs go and how chatty the run is cannot."""
        d = self.to_dict()
        del d["output_dir"], d["log_level"]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        version = d.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {version!r}")
        sections = {"corpus": CorpusSettings, "ae": AeSettings, "lstm": LstmSettings,
                    "fusion": FusionSettings, "forest": ForestSettings}
        kwargs = {}
        for key, value in d.items():
            if key in sections:
                sub = dict(value)
                if key == "fusion" and "band" in sub:
                    sub["band"] = tuple(sub["band"])
                kwargs[key] = _build(sections[key], sub, key)
            elif key == "bands":
                kwargs[key] = tuple(tuple(float(x) for x in b) for b in value)
            else:
                kwargs[key] = value
        return _build(cls, kwargs, "config")

    @classmethod
    def read(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def override(self, **changes) -> "RunConfig":
        """Apply dotted-key overrides such as ``{"lstm.epochs": 5}``; None values are ignored."""
        d = self.to_dict()
        for key, value in changes.items():
            if value is None:
                continue
            *path, last = key.split(".")
            node = d
            for part in path:
                node = node[part]
            if last not in node:
                raise KeyError(f"unknown config key {key!r}")
            node[last] = value
        return RunConfig.from_dict(d)

    def resolved_output(self) -> Path:
        out = Path(self.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        return out if out.is_absolute() or not root else Path(root) / out


def _build(cls, kwargs: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(kwargs) - known
    if unknown:
        raise ValueError(f"unknown {where} keys: {sorted(unknown)}")
    return cls(**kwargs)


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p if isinstance(p, bytes) else json.dumps(p, sort_keys=True, default=str).encode())
    return h.hexdigest()


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def split_gallery(sequences, gallery_cycles: int) -> tuple[list[GaitSequence], list[GaitSequence]]:
    """Per subject, the first ``gallery_cycles`` cycles train; the remaining cycles are held out."""
    train, test = [], []
    for seq in sequences:
        bounds = segment_cycles(seq).bounds
        if len(bounds) <= gallery_cycles:
            raise ValueError(f"{seq.subject_id}/{seq.sequence_id}: need more than {gallery_cycles} cycles")
        cut = bounds[gallery_cycles - 1][1]
        train.append(seq.subsequence(bounds[0][0], cut))
        test.append(seq.subsequence(cut, bounds[-1][1]))
    return train, test


def training_frames(train, count: int, seed: int):
    """The seeded subset of gallery frames the autoencoder is fitted on."""
    frames = [f for s in train for f in s.frames]
    pick = np.sort(np.random.default_rng(seed).choice(len(frames), min(count, len(frames)), replace=False))
    return [frames[i] for i in pick]


def deterministic_torch() -> None:
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)


class _Stages:
    """Caches each stage's artifact under ``checkpoints/`` keyed by a content hash."""

    def __init__(self, out: Path, events: list | None):
        self.dir = out / "checkpoints"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.events = events

    def run(self, stage: str, filename: str, key: str, build, load):
        path = self.dir / filename
        stamp = path.with_name(path.name + ".key")
        try:
            if path.exists() and stamp.exists() and stamp.read_text() == key:
                log.info("%s: cached", stage)
                self._note(stage, "cached")
                return load(path), file_digest(path)
            log.info("%s: running", stage)
            build(path)
            stamp.write_text(key)
            self._note(stage, "ran")
            return load(path), file_digest(path)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(stage, exc) from exc

    def _note(self, stage, what):
        if self.events is not None:
            self.events.append((stage, what))


def _load_corpus(cfg: RunConfig) -> list[GaitSequence]:
    c = cfg.corpus
    if c.manifest is not None:
        if not Path(c.manifest).exists():
            raise FileNotFoundError(f"corpus manifest {c.manifest} not found")
        return load_manifest(c.manifest)
    return generate_corpus(c.subjects, c.cycles, c.period, cfg.seed, c.jitter)


def run_pipeline(config: RunConfig, events: list | None = None) -> EvaluationReport:
    """Run every stage, reusing checkpoints whose inputs and settings are unchanged.

    ``events`` collects ``(stage, "ran" | "cached")`` pairs when given. A
    failed run leaves a ``FAILED`` file naming the stage in the output
    directory; a successful one removes it.
    """
    deterministic_torch()
    out = config.resolved_output()
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "FAILED"
    try:
        report = _run(config, out, events)
    except StageError as exc:
        marker.write_text(f"{exc.stage}\n{exc.cause}\n")
        raise
    marker.unlink(missing_ok=True)
    return report


def _run(config: RunConfig, out: Path, events: list | None) -> EvaluationReport:
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    stages = _Stages(out, events)
    seed, dt = config.seed, config.dtype

    try:
        corpus = _load_corpus(config)
        train, test = split_gallery(corpus, config.corpus.gallery_cycles)
        save_corpus(corpus, out / "corpus")
        data_hash = corpus_hash(corpus)
    except Exception as exc:
        raise StageError("corpus", exc) from exc
    if events is not None:
        events.append(("corpus", "ran"))

    a = config.ae
    ae_cfg = AutoencoderConfig(a.epochs, a.batch_size, a.learning_rate, seed, dt)

    def build_ae(path):
        model, _ = train_autoencoder(training_frames(train, a.frames, seed), ae_cfg)
        save_autoencoder(model, path)

    ae, ae_hash = stages.run("train-ae", "ae.ckpt", _digest(data_hash, dataclasses.asdict(ae_cfg), a.frames),
                             build_ae, load_autoencoder)

    ls = config.lstm
    lstm_models, lstm_hashes = {}, {}
    for name, direction in (("m1", "forward"), ("m2", "backward")):
        p_cfg = PredictorConfig(ls.hidden, ls.epochs, ls.batch_size, ls.learning_rate, seed=seed, dtype=dt,
                                reverse_backward=ls.reverse_backward)

        def build_lstm(path, direction=direction, p_cfg=p_cfg):
            model, _ = train_predictor(direction, train, ae, p_cfg)
            save_predictor(model, path)

        lstm_models[name], lstm_hashes[name] = stages.run(
            "train-lstm", f"{name}.ckpt", _digest(data_hash, ae_hash, direction, dataclasses.asdict(p_cfg)),
            build_lstm, load_predictor)

    fs = config.fusion
    f_cfg = FusionConfig(fs.block_count, fs.width, fs.epochs, fs.batch_size, fs.learning_rate, seed, dt)

    def build_fusion(path):
        triples = build_fusion_triples(train, ae, lstm_models["m1"], lstm_models["m2"], fs.band, fs.repeats, seed)
        model, _ = train_fusion(None, triples, f_cfg)
        save_fusion(model, path)

    fusion, fusion_hash = stages.run(
        "train-fusion", "fusion.ckpt",
        _digest(data_hash, ae_hash, lstm_hashes, dataclasses.asdict(f_cfg), list(fs.band), fs.repeats),
        build_fusion, load_fusion)

    forest_cfg = ForestConfig(config.forest.n_trees, seed)

    def build_forest(path):
        geis = [(compute_gei(s.frames[b0:b1]), s.subject_id) for s in train for b0, b1 in segment_cycles(s).bounds]
        save_forest(train_forest(geis, forest_cfg), path)

    forest, forest_hash = stages.run("train-forest", "forest.bin", _digest(data_hash, dataclasses.asdict(forest_cfg)),
                                     build_forest, load_forest)

    models = ReconstructionModels(ae, lstm_models["m1"], lstm_models["m2"], fusion)
    meta = {
        "corpus_hash": data_hash,
        "checkpoints": {"ae": ae_hash, "m1": lstm_hashes["m1"], "m2": lstm_hashes["m2"],
                        "fusion": fusion_hash, "forest": forest_hash},
        "config": config.result_dict(),
    }

    def build_report(path):
        report = run_band_sweep(test, config.bands, models, forest, seed, config.contiguous)
        report.metadata.update(meta)
        path.write_text(report.to_json())

    eval_key = _digest(meta["checkpoints"], data_hash, [list(b) for b in config.bands], seed, config.contiguous)
    report, _ = stages.run("evaluate", "results.json", eval_key, build_report, EvaluationReport.read)
    try:
        emit_report(report, out / "results")
    except Exception as exc:
        raise StageError("report", exc) from exc
    if events is not None:
        events.append(("report", "ran"))
    return report
