"""Command-line entry point: ``gaitrecon <subcommand> ...``.

Every flag mirrors a key of the run config (``--config FILE``); flags given
on the command line override the file.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .pipeline import OUTPUT_ROOT_ENV, RunConfig, StageError, deterministic_torch

log = logging.getLogger("gaitrecon")


def _bands(text: str):
    from .occlusion import parse_band

    return [list(parse_band(b)) for b in text.split(",") if b.strip()]


def _band(text: str):
    from .occlusion import parse_band

    return list(parse_band(text))


# flag name -> (config key, type, help)
FLAGS = {
    "seed": ("seed", int, "random seed"),
    "dtype": ("dtype", str, "training precision: float32 or float64"),
    "subjects": ("corpus.subjects", int, "synthetic subjects"),
    "cycles": ("corpus.cycles", int, "gait cycles per subject"),
    "period": ("corpus.period", int, "frames per gait cycle"),
    "jitter": ("corpus.jitter", float, "per-cycle style jitter"),
    "gallery-cycles": ("corpus.gallery_cycles", int, "training cycles per subject"),
    "ae-epochs": ("ae.epochs", int, "autoencoder epochs"),
    "ae-frames": ("ae.frames", int, "autoencoder training frames"),
    "lstm-epochs": ("lstm.epochs", int, "predictor epochs"),
    "hidden": ("lstm.hidden", int, "LSTM hidden size"),
    "fusion-epochs": ("fusion.epochs", int, "fusion epochs"),
    "fusion-blocks": ("fusion.block_count", int, "residual blocks in the fusion network"),
    "fusion-band": ("fusion.band", _band, "occlusion band used to make fusion training data"),
    "trees": ("forest.n_trees", int, "trees in the forest"),
    "bands": ("bands", _bands, "comma-separated LOW:HIGH occlusion bands"),
    "batch-size": (None, int, "minibatch size"),
}

SUBCOMMAND_FLAGS = {
    "synth": ["seed", "subjects", "cycles", "period", "jitter"],
    "occlude": ["seed"],
    "detect": [],
    "train-ae": ["seed", "dtype", "ae-epochs", "ae-frames", "batch-size"],
    "train-lstm": ["seed", "dtype", "lstm-epochs", "hidden", "batch-size"],
    "train-fusion": ["seed", "dtype", "fusion-epochs", "fusion-blocks", "fusion-band", "batch-size"],
    "reconstruct": [],
    "gei": [],
    "train-forest": ["seed", "trees"],
    "evaluate": ["seed", "bands"],
    "report": [],
    "pipeline": list(k for k in FLAGS if k != "batch-size"),
}


def _config(args) -> RunConfig:
    cfg = RunConfig.read(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for flag in SUBCOMMAND_FLAGS[args.command]:
        key = FLAGS[flag][0]
        value = getattr(args, flag.replace("-", "_"), None)
        if key is not None and value is not None:
            overrides[key] = value
    if getattr(args, "batch_size", None) is not None:
        section = {"train-ae": "ae", "train-lstm": "lstm", "train-fusion": "fusion"}[args.command]
        overrides[f"{section}.batch_size"] = args.batch_size
    if getattr(args, "out", None) and args.command == "pipeline":
        overrides["output_dir"] = str(args.out)
    if getattr(args, "corpus", None) and args.command == "pipeline":
        overrides["corpus.manifest"] = str(args.corpus)
    return cfg.override(**overrides)


def _out_path(p) -> Path:
    import os

    p = Path(p)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return p if p.is_absolute() or not root else Path(root) / p


# ---------------------------------------------------------------- commands

def cmd_synth(args, cfg):
    from .synth import synth_corpus

    c = cfg.corpus
    m = synth_corpus(c.subjects, c.cycles, c.period, cfg.seed, _out_path(args.out), c.jitter)
    print(m.root / "manifest.json")


def cmd_occlude(args, cfg):
    from .occlusion import OcclusionSpec, parse_band, synthesize_occlusion
    from .silhouette import load_manifest, save_corpus

    band = parse_band(args.band)
    out = []
    for i, seq in enumerate(load_manifest(args.input)):
        state = int(np.random.SeedSequence([cfg.seed, i]).generate_state(1)[0])
        occluded, _ = synthesize_occlusion(seq, OcclusionSpec(band, rng_seed=state, contiguous=args.contiguous))
        out.append(occluded)
    print(save_corpus(out, _out_path(args.out)).root / "manifest.json")


def cmd_detect(args, cfg):
    from .occlusion import detect_occluded_frames, detector_from_name, mark_occluded
    from .silhouette import load_manifest, save_corpus

    detector = detector_from_name(args.detector)
    out = []
    for seq in load_manifest(args.input):
        mask = detect_occluded_frames(seq, detector)
        log.info("%s/%s: %d occluded frames", seq.subject_id, seq.sequence_id, len(mask))
        out.append(mark_occluded(seq, mask))
    print(save_corpus(out, _out_path(args.out)).root / "manifest.json")


def cmd_train_ae(args, cfg):
    from .autoencoder import AutoencoderConfig, save_autoencoder, train_autoencoder
    from .silhouette import FrameStatus, load_manifest

    frames = [f for s in load_manifest(args.corpus) for f in s.frames if f.status is FrameStatus.OBSERVED]
    a = cfg.ae
    if a.frames < len(frames):
        pick = np.sort(np.random.default_rng(cfg.seed).choice(len(frames), a.frames, replace=False))
        frames = [frames[i] for i in pick]
    model, history = train_autoencoder(frames, AutoencoderConfig(a.epochs, a.batch_size, a.learning_rate,
                                                                 cfg.seed, cfg.dtype))
    print(save_autoencoder(model, _out_path(args.out)))
    log.info("final loss %.5f after %d epochs", history[-1], len(history))


def cmd_train_lstm(args, cfg):
    from .autoencoder import load_autoencoder
    from .predictors import PredictorConfig, save_predictor, train_predictor
    from .silhouette import load_manifest

    ls = cfg.lstm
    p_cfg = PredictorConfig(ls.hidden, ls.epochs, ls.batch_size, ls.learning_rate, seed=cfg.seed, dtype=cfg.dtype,
                            reverse_backward=ls.reverse_backward)
    model, history = train_predictor(args.direction, load_manifest(args.corpus), load_autoencoder(args.ae), p_cfg)
    print(save_predictor(model, _out_path(args.out)))
    log.info("final mse %.6f after %d epochs", history[-1], len(history))


def cmd_train_fusion(args, cfg):
    from .autoencoder import load_autoencoder
    from .fusion import FusionConfig, save_fusion, train_fusion
    from .predictors import load_predictor
    from .reconstruct import build_fusion_triples
    from .silhouette import load_manifest

    fs = cfg.fusion
    triples = build_fusion_triples(load_manifest(args.corpus), load_autoencoder(args.ae), load_predictor(args.m1),
                                   load_predictor(args.m2), fs.band, fs.repeats, cfg.seed)
    f_cfg = FusionConfig(fs.block_count, fs.width, fs.epochs, fs.batch_size, fs.learning_rate, cfg.seed, cfg.dtype)
    model, history = train_fusion(None, triples, f_cfg)
    print(save_fusion(model, _out_path(args.out)))
    log.info("%d triples, final bce %.5f", len(triples), history[-1])


def cmd_reconstruct(args, cfg):
    from .autoencoder import load_autoencoder
    from .fusion import load_fusion
    from .occlusion import OcclusionMask
    from .predictors import load_predictor
    from .reconstruct import ReconstructionModels, reconstruct_detailed
    from .silhouette import load_manifest, save_corpus

    if args.single_direction is None and args.fusion is None:
        raise SystemExit("--fusion is required unless --single-direction is given")
    models = ReconstructionModels(load_autoencoder(args.ae), load_predictor(args.m1), load_predictor(args.m2),
                                  load_fusion(args.fusion) if args.fusion else None)
    out = []
    for seq in load_manifest(args.input):
        res = reconstruct_detailed(seq, OcclusionMask.of(seq), models, args.single_direction)
        if res.unreconstructable:
            log.warning("%s/%s: frames %s could not be reconstructed", seq.subject_id, seq.sequence_id,
                        res.unreconstructable)
        out.append(res.sequence)
    print(save_corpus(out, _out_path(args.out)).root / "manifest.json")


def cmd_gei(args, cfg):
    from .recognition import cycle_geis, gei_features
    from .silhouette import load_manifest, write_pgm

    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    feats, labels, images = [], [], []
    for seq in load_manifest(args.input):
        for c, g in enumerate(cycle_geis(seq, args.occluded)):
            feats.append(gei_features(g))
            labels.append(seq.subject_id)
            images.append(g.values)
            write_pgm(out / f"{seq.subject_id}__{seq.sequence_id}__cycle{c:02d}.pgm", g.values >= 0.5)
    np.savez(out / "geis.npz", geis=np.stack(images), features=np.stack(feats), labels=np.array(labels))
    print(out / "geis.npz")


def cmd_train_forest(args, cfg):
    from .recognition import ForestConfig, save_forest, train_forest

    data = np.load(args.geis)
    geis = list(zip(data["geis"], [str(s) for s in data["labels"]]))
    print(save_forest(train_forest(geis, ForestConfig(cfg.forest.n_trees, cfg.seed)), _out_path(args.out)))


def _load_models(models_dir: Path):
    from .autoencoder import load_autoencoder
    from .fusion import load_fusion
    from .predictors import load_predictor
    from .recognition import load_forest
    from .reconstruct import ReconstructionModels

    d = Path(models_dir)
    models = ReconstructionModels(load_autoencoder(d / "ae.ckpt"), load_predictor(d / "m1.ckpt"),
                                  load_predictor(d / "m2.ckpt"), load_fusion(d / "fusion.ckpt"))
    return models, load_forest(d / "forest.bin")


def cmd_evaluate(args, cfg):
    from .evaluation import corpus_hash, emit_report, run_band_sweep
    from .pipeline import file_digest
    from .silhouette import load_manifest

    corpus = load_manifest(args.corpus)
    models, forest = _load_models(args.models)
    report = run_band_sweep(corpus, cfg.bands, models, forest, cfg.seed, args.contiguous)
    d = Path(args.models)
    report.metadata.update({
        "corpus_hash": corpus_hash(corpus),
        "checkpoints": {k: file_digest(d / f) for k, f in (("ae", "ae.ckpt"), ("m1", "m1.ckpt"), ("m2", "m2.ckpt"),
                                                            ("fusion", "fusion.ckpt"), ("forest", "forest.bin"))},
        "config": cfg.result_dict(),
    })
    for p in emit_report(report, _out_path(args.out)):
        print(p)


def cmd_report(args, cfg):
    from .evaluation import EvaluationReport, emit_report

    for p in emit_report(EvaluationReport.read(args.results), _out_path(args.out)):
        print(p)


def cmd_pipeline(args, cfg):
    from .pipeline import run_pipeline

    report = run_pipeline(cfg)
    out = cfg.resolved_output() / "results" / "results.md"
    print(out.read_text() if out.exists() else report.to_json())


COMMANDS = {
    "synth": cmd_synth, "occlude": cmd_occlude, "detect": cmd_detect, "train-ae": cmd_train_ae,
    "train-lstm": cmd_train_lstm, "train-fusion": cmd_train_fusion, "reconstruct": cmd_reconstruct,
    "gei": cmd_gei, "train-forest": cmd_train_forest, "evaluate": cmd_evaluate, "report": cmd_report,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaitrecon", description="Occluded gait-silhouette reconstruction")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    p = {name: sub.add_parser(name) for name in COMMANDS}
    for name, sp in p.items():
        sp.add_argument("--config", help="run config JSON; flags override it")
        for flag in SUBCOMMAND_FLAGS[name]:
            _, typ, help_ = FLAGS[flag]
            sp.add_argument(f"--{flag}", type=typ, default=None, help=help_)

    p["synth"].add_argument("--out", required=True)
    for name in ("occlude", "detect", "reconstruct", "gei"):
        p[name].add_argument("--in", dest="input", required=True, help="input manifest")
        p[name].add_argument("--out", required=True)
    p["occlude"].add_argument("--band", required=True, help="LOW:HIGH, e.g. 0.40:0.50")
    p["occlude"].add_argument("--contiguous", action="store_true")
    p["detect"].add_argument("--detector", default="heuristic", help="heuristic or cnn:PATH")
    for name in ("train-ae", "train-lstm", "train-fusion"):
        p[name].add_argument("--corpus", required=True)
        p[name].add_argument("--out", required=True)
    for name in ("train-lstm", "train-fusion"):
        p[name].add_argument("--ae", required=True)
    p["train-lstm"].add_argument("--direction", choices=("forward", "backward"), required=True)
    p["train-fusion"].add_argument("--m1", required=True)
    p["train-fusion"].add_argument("--m2", required=True)
    r = p["reconstruct"]
    for flag in ("ae", "m1", "m2"):
        r.add_argument(f"--{flag}", required=True)
    r.add_argument("--fusion")
    r.add_argument("--single-direction", choices=("forward", "backward"))
    p["gei"].add_argument("--occluded", choices=("skip", "black"), default="skip")
    p["train-forest"].add_argument("--geis", required=True, help="geis.npz written by the gei command")
    p["train-forest"].add_argument("--out", required=True)
    e = p["evaluate"]
    e.add_argument("--corpus", required=True)
    e.add_argument("--models", required=True, help="directory with ae.ckpt, m1.ckpt, m2.ckpt, fusion.ckpt, forest.bin")
    e.add_argument("--out", required=True)
    e.add_argument("--contiguous", action="store_true")
    p["report"].add_argument("--results", required=True)
    p["report"].add_argument("--out", required=True)
    p["pipeline"].add_argument("--out", help="output directory")
    p["pipeline"].add_argument("--corpus", help="use this manifest instead of a synthetic corpus")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
    except (ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"gaitrecon: bad configuration: {exc}", file=sys.stderr)
        return 2
    level = logging.DEBUG if args.verbose else getattr(logging, cfg.log_level.upper(), logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    warnings.simplefilter("default")
    deterministic_torch()
    try:
        COMMANDS[args.command](args, cfg)
    except StageError as exc:
        print(f"gaitrecon {args.command}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"gaitrecon {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
