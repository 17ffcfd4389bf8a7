import json

import numpy as np
import pytest

from gaitrecon.cli import main
from gaitrecon.pipeline import RunConfig, StageError, run_pipeline, split_gallery
from gaitrecon.silhouette import load_manifest
from gaitrecon.synth import generate_corpus


def tiny_config(out, **overrides) -> RunConfig:
    base = {
        "output_dir": str(out), "bands": [[0.05, 0.1], [0.3, 0.4]],
        "corpus": {"subjects": 3, "cycles": 4, "period": 8},
        "ae": {"frames": 6, "epochs": 1}, "lstm": {"hidden": 8, "epochs": 1},
        "fusion": {"epochs": 1, "block_count": 1, "width": 4, "band": [0.05, 0.1], "repeats": 3},
        "forest": {"n_trees": 5},
    }
    return RunConfig.from_dict(base).override(**overrides)


def test_config_round_trip_and_overrides(tmp_path):
    cfg = tiny_config(tmp_path)
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    changed = cfg.override(**{"lstm.epochs": 7, "seed": 3, "ae.frames": None})
    assert changed.lstm.epochs == 7 and changed.seed == 3 and changed.ae.frames == 6
    assert "output_dir" not in cfg.result_dict()
    with pytest.raises(KeyError):
        cfg.override(**{"lstm.depth": 2})
    with pytest.raises(ValueError):
        RunConfig.from_dict({"seeed": 1})
    with pytest.raises(ValueError):
        RunConfig.from_dict({"version": 9})


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("GAITRECON_OUTPUT_ROOT", str(tmp_path))
    assert RunConfig(output_dir="run").resolved_output() == tmp_path / "run"
    assert RunConfig(output_dir="/abs").resolved_output().as_posix() == "/abs"


def test_gallery_split():
    corpus = generate_corpus(2, 4, 8, seed=0)
    train, test = split_gallery(corpus, 2)
    assert [len(s) for s in train] == [16, 16] and [len(s) for s in test] == [16, 16]
    assert train[0].frames == corpus[0].frames[:16]
    with pytest.raises(ValueError):
        split_gallery(corpus, 4)


def test_missing_corpus_names_the_stage(tmp_path):
    cfg = tiny_config(tmp_path / "run", **{"corpus.manifest": str(tmp_path / "nope.json")})
    with pytest.raises(StageError) as err:
        run_pipeline(cfg)
    assert err.value.stage == "corpus" and "corpus" in str(err.value)
    assert (tmp_path / "run" / "FAILED").read_text().startswith("corpus")
    assert main(["pipeline", "--out", str(tmp_path / "cli"), "--corpus", str(tmp_path / "nope.json")]) == 1


@pytest.mark.slow
def test_tiny_pipeline_then_cached_rerun(tmp_path):
    cfg = tiny_config(tmp_path / "run")
    events = []
    report = run_pipeline(cfg, events)
    assert len(report.bands) == 2 and set(report.ablation) == {"M1", "M2", "fused"}
    assert {s for s, what in events if what == "ran"} >= {"train-ae", "train-lstm", "train-fusion", "evaluate"}
    results = tmp_path / "run" / "results" / "results.json"
    first = results.read_bytes()
    assert json.loads(first)["metadata"]["checkpoints"].keys() == {"ae", "m1", "m2", "fusion", "forest"}
    events.clear()
    again = run_pipeline(cfg, events)
    assert dict(events)["train-ae"] == "cached" and dict(events)["evaluate"] == "cached"
    assert [e for e in events if e[0] == "train-lstm"] == [("train-lstm", "cached")] * 2
    assert results.read_bytes() == first and again.to_json() == report.to_json()
    assert not (tmp_path / "run" / "FAILED").exists()
    assert (tmp_path / "run" / "config.json").exists()


def test_cli_data_commands(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    assert main(["synth", "--out", str(corpus), "--subjects", "3", "--cycles", "2", "--period", "8"]) == 0
    seqs = load_manifest(corpus / "manifest.json")
    assert [len(s) for s in seqs] == [16, 16, 16]

    assert main(["occlude", "--in", str(corpus / "manifest.json"), "--out", str(tmp_path / "occ"),
                 "--band", "0.2:0.3", "--seed", "4"]) == 0
    occluded = load_manifest(tmp_path / "occ" / "manifest.json")
    assert all(3 <= len(s.occluded_indices) <= 5 for s in occluded)

    # strip statuses so detection has to find the blank frames on its own
    stripped = json.loads((tmp_path / "occ" / "manifest.json").read_text())
    for e in stripped["entries"]:
        e["occluded_indices"] = []
    (tmp_path / "occ" / "plain.json").write_text(json.dumps(stripped))
    assert main(["detect", "--in", str(tmp_path / "occ" / "plain.json"), "--out", str(tmp_path / "det")]) == 0
    detected = load_manifest(tmp_path / "det" / "manifest.json")
    assert [s.occluded_indices for s in detected] == [s.occluded_indices for s in occluded]

    assert main(["gei", "--in", str(corpus / "manifest.json"), "--out", str(tmp_path / "gei")]) == 0
    data = np.load(tmp_path / "gei" / "geis.npz")
    assert data["features"].shape == (6, 1900) and list(data["labels"]).count(seqs[0].subject_id) == 2
    assert main(["train-forest", "--geis", str(tmp_path / "gei" / "geis.npz"), "--out",
                 str(tmp_path / "forest.bin"), "--trees", "4"]) == 0
    assert (tmp_path / "forest.bin").read_bytes()[:6] == b"GRFRST"


def test_cli_rejects_bad_config(tmp_path, capsys):
    (tmp_path / "bad.json").write_text(json.dumps({"lstm": {"depth": 3}}))
    assert main(["synth", "--out", str(tmp_path / "x"), "--config", str(tmp_path / "bad.json")]) == 2
    assert "bad configuration" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["synth"])


def test_config_file_with_flag_override(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"corpus": {"subjects": 4, "cycles": 1, "period": 8}}))
    assert main(["synth", "--out", str(tmp_path / "c"), "--config", str(tmp_path / "cfg.json"),
                 "--subjects", "2"]) == 0
    assert len(load_manifest(tmp_path / "c" / "manifest.json")) == 2


@pytest.mark.slow
def test_cli_model_commands(tmp_path):
    corpus = str(tmp_path / "corpus" / "manifest.json")
    models = tmp_path / "models"
    steps = [
        ["synth", "--out", str(tmp_path / "corpus"), "--subjects", "3", "--cycles", "2", "--period", "8"],
        ["train-ae", "--corpus", corpus, "--out", str(models / "ae.ckpt"), "--ae-epochs", "1", "--ae-frames", "4"],
        ["train-lstm", "--corpus", corpus, "--ae", str(models / "ae.ckpt"), "--direction", "forward",
         "--out", str(models / "m1.ckpt"), "--hidden", "8", "--lstm-epochs", "1"],
        ["train-lstm", "--corpus", corpus, "--ae", str(models / "ae.ckpt"), "--direction", "backward",
         "--out", str(models / "m2.ckpt"), "--hidden", "8", "--lstm-epochs", "1"],
        ["train-fusion", "--corpus", corpus, "--ae", str(models / "ae.ckpt"), "--m1", str(models / "m1.ckpt"),
         "--m2", str(models / "m2.ckpt"), "--out", str(models / "fusion.ckpt"), "--fusion-epochs", "1",
         "--fusion-blocks", "1", "--fusion-band", "0.2:0.3"],
        ["gei", "--in", corpus, "--out", str(tmp_path / "gei")],
        ["train-forest", "--geis", str(tmp_path / "gei" / "geis.npz"), "--out", str(models / "forest.bin"),
         "--trees", "4"],
        ["occlude", "--in", corpus, "--out", str(tmp_path / "occ"), "--band", "0.1:0.2"],
        ["reconstruct", "--in", str(tmp_path / "occ" / "manifest.json"), "--out", str(tmp_path / "rec"),
         "--ae", str(models / "ae.ckpt"), "--m1", str(models / "m1.ckpt"), "--m2", str(models / "m2.ckpt"),
         "--fusion", str(models / "fusion.ckpt")],
        ["evaluate", "--corpus", corpus, "--models", str(models), "--out", str(tmp_path / "eval"),
         "--bands", "0.05:0.10,0.10:0.20"],
        ["report", "--results", str(tmp_path / "eval" / "results.json"), "--out", str(tmp_path / "again")],
    ]
    for argv in steps:
        assert main(argv) == 0, argv
    rec = load_manifest(tmp_path / "rec" / "manifest.json")
    src = load_manifest(tmp_path / "occ" / "manifest.json")
    for a, b in zip(src, rec):
        assert all(x == y for x, y in zip(a.frames, b.frames) if x.status.value == "observed")
    assert (tmp_path / "again" / "results.json").read_bytes() == (tmp_path / "eval" / "results.json").read_bytes()
    assert len(json.loads((tmp_path / "eval" / "results.json").read_text())["bands"]) == 2
