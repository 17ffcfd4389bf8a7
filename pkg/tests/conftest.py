"""Shared desk-scale pipeline run and the acceptance summary printed after the session."""
from dataclasses import dataclass
from pathlib import Path

import pytest

from gaitrecon.pipeline import RunConfig, run_pipeline, split_gallery, training_frames
from gaitrecon.autoencoder import load_autoencoder
from gaitrecon.fusion import load_fusion
from gaitrecon.predictors import load_predictor
from gaitrecon.recognition import load_forest
from gaitrecon.reconstruct import ReconstructionModels
from gaitrecon.silhouette import load_manifest

_CRITERIA: dict[int, tuple[str, bool, str]] = {}


@dataclass
class DeskRun:
    config: RunConfig
    out: Path
    report: object
    events: list
    models: ReconstructionModels
    forest: object
    train: list
    test: list
    ae_frames: list


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory) -> DeskRun:
    """The default configuration run once end to end; several checks share it."""
    out = tmp_path_factory.mktemp("desk-run")
    config = RunConfig(output_dir=str(out))
    events = []
    report = run_pipeline(config, events)
    ck = out / "checkpoints"
    models = ReconstructionModels(load_autoencoder(ck / "ae.ckpt"), load_predictor(ck / "m1.ckpt"),
                                  load_predictor(ck / "m2.ckpt"), load_fusion(ck / "fusion.ckpt"))
    corpus = load_manifest(out / "corpus" / "manifest.json")
    train, test = split_gallery(corpus, config.corpus.gallery_cycles)
    frames = training_frames(train, config.ae.frames, config.seed)
    return DeskRun(config, out, report, events, models, load_forest(ck / "forest.bin"), train, test, frames)


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(n, title, passed, detail)``."""

    def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
        _CRITERIA[number] = (title, bool(passed), detail)
        print(f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} {detail}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")
