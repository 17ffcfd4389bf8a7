import json

import numpy as np
import pytest

from gaitrecon.autoencoder import AutoencoderModel
from gaitrecon.evaluation import (CmcSeries, EvaluationReport, compute_cmc, dice, emit_report, run_band_sweep,
                                  true_rank)
from gaitrecon.fusion import FusionModel
from gaitrecon.occlusion import OcclusionMask, mark_occluded
from gaitrecon.predictors import LstmPredictor
from gaitrecon.recognition import ForestConfig, compute_gei, cycle_geis, train_forest
from gaitrecon.reconstruct import ReconstructionModels
from gaitrecon.synth import generate_corpus


def _dice_loop(a, b, linear=False):
    num = den = 0.0
    for x, y in zip(a.ravel().tolist(), b.ravel().tolist()):
        num += x * y
        den += x + y if linear else x * x + y * y
    return 1.0 if den == 0 else 2 * num / den


def test_dice_matches_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        shape = tuple(rng.integers(1, 12, size=2))
        a, b = rng.random(shape), rng.random(shape)
        if rng.random() < 0.3:
            a = (a < 0.5).astype(float)
        assert dice(a, b).score == pytest.approx(_dice_loop(a, b), abs=1e-12)
        assert dice(a, b, "soft_linear").score == pytest.approx(_dice_loop(a, b, linear=True), abs=1e-12)
        assert dice(a, b).score == pytest.approx(dice(b, a).score, abs=1e-15)
        assert dice(a, a).score == pytest.approx(1.0, abs=1e-15)


def test_dice_reference_cases():
    assert dice([1, 1, 0], [1, 0, 0]).score == pytest.approx(2 / 3)
    assert dice([1, 1, 0], [1, 0, 0], "soft_linear").score == pytest.approx(2 / 3)
    assert dice([0.5, 0.5], [0.5, 0.5], "soft_linear").score == pytest.approx(0.5)
    x = np.array([[0.2, 0.9], [0.0, 1.0]])
    assert dice(x, x, mode="hard").score == 1.0
    assert dice([1, 0], [0, 1]).score == 0.0
    assert dice(np.zeros(4), np.zeros(4)).score == 1.0
    hard = dice([0.6, 0.4, 0.7], [0.9, 0.9, 0.1], mode="hard")
    assert hard.mode == "hard_threshold_0.5" and hard.score == pytest.approx(0.5)
    with pytest.raises(ValueError):
        dice([1, 0], [1, 0, 0])
    with pytest.raises(ValueError):
        dice([1], [1], mode="fuzzy")


def test_cmc_reference_case():
    subjects = ["a", "b", "c", "d"]
    queries = [(["a", "b", "c", "d"], "a"), (["b", "c", "a", "d"], "c"), (["d", "c", "b", "a"], "a")]
    assert [true_rank(r, t) for r, t in queries] == [1, 2, 4]
    cmc = compute_cmc(queries)
    assert cmc.accuracies == pytest.approx((1 / 3, 2 / 3, 2 / 3, 1.0))
    assert compute_cmc([([(s, 0.25) for s in subjects], "b")]).accuracies == (0.0, 1.0, 1.0, 1.0)
    assert compute_cmc(queries, K=2).accuracies == pytest.approx((1 / 3, 2 / 3))


def test_cmc_errors():
    with pytest.raises(ValueError):
        compute_cmc([])
    with pytest.raises(ValueError):
        compute_cmc([(["a", "b"], "a")], K=3)
    with pytest.raises(ValueError):
        CmcSeries((0.5, 0.4))
    with pytest.raises(ValueError):
        CmcSeries((1.2,))


@pytest.fixture(scope="module")
def setup():
    corpus = generate_corpus(3, 4, 12, seed=8)
    gallery = [(g, s.subject_id) for s in corpus for g in cycle_geis(s)[:2]]
    forest = train_forest(gallery, ForestConfig(n_trees=15, seed=1))
    test = [s.subsequence(24, 48) for s in corpus]
    models = ReconstructionModels(AutoencoderModel(seed=0), LstmPredictor("forward", hidden=4, seed=1),
                                  LstmPredictor("backward", hidden=4, seed=2), FusionModel(1, 4, seed=3))
    return test, models, forest


def test_zero_band_is_the_clean_baseline(setup):
    test, models, forest = setup
    report = run_band_sweep(test, [(0.0, 0.0)], models, forest)
    row = report.bands[0]
    assert row.mean_dice == 1.0 and row.mean_occluded_fraction == 0.0
    clean = compute_cmc([(forest.rank(compute_gei(s.frames[a:b])), s.subject_id)
                         for s in test for a, b in s.cycle_boundaries])
    assert row.rank1_accuracy == clean.at(1)
    assert row.queries == 6


def test_sweep_is_deterministic_and_reports_round_trip(setup, tmp_path):
    test, models, forest = setup
    bands = [(0.05, 0.1), (0.2, 0.3)]
    a = run_band_sweep(test, bands, models, forest, seed=3)
    b = run_band_sweep(test, bands, models, forest, seed=3)
    assert a.to_json() == b.to_json()
    assert set(a.ablation) == {"M1", "M2", "fused"}
    assert 0.05 <= a.bands[0].mean_occluded_fraction <= 0.15
    assert EvaluationReport.from_dict(json.loads(a.to_json())).to_json() == a.to_json()
    paths = emit_report(a, tmp_path / "one")
    again = emit_report(b, tmp_path / "two")
    assert [p.name for p in paths] == ["results.json", "results.md", "cmc.png", "dice.png"]
    assert all(p.read_bytes() == q.read_bytes() for p, q in zip(paths, again))


def test_sweep_input_checks(setup):
    test, models, forest = setup
    with pytest.raises(ValueError):
        run_band_sweep(test, [], models, forest)
    dirty = mark_occluded(test[0], OcclusionMask((3,)))
    with pytest.raises(ValueError):
        run_band_sweep([dirty], [(0.0, 0.0)], models, forest)
    with pytest.raises(ValueError):
        emit_report(EvaluationReport(), ".")


def test_markdown_has_one_row_per_band(tmp_path):
    rows = [{"band": [lo, lo + 0.1], "label": "", "mean_dice": 0.9, "rank1_accuracy": 0.8,
             "cmc": [0.8, 0.9, 1.0], "queries": 4, "mean_occluded_fraction": lo,
             "unreconstructed_frames": 0, "ablation_dice": {}} for lo in (0.0, 0.1, 0.2, 0.3, 0.4)]
    report = EvaluationReport.from_dict({"version": 1, "bands": rows, "ablation": [], "metadata": {}})
    md = emit_report(report, tmp_path)[1].read_text()
    assert sum(line.startswith("| ") and line[2].isdigit() for line in md.splitlines()) == 5
    with pytest.raises(ValueError):
        EvaluationReport.from_dict({"version": 7, "bands": []})
