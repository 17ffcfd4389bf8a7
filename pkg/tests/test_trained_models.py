"""Checks that need trained models; they reuse the session-wide desk-scale run."""
import numpy as np
import pytest

from gaitrecon.autoencoder import decode, encode, encode_frames
from gaitrecon.evaluation import dice
from gaitrecon.fusion import fuse_batch
from gaitrecon.predictors import CONTEXT, PredictorConfig, build_windows, predict_batch, train_predictor
from gaitrecon.reconstruct import build_fusion_triples
from gaitrecon.silhouette import GaitSequence

pytestmark = pytest.mark.slow


def test_autoencoder_soft_dice_on_training_frames(desk_run):
    ae = desk_run.models.ae
    scores = [dice(decode(ae, encode(ae, f)), f.pixels).score for f in desk_run.ae_frames]
    assert min(scores) >= 0.95


def test_forward_prediction_decodes_close_to_truth(desk_run):
    ae, m1 = desk_run.models.ae, desk_run.models.m1
    seq = desk_run.test[0]
    embs = encode_frames(ae, list(seq.frames))
    ctx, _ = build_windows("forward", [seq], [embs])
    preds = predict_batch(m1, ctx)
    scores = [dice(decode(ae, p), seq.frames[k + CONTEXT].pixels).score for k, p in enumerate(preds)]
    assert np.mean(scores) >= 0.85


def test_static_pose_is_held(desk_run):
    # trained only on still sequences, the predictor should echo a repeated pose back
    ae = desk_run.models.ae
    poses = desk_run.ae_frames[:20]
    seqs = [GaitSequence((f,) * 8, f"p{i}", "still") for i, f in enumerate(poses)]
    embs = [encode_frames(ae, [f])[0][None].repeat(8, axis=0) for f in poses]
    windows = build_windows("forward", seqs, embs)
    model, _ = train_predictor("forward", None, ae, PredictorConfig(hidden=256, epochs=60, seed=1,
                                                                    saturation_patience=60), windows=windows)
    for f in poses:
        ctx = np.repeat(encode_frames(ae, [f]), CONTEXT, axis=0)[None]
        assert dice(decode(ae, predict_batch(model, ctx)[0]), f.pixels).score >= 0.9


@pytest.fixture(scope="module")
def held_out_triples(desk_run):
    m = desk_run.models
    return build_fusion_triples(desk_run.test, m.ae, m.m1, m.m2, band=(0.1, 0.3), repeats=2, seed=77)


def test_fusion_agreement_case(desk_run):
    frames = np.stack([f.pixels for s in desk_run.test[:3] for f in s.frames[::4]])
    fused = fuse_batch(desk_run.models.fusion, frames, frames)
    assert min(dice(p, t).score for p, t in zip(fused, frames)) >= 0.95


def test_fusion_of_blank_inputs_is_near_empty(desk_run):
    blank = np.zeros((1, 150, 200))
    assert (fuse_batch(desk_run.models.fusion, blank, blank)[0] >= 0.5).mean() <= 0.05


def test_fusion_beats_single_directions_on_held_out_triples(desk_run, held_out_triples):
    f1 = np.stack([t[0] for t in held_out_triples])
    f2 = np.stack([t[1] for t in held_out_triples])
    truth = np.stack([t[2] for t in held_out_triples])
    fused = fuse_batch(desk_run.models.fusion, f1, f2)
    score = {name: np.mean([dice(p, t).score for p, t in zip(pred, truth)])
             for name, pred in (("fused", fused), ("f1", f1), ("f2", f2))}
    assert len(held_out_triples) >= 20
    assert score["fused"] >= score["f1"] and score["fused"] >= score["f2"] - 0.02, score
