"""Fill the blackened frames of one held-out walk.

Point ``--run`` at the output directory of ``gaitrecon pipeline``. Without one
a small, quick configuration is trained first (a couple of minutes on CPU), so
expect rough reconstructions in that case.

    gaitrecon pipeline --out runs/default
    python3 demos/02_reconstruct_sequence.py --run runs/default
"""
import argparse
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from gaitrecon.autoencoder import load_autoencoder
from gaitrecon.evaluation import dice
from gaitrecon.fusion import load_fusion
from gaitrecon.occlusion import OcclusionSpec, synthesize_occlusion
from gaitrecon.pipeline import RunConfig, run_pipeline, split_gallery
from gaitrecon.predictors import load_predictor
from gaitrecon.recognition import compute_gei
from gaitrecon.reconstruct import ReconstructionModels, reconstruct_detailed
from gaitrecon.silhouette import load_manifest


def quick_run(out: Path) -> Path:
    cfg = RunConfig.from_dict({
        "output_dir": str(out),
        "corpus": {"subjects": 4, "cycles": 4},
        "ae": {"frames": 30, "epochs": 15}, "lstm": {"epochs": 4, "hidden": 256},
        "fusion": {"epochs": 10}, "forest": {"n_trees": 20},
    })
    run_pipeline(cfg)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--run", type=Path)
    ap.add_argument("--out", type=Path, default=Path("demo-out"))
    ap.add_argument("--band", type=float, nargs=2, default=(0.3, 0.4))
    args = ap.parse_args()

    run = args.run or quick_run(args.out / "quick-run")
    cfg = RunConfig.read(run / "config.json") if (run / "config.json").exists() else RunConfig()
    ck = run / "checkpoints"
    models = ReconstructionModels(load_autoencoder(ck / "ae.ckpt"), load_predictor(ck / "m1.ckpt"),
                                  load_predictor(ck / "m2.ckpt"), load_fusion(ck / "fusion.ckpt"))
    _, test = split_gallery(load_manifest(run / "corpus" / "manifest.json"), cfg.corpus.gallery_cycles)
    truth = test[0]

    occluded, mask = synthesize_occlusion(truth, OcclusionSpec(tuple(args.band), rng_seed=11))
    result = reconstruct_detailed(occluded, mask, models)
    for i in mask.indices:
        got = result.sequence.frames[i]
        source = result.plan.sources[i].value
        print(f"frame {i:2d}  {source:14s}  dice {dice(got.pixels, truth.frames[i].pixels).score:.3f}")

    gei = lambda s: compute_gei(s.frames).values  # noqa: E731
    print(f"GEI dice, occluded frames skipped: {dice(compute_gei(occluded.frames).values, gei(truth)).score:.4f}")
    print(f"GEI dice, reconstructed:          {dice(gei(result.sequence), gei(truth)).score:.4f}")

    args.out.mkdir(parents=True, exist_ok=True)
    fig, axes = plt.subplots(3, len(mask), figsize=(2 * len(mask), 5), squeeze=False)
    for col, i in enumerate(mask.indices):
        for row, (label, seq) in enumerate((("truth", truth), ("occluded", occluded), ("filled", result.sequence))):
            ax = axes[row, col]
            ax.imshow(seq.frames[i].pixels, cmap="gray", vmin=0, vmax=1)
            ax.set_title(f"{label} {i}", fontsize=8)
            ax.axis("off")
    fig.tight_layout()
    fig.savefig(args.out / "reconstruction.png", dpi=80)
    print("wrote", args.out / "reconstruction.png")


if __name__ == "__main__":
    main()
