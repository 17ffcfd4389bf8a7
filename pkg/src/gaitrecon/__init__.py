"""Reconstruction of occluded frames in binary gait-silhouette sequences.

Frames are embedded by a convolutional autoencoder, missing embeddings are
predicted from five neighbouring frames on each side by two LSTMs, the two
decoded estimates are merged by a small residual CNN, and the results are
scored with GEI Dice and a bagged-tree recognizer.
"""
from .autoencoder import AutoencoderConfig, AutoencoderModel, decode, encode, train_autoencoder
from .evaluation import CmcSeries, DiceResult, EvaluationReport, compute_cmc, dice, emit_report, run_band_sweep
from .fusion import FusionConfig, FusionModel, fuse, train_fusion
from .occlusion import (HeuristicDetector, OcclusionMask, OcclusionSpec, detect_occluded_frames,
                        synthesize_occlusion)
from .pipeline import RunConfig, run_pipeline
from .predictors import ContextWindow, LstmPredictor, PredictorConfig, predict, train_predictor
from .recognition import ForestConfig, GaitEnergyImage, classify, compute_gei, segment_cycles, train_forest
from .reconstruct import ReconstructionModels, ReconstructionPlan, plan_reconstruction, reconstruct_sequence
from .silhouette import FrameStatus, GaitSequence, SequenceManifest, SilhouetteFrame, load_manifest, save_corpus
from .synth import generate_corpus, synth_corpus

__version__ = "0.1.0"
