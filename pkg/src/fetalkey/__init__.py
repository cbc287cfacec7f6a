"""Keyframe detection for fetal-brain ultrasound videos.

A per-frame five-class classifier feeds two scorers: a frame quality
metric built from temporally stable, test-time-augmented predictions, and
a two-layer GRU head that learns to predict that metric from classifier
features.
"""

__version__ = "0.1.0"

from .core import (FEATURE_DIM, N_CLASSES, ClassLabel, FeatureVector, Frame, ProbVector,
                   RawVector, argmax_class)
from .classifier import classify, classify_batch, load_model, synthetic_classifier
from .quality import (QualitySeries, compute_quality_series, harden, harden_and_filter,
                      margin_quality, quality_from_probabilities, stability_mask, tta_aggregate)
from .transforms import AffineSpec, TtaCatalogue, apply_affine, default_tta_catalogue, random_train_augment
from .gru import GruHeadModel, TrainConfig, backward, forward, load_weights, save_weights, train
from .dataset import (DatasetManifest, ImageEntry, VideoEntry, epoch_undersample, manifest_stats,
                      patient_disjoint_split, video_stats)
from .pipeline import PipelineConfig, ingest_frames, run_metric, run_gru_scoring, select_keyframes
