"""patchcon: two-stage supervised-contrastive training and evaluation for
patch-based binary image classifiers."""

__version__ = "0.1.0"

from .augment import AugmentPolicy, hflip, two_view, vflip
from .core import normalize_rows, pairwise_dot
from .data import (
    DatasetSplit,
    PatchRecord,
    SplitSpec,
    dataset_stats,
    load_dataset,
    parse_patch_filename,
    split_dataset,
)
from .evaluate import (
    ConfusionMatrix,
    MetricsReport,
    compute_metrics,
    confusion_matrix,
    pca_fit,
    pca_transform,
    reconstruct_prediction_map,
)
from .losses import LossConfig, cross_entropy, supcon_loss, supcon_loss_bruteforce
from .model import EncoderConfig, ToyViT, build_classifier, build_encoder, build_projection
from .synthetic import SyntheticConfig, generate_synthetic_dataset
from .train import (
    BaselineConfig,
    EarlyStopState,
    Stage1Config,
    Stage2Config,
    TrainConfig,
    early_stopping_step,
    extract_frozen_features,
    fine_tune_baseline,
    train_stage1,
    train_stage2,
)

__all__ = [name for name in dir() if not name.startswith("_")]
