"""Proxy task: synthetic data, frozen backbone, feature cache, training."""

from .backbone import Backbone, BackboneConfig, conv3x3_strided
from .cache import (
    CachedFeatures,
    build_cache,
    compute_features,
    forward_features,
    load_cache,
)
from .data import (
    SyntheticDataset,
    SyntheticDatasetConfig,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from .metrics import (
    IGNORE_LABEL,
    MiouResult,
    confusion_matrix,
    evaluate_miou,
    iou_from_confusion,
    miou,
)
from .training import (
    TrainConfig,
    evaluate_cached,
    evaluate_live,
    init_candidate,
    poly_lr,
    predict_from_features,
    split_indices,
    split_loss,
    train_candidate,
    train_full,
)

__all__ = [
    "Backbone",
    "BackboneConfig",
    "CachedFeatures",
    "IGNORE_LABEL",
    "MiouResult",
    "SyntheticDataset",
    "SyntheticDatasetConfig",
    "TrainConfig",
    "build_cache",
    "compute_features",
    "confusion_matrix",
    "conv3x3_strided",
    "evaluate_cached",
    "evaluate_live",
    "evaluate_miou",
    "forward_features",
    "generate_dataset",
    "init_candidate",
    "iou_from_confusion",
    "miou",
    "load_cache",
    "load_dataset",
    "poly_lr",
    "predict_from_features",
    "save_dataset",
    "split_indices",
    "split_loss",
    "train_candidate",
    "train_full",
]
