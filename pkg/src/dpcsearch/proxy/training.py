"""Candidate training on cached features and full training with a live
backbone.

Both loops share one code path: sample a batch, forward the cell,
bilinearly upsample logits to label resolution, softmax cross-entropy
ignoring the void label, SGD with momentum under a polynomial learning
rate. They also share their seed derivations (cell init and batch
stream), so with the backbone learning rate scaled to zero the full loop
reproduces the cached loop exactly: features are computed one image at a
time in both paths, hence bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from random import Random
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..cells import ExecutableCell, compile_cell
from ..engine.optim import init_velocity, sgd_step
from ..engine.ops import bilinear_resize, softmax_xent_loss
from ..engine.tensor import Tensor, backward, from_op
from ..errors import ConfigError, DataError, NumericalError, ValidationError
from ..seeding import derive_seed
from .backbone import Backbone
from .cache import CachedFeatures
from .metrics import IGNORE_LABEL, MiouResult, evaluate_miou


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 300
    batch_size: int = 4
    base_lr: float = 0.01
    lr_power: float = 0.9
    momentum: float = 0.9
    backbone_lr_scale: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.base_lr > 0:
            raise ConfigError(f"base_lr must be > 0, got {self.base_lr}")
        if self.lr_power <= 0:
            raise ConfigError(f"lr_power must be > 0, got {self.lr_power}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.backbone_lr_scale < 0:
            raise ConfigError(
                f"backbone_lr_scale must be >= 0, got {self.backbone_lr_scale}"
            )
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")


def poly_lr(step: int, cfg: TrainConfig) -> float:
    """base_lr * (1 - step/steps) ** lr_power, defined on 0 <= step <= steps."""
    if not 0 <= step <= cfg.steps:
        raise ValidationError(f"step {step} outside [0, {cfg.steps}]")
    return cfg.base_lr * (1.0 - step / cfg.steps) ** cfg.lr_power


def split_indices(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Deterministic split: the last 20% of images by index are held out."""
    val = n // 5
    if val < 1:
        raise DataError(f"need at least 5 images for a train/val split, got {n}")
    return np.arange(0, n - val), np.arange(n - val, n)


def init_candidate(
    genotype, cache: CachedFeatures, cfg: TrainConfig, filters: int = 32
) -> ExecutableCell:
    """The exact cell a training run starts from (deterministic)."""
    if len(cache) == 0:
        raise DataError("feature cache is empty")
    return compile_cell(
        genotype,
        in_channels=cache.feature_channels,
        filters=filters,
        num_classes=cache.num_classes,
        seed=derive_seed(cfg.seed, "init"),
    )


def _stack_batch(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate single-image tensors along the batch axis, splitting
    gradients back out on the way down."""
    data = np.concatenate([x.data for x in xs], axis=0)
    sizes = [x.shape[0] for x in xs]

    def bwd(g: np.ndarray):
        out = []
        offset = 0
        for size in sizes:
            out.append(g[offset : offset + size].copy())
            offset += size
        return tuple(out)

    return from_op(data, tuple(xs), bwd)


def _train_loop(
    cell: ExecutableCell,
    cfg: TrainConfig,
    train_indices: np.ndarray,
    batch_fn,
    backbone: Optional[Backbone] = None,
    ignore_label: int = IGNORE_LABEL,
) -> None:
    params = cell.parameters()
    velocity = init_velocity(params)
    if backbone is not None:
        backbone_params = backbone.parameters()
        backbone_velocity = init_velocity(backbone_params)
    rng = Random(derive_seed(cfg.seed, "batch"))
    count = len(train_indices)
    for step in range(cfg.steps):
        lr = poly_lr(step, cfg)
        sel = [int(train_indices[rng.randrange(count)]) for _ in range(cfg.batch_size)]
        feats, labels = batch_fn(sel)
        logits = cell.forward(feats)[1]
        up = bilinear_resize(logits, labels.shape[1], labels.shape[2])
        loss = softmax_xent_loss(up, labels, ignore_label)
        if not np.isfinite(loss.data):
            raise NumericalError(f"non-finite training loss at step {step}")
        backward(loss)
        sgd_step(params, velocity, lr, cfg.momentum)
        if backbone is not None:
            sgd_step(
                backbone_params, backbone_velocity, lr * cfg.backbone_lr_scale, cfg.momentum
            )


def train_candidate(
    genotype,
    cache: CachedFeatures,
    cfg: TrainConfig,
    filters: int = 32,
    ignore_label: int = IGNORE_LABEL,
) -> Tuple[ExecutableCell, float]:
    """Train cell + head on cached features; returns the trained cell and
    its mIOU on the held-out split."""
    cell = init_candidate(genotype, cache, cfg, filters)
    train_idx, val_idx = split_indices(len(cache))
    label_h, label_w = cache.label_hw

    def batch_fn(sel):
        return Tensor(cache.features[sel]), cache.labels[sel]

    _train_loop(cell, cfg, train_idx, batch_fn, ignore_label=ignore_label)
    result = evaluate_cached(cell, cache, val_idx, ignore_label)
    return cell, result.miou


def train_full(
    genotype,
    images: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    backbone: Backbone,
    cfg: TrainConfig,
    filters: int = 32,
    ignore_label: int = IGNORE_LABEL,
) -> Tuple[ExecutableCell, Backbone, float]:
    """Same loop with live features and gradients flowing into the
    (unfrozen) backbone. Callers wanting the usual reranking setup pass a
    config whose steps are 4x the proxy steps."""
    if backbone.frozen:
        raise ConfigError("train_full needs an unfrozen backbone; pass trainable_copy()")
    n = images.shape[0]
    if n == 0:
        raise DataError("empty dataset")
    if labels.shape[0] != n:
        raise DataError(f"{n} images but {labels.shape[0]} label maps")
    probe = backbone.forward(Tensor(images[0:1])).data
    cell = compile_cell(
        genotype,
        in_channels=probe.shape[1],
        filters=filters,
        num_classes=num_classes,
        seed=derive_seed(cfg.seed, "init"),
    )
    train_idx, val_idx = split_indices(n)

    def batch_fn(sel):
        feats = _stack_batch([backbone.forward(Tensor(images[i : i + 1])) for i in sel])
        return feats, labels[sel]

    _train_loop(cell, cfg, train_idx, batch_fn, backbone=backbone, ignore_label=ignore_label)
    result = evaluate_live(
        cell, backbone, images[val_idx], labels[val_idx], num_classes, ignore_label
    )
    return cell, backbone, result.miou


def predict_from_features(cell: ExecutableCell, features: np.ndarray, out_hw: Tuple[int, int]) -> np.ndarray:
    """Logits at label resolution for a feature batch."""
    logits = cell.forward(Tensor(features))[1]
    return bilinear_resize(logits, out_hw[0], out_hw[1]).data


def evaluate_cached(
    cell: ExecutableCell,
    cache: CachedFeatures,
    indices: np.ndarray,
    ignore_label: int = IGNORE_LABEL,
) -> MiouResult:
    out_hw = cache.label_hw
    return evaluate_miou(
        lambda feats: predict_from_features(cell, feats, out_hw),
        cache.features[indices],
        cache.labels[indices],
        cache.num_classes,
        ignore_label,
    )


def evaluate_live(
    cell: ExecutableCell,
    backbone: Backbone,
    images: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    ignore_label: int = IGNORE_LABEL,
) -> MiouResult:
    out_hw = (labels.shape[1], labels.shape[2])

    def predict(image_batch: np.ndarray) -> np.ndarray:
        feats = backbone.forward(Tensor(image_batch)).data
        return predict_from_features(cell, feats, out_hw)

    return evaluate_miou(predict, images, labels, num_classes, ignore_label)


def split_loss(
    cell: ExecutableCell,
    cache: CachedFeatures,
    indices: np.ndarray,
    ignore_label: int = IGNORE_LABEL,
    batch: int = 32,
) -> float:
    """Mean cross entropy over all non-ignored pixels of the given images
    (used to verify that training actually reduces the training loss)."""
    label_h, label_w = cache.label_hw
    total = 0.0
    pixels = 0
    for start in range(0, len(indices), batch):
        sel = indices[start : start + batch]
        labels = cache.labels[sel]
        logits = predict_from_features(cell, cache.features[sel], (label_h, label_w))
        loss = softmax_xent_loss(Tensor(logits), labels, ignore_label)
        count = int((labels != ignore_label).sum())
        total += loss.item() * count
        pixels += count
    if pixels == 0:
        return 0.0
    return total / pixels
