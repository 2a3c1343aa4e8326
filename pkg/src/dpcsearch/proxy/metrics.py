"""Segmentation quality: confusion matrices and mean IOU."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ConfigError, DataError

IGNORE_LABEL = 255


@dataclass
class MiouResult:
    miou: float
    per_class_iou: np.ndarray
    confusion: np.ndarray


def confusion_matrix(
    truth: np.ndarray,
    pred: np.ndarray,
    num_classes: int,
    ignore_label: int = IGNORE_LABEL,
) -> np.ndarray:
    """confusion[t][p] counts non-ignored pixels with truth t predicted p."""
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if truth.shape != pred.shape:
        raise DataError(f"truth shape {truth.shape} != prediction shape {pred.shape}")
    if not np.issubdtype(truth.dtype, np.integer) or not np.issubdtype(pred.dtype, np.integer):
        raise DataError(
            f"labels must be integers, got {truth.dtype} and {pred.dtype}"
        )
    keep = truth != ignore_label
    t = truth[keep]
    p = pred[keep]
    if ((t < 0) | (t >= num_classes)).any():
        raise DataError(f"truth label outside [0, {num_classes}) present")
    if ((p < 0) | (p >= num_classes)).any():
        raise DataError(f"predicted label outside [0, {num_classes}) present")
    flat = t.astype(np.int64) * num_classes + p.astype(np.int64)
    counts = np.bincount(flat, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def iou_from_confusion(confusion: np.ndarray) -> MiouResult:
    """Per-class IOU = TP/(TP+FP+FN); classes with zero union get NaN and
    are excluded from the mean. All-ignored input yields mIOU 0."""
    confusion = np.asarray(confusion)
    tp = np.diag(confusion).astype(np.float64)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    union = tp + fp + fn
    per_class = np.full(confusion.shape[0], np.nan)
    nonzero = union > 0
    per_class[nonzero] = tp[nonzero] / union[nonzero]
    miou = float(np.mean(per_class[nonzero])) if nonzero.any() else 0.0
    return MiouResult(miou=miou, per_class_iou=per_class, confusion=confusion)


def miou(
    truths,
    preds,
    num_classes: int,
    ignore_label: int = IGNORE_LABEL,
) -> float:
    """Mean IOU over paired label maps (any iterables of (h, w) arrays)."""
    total = np.zeros((num_classes, num_classes), dtype=np.int64)
    for truth, pred in zip(truths, preds):
        total += confusion_matrix(truth, pred, num_classes, ignore_label)
    return iou_from_confusion(total).miou


def evaluate_miou(
    predict: Callable[[np.ndarray], np.ndarray],
    images: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    ignore_label: int = IGNORE_LABEL,
) -> MiouResult:
    """Accumulate the confusion matrix image by image.

    ``predict`` maps one input (leading batch axis of size 1) to either a
    label map (n,h,w) or logits (n,k,h,w), which get argmaxed here.
    """
    total = np.zeros((num_classes, num_classes), dtype=np.int64)
    for i in range(labels.shape[0]):
        out = np.asarray(predict(images[i : i + 1]))
        if out.ndim == 4:
            out = out.argmax(axis=1)
        total += confusion_matrix(labels[i : i + 1], out, num_classes, ignore_label)
    return iou_from_confusion(total)
