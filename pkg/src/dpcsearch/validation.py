"""Input validation for the estimator API."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .proxy.metrics import IGNORE_LABEL
from .space import Genotype, decode


def check_images(X) -> np.ndarray:
    """Coerce to float32 (n, c, h, w); reject anything else."""
    X = np.asarray(X)
    if X.ndim != 4:
        raise ValidationError(f"images must be 4-d (n, c, h, w), got shape {X.shape}")
    if X.shape[0] < 1 or X.shape[1] < 1:
        raise ValidationError(f"images need n >= 1 and c >= 1, got shape {X.shape}")
    X = X.astype(np.float32, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValidationError("images contain non-finite values")
    return np.ascontiguousarray(X)


def check_labels(y, ignore_label: int = IGNORE_LABEL) -> np.ndarray:
    """Coerce to int64 (n, h, w); values must be class ids or the ignore
    label."""
    y = np.asarray(y)
    if y.ndim != 3:
        raise ValidationError(f"labels must be 3-d (n, h, w), got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if np.issubdtype(y.dtype, np.floating) and np.all(y == np.rint(y)):
            y = np.rint(y)
        else:
            raise ValidationError(f"labels must be integers, got dtype {y.dtype}")
    y = y.astype(np.int64, copy=False)
    bad = (y < 0) & (y != ignore_label)
    if bad.any():
        raise ValidationError(
            f"labels must be >= 0 or the ignore value {ignore_label}"
        )
    return np.ascontiguousarray(y)


def check_matching(X: np.ndarray, y: np.ndarray) -> None:
    if X.shape[0] != y.shape[0]:
        raise ValidationError(
            f"{X.shape[0]} images but {y.shape[0]} label maps"
        )
    if X.shape[2:] != y.shape[1:]:
        raise ValidationError(
            f"image spatial dims {X.shape[2:]} do not match labels {y.shape[1:]}"
        )


def infer_num_classes(y: np.ndarray, ignore_label: int = IGNORE_LABEL) -> int:
    """Number of classes = 1 + max non-ignored label; at least 2."""
    keep = y[y != ignore_label]
    if keep.size == 0:
        raise ValidationError("labels contain only ignored pixels")
    return max(2, int(keep.max()) + 1)


def as_genotype(value) -> Genotype:
    """Accept a Genotype, canonical JSON text, or None (baseline cell)."""
    from .space import aspp_genotype

    if value is None:
        return aspp_genotype()
    if isinstance(value, Genotype):
        return value
    if isinstance(value, str):
        return decode(value)
    raise ValidationError(
        f"genotype must be a Genotype, JSON text, or None, got {type(value).__name__}"
    )
