"""On-disk cache of frozen-backbone features.

One tensor file per image (features) plus the label maps and a manifest
recording the backbone/dataset fingerprint. The manifest is written
last, so its presence marks a complete cache; a fingerprint mismatch on
load or rebuild means the cache belongs to different inputs and must be
rebuilt.

Features are computed one image at a time, and consumers evaluate the
same way, so cached and freshly computed features are bit-identical.
"""

from __future__ import annotations

import hashlib
import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..engine.serialize import load_tensor, save_tensor
from ..engine.tensor import Tensor
from ..errors import ConfigError, DataError, StaleCacheError
from .backbone import Backbone
from .data import SyntheticDataset

CACHE_VERSION = 1


@dataclass
class CachedFeatures:
    """In-memory view of a feature cache."""

    features: np.ndarray  # (n, c, fh, fw) float32
    labels: np.ndarray  # (n, h, w) int64
    num_classes: int
    fingerprint: str

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_channels(self) -> int:
        return self.features.shape[1]

    @property
    def label_hw(self) -> tuple:
        return self.labels.shape[1], self.labels.shape[2]


def _joint_fingerprint(dataset: SyntheticDataset, backbone: Backbone) -> str:
    text = f"cache-v{CACHE_VERSION}|{dataset.fingerprint()}|{backbone.fingerprint()}"
    return hashlib.sha256(text.encode()).hexdigest()


def forward_features(images: np.ndarray, backbone: Backbone) -> np.ndarray:
    """Forward every image through the backbone one at a time (the same
    arithmetic path consumers use, so results are bit-reproducible)."""
    n = images.shape[0]
    first = backbone.forward(Tensor(images[0:1])).data
    features = np.empty((n,) + first.shape[1:], dtype=np.float32)
    features[0] = first[0]
    for i in range(1, n):
        features[i] = backbone.forward(Tensor(images[i : i + 1])).data[0]
    return features


def compute_features(dataset: SyntheticDataset, backbone: Backbone) -> CachedFeatures:
    """In-memory equivalent of build_cache (no disk round trip)."""
    if not backbone.frozen:
        raise ConfigError("feature caching requires a frozen backbone")
    return CachedFeatures(
        features=forward_features(dataset.images, backbone),
        labels=dataset.labels.copy(),
        num_classes=dataset.num_classes,
        fingerprint=_joint_fingerprint(dataset, backbone),
    )


def build_cache(
    dataset: SyntheticDataset,
    backbone: Backbone,
    cache_dir,
    force: bool = False,
) -> CachedFeatures:
    """Write (or reuse) the on-disk cache and return its contents.

    A complete cache with a matching fingerprint is loaded as-is; a
    mismatched one raises unless ``force`` wipes and rebuilds it.
    """
    if not backbone.frozen:
        raise ConfigError("feature caching requires a frozen backbone")
    out = Path(cache_dir)
    manifest_path = out / "manifest.json"
    fingerprint = _joint_fingerprint(dataset, backbone)
    if manifest_path.exists():
        existing = json.loads(manifest_path.read_text()).get("fingerprint")
        if existing == fingerprint:
            return load_cache(out)
        if not force:
            raise StaleCacheError(
                f"cache at {out} was built for fingerprint {existing}, current inputs "
                f"give {fingerprint}; delete the directory or rebuild with force"
            )
        shutil.rmtree(out)

    computed = compute_features(dataset, backbone)
    (out / "features").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(len(computed)):
        feature_file = f"features/feat_{i:05d}.dpct"
        label_file = f"labels/lab_{i:05d}.dpct"
        save_tensor(out / feature_file, computed.features[i])
        save_tensor(out / label_file, computed.labels[i].astype(np.float32))
        entries.append({"id": i, "feature_file": feature_file, "label_file": label_file})
    manifest = {
        "version": CACHE_VERSION,
        "fingerprint": fingerprint,
        "backbone_fingerprint": backbone.fingerprint(),
        "num_classes": computed.num_classes,
        "feature_shape": list(computed.features.shape[1:]),
        "label_shape": list(computed.labels.shape[1:]),
        "entries": entries,
    }
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return computed


def load_cache(cache_dir) -> CachedFeatures:
    src = Path(cache_dir)
    manifest_path = src / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"cache manifest missing (incomplete cache?): {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"cache manifest corrupt: {manifest_path}: {exc}") from exc
    try:
        entries = manifest["entries"]
        fingerprint = manifest["fingerprint"]
        num_classes = manifest["num_classes"]
        feature_shape = tuple(manifest["feature_shape"])
        label_shape = tuple(manifest["label_shape"])
    except KeyError as exc:
        raise DataError(f"cache manifest incomplete: {manifest_path}: missing {exc}") from exc
    features = np.empty((len(entries),) + feature_shape, dtype=np.float32)
    labels = np.empty((len(entries),) + label_shape, dtype=np.int64)
    for i, entry in enumerate(entries):
        feat = load_tensor(src / entry["feature_file"])
        if feat.shape != feature_shape:
            raise DataError(
                f"cached feature {entry['feature_file']} has shape {feat.shape}, "
                f"manifest says {feature_shape}"
            )
        features[i] = feat
        labels[i] = np.rint(load_tensor(src / entry["label_file"])).astype(np.int64)
    return CachedFeatures(
        features=features,
        labels=labels,
        num_classes=num_classes,
        fingerprint=fingerprint,
    )
