"""Synthetic multi-scale dense-prediction data.

Images contain solid rectangles and ellipses on a dark background.
Foreground classes come in small/large pairs that share a palette colour
(class 1 = small shapes of colour 1, class 2 = large shapes of colour 1,
class 3 = small shapes of colour 2, ...). Per-pixel colour alone
therefore cannot separate a pair: telling a 10-pixel object from a
40-pixel one takes context at the right range, which is exactly what the
searched cells differ in. Sizes are drawn from the low and high ends of
the scale range with a dead zone between, so the two size classes never
blur into each other.

Shapes never overlap and always fit inside the canvas, so object extent
is fully observable and the label map exactly matches the rendered
geometry.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..engine.serialize import load_tensor, save_tensor
from ..errors import ConfigError, DataError
from ..seeding import derive_seed

_PALETTE = np.array(
    [
        [0.15, 0.15, 0.18],  # background
        [0.85, 0.25, 0.20],
        [0.20, 0.45, 0.85],
        [0.95, 0.75, 0.15],
        [0.30, 0.75, 0.35],
        [0.70, 0.30, 0.75],
        [0.20, 0.75, 0.75],
        [0.90, 0.50, 0.60],
    ],
    dtype=np.float32,
)


@dataclass(frozen=True)
class SyntheticDatasetConfig:
    num_images: int = 1000
    image_h: int = 64
    image_w: int = 64
    num_classes: int = 5
    min_shapes: int = 3
    max_shapes: int = 5
    min_scale: float = 0.1
    max_scale: float = 0.8
    min_aspect: float = 0.6667
    max_aspect: float = 1.5
    noise: float = 0.08
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_images < 1:
            raise ConfigError(f"num_images must be >= 1, got {self.num_images}")
        if self.image_h < 8 or self.image_w < 8:
            raise ConfigError(
                f"image dims must be >= 8, got ({self.image_h}, {self.image_w})"
            )
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0 <= self.min_shapes <= self.max_shapes:
            raise ConfigError(
                f"shape count range invalid: min_shapes={self.min_shapes}, "
                f"max_shapes={self.max_shapes}"
            )
        if not 0 < self.min_scale <= self.max_scale:
            raise ConfigError(
                f"scale range invalid: min_scale={self.min_scale}, max_scale={self.max_scale}"
            )
        if not 0 < self.min_aspect <= self.max_aspect:
            raise ConfigError(
                f"aspect range invalid: min_aspect={self.min_aspect}, "
                f"max_aspect={self.max_aspect}"
            )
        if self.noise < 0:
            raise ConfigError(f"noise must be >= 0, got {self.noise}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")


@dataclass
class SyntheticDataset:
    """In-memory dataset: images (n,3,h,w) float32, labels (n,h,w) int64."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    config: SyntheticDatasetConfig

    def __len__(self) -> int:
        return self.images.shape[0]

    def fingerprint(self) -> str:
        text = "dataset-v2|" + "|".join(
            f"{k}={v}" for k, v in sorted(asdict(self.config).items())
        )
        return hashlib.sha256(text.encode()).hexdigest()


def _render_image(cfg: SyntheticDatasetConfig, index: int):
    rng = np.random.default_rng(derive_seed(cfg.seed, "image", index))
    h, w = cfg.image_h, cfg.image_w
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)

    image = np.empty((3, h, w), dtype=np.float32)
    image[:] = _PALETTE[0][:, None, None] * (0.8 + 0.4 * rng.random())
    labels = np.zeros((h, w), dtype=np.int64)
    occupied = np.zeros((h, w), dtype=bool)

    span = cfg.max_scale - cfg.min_scale
    n_shapes = int(rng.integers(cfg.min_shapes, cfg.max_shapes + 1))
    classes: list[int] = []
    while len(classes) < n_shapes:
        classes.extend(rng.permutation(np.arange(1, cfg.num_classes)).tolist())
    classes = classes[:n_shapes]
    classes.sort(key=lambda c: c % 2)  # large (even) classes claim space first

    for cls in classes:
        family = (cls + 1) // 2
        colour = _PALETTE[(family - 1) % (len(_PALETTE) - 1) + 1]
        is_rect = family % 2 == 1
        if cls % 2 == 1:
            scale = float(rng.uniform(cfg.min_scale, cfg.min_scale + 0.3 * span))
        else:
            scale = float(rng.uniform(cfg.max_scale - 0.3 * span, cfg.max_scale))
        aspect = float(
            np.exp(rng.uniform(math.log(cfg.min_aspect), math.log(cfg.max_aspect)))
        )
        half_h = float(np.clip(scale * h * math.sqrt(aspect) / 2.0, 1.0, (h - 2) / 2))
        half_w = float(np.clip(scale * w / math.sqrt(aspect) / 2.0, 1.0, (w - 2) / 2))

        for _ in range(10):  # rejection sampling keeps shapes disjoint
            cy = float(rng.uniform(half_h, h - 1 - half_h))
            cx = float(rng.uniform(half_w, w - 1 - half_w))
            if is_rect:
                mask = (np.abs(yy - cy) <= half_h) & (np.abs(xx - cx) <= half_w)
            else:
                mask = ((yy - cy) / half_h) ** 2 + ((xx - cx) / half_w) ** 2 <= 1.0
            if mask.any() and not (mask & occupied).any():
                shade = 0.9 + 0.2 * rng.random()
                image[:, mask] = (colour * shade).astype(np.float32)[:, None]
                labels[mask] = cls
                occupied |= mask
                break

    if cfg.noise > 0:
        image += rng.normal(0.0, cfg.noise, size=image.shape).astype(np.float32)
    np.clip(image, 0.0, 1.0, out=image)
    return image, labels


def generate_dataset(cfg: SyntheticDatasetConfig) -> SyntheticDataset:
    """Render the whole dataset; deterministic (each image's generator is
    derived from the config seed and the image index)."""
    images = np.empty((cfg.num_images, 3, cfg.image_h, cfg.image_w), dtype=np.float32)
    labels = np.empty((cfg.num_images, cfg.image_h, cfg.image_w), dtype=np.int64)
    for i in range(cfg.num_images):
        images[i], labels[i] = _render_image(cfg, i)
    return SyntheticDataset(images, labels, cfg.num_classes, cfg)


def save_dataset(dataset: SyntheticDataset, out_dir) -> None:
    """Write one image and one label tensor file per sample, then the
    manifest last so partially written directories are detectable."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(len(dataset)):
        image_file = f"images/img_{i:05d}.dpct"
        label_file = f"labels/lab_{i:05d}.dpct"
        save_tensor(out / image_file, dataset.images[i])
        save_tensor(out / label_file, dataset.labels[i].astype(np.float32))
        entries.append(
            {
                "id": i,
                "image_file": image_file,
                "label_file": label_file,
                "h": int(dataset.config.image_h),
                "w": int(dataset.config.image_w),
            }
        )
    manifest = {
        "version": 1,
        "num_classes": dataset.num_classes,
        "fingerprint": dataset.fingerprint(),
        "config": asdict(dataset.config),
        "entries": entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_dataset(in_dir) -> SyntheticDataset:
    src = Path(in_dir)
    manifest_path = src / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"dataset manifest missing: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"dataset manifest corrupt: {manifest_path}: {exc}") from exc
    try:
        cfg = SyntheticDatasetConfig(**manifest["config"])
        entries = manifest["entries"]
        num_classes = manifest["num_classes"]
    except (KeyError, TypeError) as exc:
        raise DataError(f"dataset manifest incomplete: {manifest_path}: {exc}") from exc
    images = np.empty((len(entries), 3, cfg.image_h, cfg.image_w), dtype=np.float32)
    labels = np.empty((len(entries), cfg.image_h, cfg.image_w), dtype=np.int64)
    for i, entry in enumerate(entries):
        image = load_tensor(src / entry["image_file"])
        label = load_tensor(src / entry["label_file"])
        if image.shape != (3, cfg.image_h, cfg.image_w):
            raise DataError(
                f"image {entry['image_file']} has shape {image.shape}, "
                f"expected (3, {cfg.image_h}, {cfg.image_w})"
            )
        images[i] = image
        labels[i] = np.rint(label).astype(np.int64)
    return SyntheticDataset(images, labels, num_classes, cfg)
