"""Synthetic localized-shape images and an optional image-folder loader."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

log = logging.getLogger(__name__)

SHAPES = ("disk", "ring", "cross", "bar0", "square", "bar45", "bar90", "xcross", "bar135", "triangle")


@dataclass(frozen=True)
class Sample:
    image: np.ndarray  # (1, C, H, W)
    label: int
    center: tuple[float, float] | None = None
    extent: float | None = None


@dataclass
class Split:
    images: np.ndarray  # (N, C, H, W) in [0, 1]
    labels: np.ndarray  # (N,) int64
    ids: np.ndarray  # (N,) sample identities, unique across splits
    centers: np.ndarray | None = None  # (N, 2) row, col
    extents: np.ndarray | None = None  # (N,)

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> Sample:
        center = None if self.centers is None else (float(self.centers[i, 0]), float(self.centers[i, 1]))
        extent = None if self.extents is None else float(self.extents[i])
        return Sample(self.images[i : i + 1], int(self.labels[i]), center, extent)

    def subset(self, index) -> "Split":
        index = np.asarray(index)
        pick = lambda a: None if a is None else a[index]  # noqa: E731
        return Split(self.images[index], self.labels[index], self.ids[index], pick(self.centers), pick(self.extents))


@dataclass
class Dataset:
    train: Split
    test: Split
    n_classes: int
    class_names: list[str]
    descriptor: dict = field(default_factory=dict)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.train.images.shape[1:])


def _render(shape: str, size: int, cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    d2 = dx * dx + dy * dy
    if shape == "disk":
        mask = d2 <= r * r
    elif shape == "ring":
        mask = (d2 <= r * r) & (d2 >= (r - 1.6) ** 2)
    elif shape == "cross":
        mask = ((np.abs(dx) <= 1) & (np.abs(dy) <= r)) | ((np.abs(dy) <= 1) & (np.abs(dx) <= r))
    elif shape == "square":
        cheb = np.maximum(np.abs(dx), np.abs(dy))
        mask = (cheb <= r) & (cheb >= r - 1.5)
    elif shape == "xcross":
        mask = (_bar(dx, dy, r, 45) | _bar(dx, dy, r, 135))
    elif shape == "triangle":
        mask = (dy <= r) & (dy >= -r) & (np.abs(dx) <= (dy + r) / 2)
    elif shape.startswith("bar"):
        mask = _bar(dx, dy, r, float(shape[3:]))
    else:
        raise ValueError(f"unknown shape {shape!r}")
    return mask.astype(np.float64)


def _bar(dx, dy, r, degrees):
    t = np.deg2rad(degrees)
    along = dx * np.cos(t) + dy * np.sin(t)
    across = -dx * np.sin(t) + dy * np.cos(t)
    return (np.abs(along) <= r) & (np.abs(across) <= 1.0)


def generate_synthetic(n_classes: int = 4, n_per_class: int = 200, image_size: int = 32,
                       noise_level: float = 0.1, seed: int = 0, test_fraction: float = 0.2) -> Dataset:
    """One localized shape per image at a uniformly random position, plus uniform noise."""
    if not 2 <= n_classes <= len(SHAPES):
        raise ValueError(f"n_classes must be in [2, {len(SHAPES)}], got {n_classes}")
    if image_size < 16:
        raise ValueError(f"image_size must be >= 16, got {image_size}")
    if n_per_class < 2:
        raise ValueError(f"n_per_class must be >= 2, got {n_per_class}")
    if not 0.0 <= noise_level <= 1.0:
        raise ValueError(f"noise_level must be in [0, 1], got {noise_level}")

    rng = np.random.default_rng(seed)
    r = 0.15 * image_size
    lo, hi = r + 1.0, image_size - r - 2.0
    images, labels, centers = [], [], []
    for c in range(n_classes):
        for _ in range(n_per_class):
            cy, cx = rng.uniform(lo, hi, size=2)
            img = _render(SHAPES[c], image_size, cy, cx, r)
            if noise_level > 0:
                img = np.clip(img + noise_level * rng.uniform(0.0, 1.0, img.shape), 0.0, 1.0)
            images.append(img[None])
            labels.append(c)
            centers.append((cy, cx))
    everything = Split(np.stack(images), np.array(labels, dtype=np.int64), np.arange(len(labels)),
                       np.array(centers), np.full(len(labels), r))
    descriptor = {"kind": "synthetic", "n_classes": n_classes, "n_per_class": n_per_class,
                  "image_size": image_size, "noise_level": noise_level, "seed": seed}
    return split_dataset(everything, n_classes, list(SHAPES[:n_classes]), rng, test_fraction, descriptor)


def split_dataset(samples: Split, n_classes: int, class_names: list[str], rng: np.random.Generator,
                  test_fraction: float = 0.2, descriptor: dict | None = None) -> Dataset:
    """Stratified train/test split; each class contributes round(test_fraction * n) test samples."""
    train_idx, test_idx = [], []
    for c in range(n_classes):
        idx = rng.permutation(np.flatnonzero(samples.labels == c))
        n_test = int(round(test_fraction * len(idx)))
        test_idx.extend(idx[:n_test])
        train_idx.extend(idx[n_test:])
    train_idx = rng.permutation(np.array(train_idx, dtype=np.int64))
    test_idx = rng.permutation(np.array(test_idx, dtype=np.int64))
    return Dataset(samples.subset(train_idx), samples.subset(test_idx), n_classes, class_names, dict(descriptor or {}))


def sample_batch(split: Split, batch_size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw one batch without replacement."""
    if len(split) == 0:
        raise ValueError("cannot sample from an empty split")
    if not 0 < batch_size <= len(split):
        raise ValueError(f"batch size {batch_size} must be in [1, {len(split)}]")
    idx = rng.choice(len(split), size=batch_size, replace=False)
    return split.images[idx], split.labels[idx]


def epoch_batches(split: Split, batch_size: int, rng: np.random.Generator) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """One pass over a fresh permutation of ``split``; a trailing partial batch is dropped."""
    if len(split) == 0:
        raise ValueError("cannot sample from an empty split")
    if not 0 < batch_size <= len(split):
        raise ValueError(f"batch size {batch_size} must be in [1, {len(split)}]")
    order = rng.permutation(len(split))
    for start in range(0, len(order) - batch_size + 1, batch_size):
        idx = order[start : start + batch_size]
        yield split.images[idx], split.labels[idx]


@dataclass
class ImageFolder:
    samples: Split
    class_names: list[str]
    skipped: int


def load_image_dir(path, image_size: int, channels: int = 1) -> ImageFolder:
    """Read ``<path>/<class_name>/<file>`` images, nearest-resized and scaled to [0, 1]."""
    from PIL import Image, UnidentifiedImageError

    if channels not in (1, 3):
        raise ValueError("channels must be 1 or 3")
    root = Path(path)
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir()) if root.is_dir() else []
    if not class_dirs:
        raise ValueError(f"no class directories under {root}")
    mode = "L" if channels == 1 else "RGB"
    images, labels, skipped = [], [], 0
    for label, cdir in enumerate(class_dirs):
        count = 0
        for f in sorted(p for p in cdir.iterdir() if p.is_file()):
            try:
                with Image.open(f) as im:
                    im = im.convert(mode).resize((image_size, image_size), Image.NEAREST)
                    arr = np.asarray(im, dtype=np.float64) / 255.0
            except (OSError, UnidentifiedImageError, ValueError) as e:
                log.warning("skipping unreadable image %s: %s", f, e)
                skipped += 1
                continue
            images.append(arr[None] if channels == 1 else arr.transpose(2, 0, 1))
            labels.append(label)
            count += 1
        if count == 0:
            raise ValueError(f"class directory {cdir.name!r} has no readable images")
    split = Split(np.stack(images), np.array(labels, dtype=np.int64), np.arange(len(labels)))
    return ImageFolder(split, [d.name for d in class_dirs], skipped)
