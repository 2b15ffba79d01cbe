"""Datasets for the desk-scale benchmark: CIFAR-10 binary batches, a Gaussian
blobs fixture, stratified splitting, normalization, and crop/flip augmentation.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = [
    "Dataset",
    "CIFAR10_MEAN",
    "CIFAR10_STD",
    "CIFAR10_CLASSES",
    "normalize",
    "augment",
    "augment_batch",
    "load_cifar10",
    "split",
    "make_blobs",
]

CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2023, 0.1994, 0.2010)
CIFAR10_CLASSES = [
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
]

RECORD_BYTES = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes


@dataclass
class Dataset:
    """Images with integer class labels. ``images`` has samples on the leading
    axis, conventionally (n, channels, h, w). Immutable by convention after
    construction; share freely across readers."""

    images: np.ndarray
    labels: np.ndarray
    class_names: list[str]

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if len(self.images) == 0:
            raise DataError("dataset is empty")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


def normalize(images: np.ndarray, mean, std) -> np.ndarray:
    """Per-channel (x - mean) / std for (n, c, h, w) images."""
    mean = np.asarray(mean, dtype=images.dtype)
    std = np.asarray(std, dtype=images.dtype)
    if np.any(std <= 0):
        raise ValueError("std components must be > 0")
    return (images - mean[None, :, None, None]) / std[None, :, None, None]


def augment(image: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Random horizontal flip (p=0.5), vertical flip (p=0.5), then a random
    crop from ``pad``-pixel zero padding back to the original size.

    Draw order is fixed (hflip, vflip, then both crop offsets in one call) so
    a given generator state always produces the same output.
    """
    c, h, w = image.shape
    out = image
    if rng.random() < 0.5:
        out = out[:, :, ::-1]
    if rng.random() < 0.5:
        out = out[:, ::-1, :]
    padded = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=image.dtype)
    padded[:, pad:pad + h, pad:pad + w] = out
    oy, ox = rng.integers(0, 2 * pad + 1, size=2)
    return padded[:, oy:oy + h, ox:ox + w].copy()


def augment_batch(images: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    return np.stack([augment(img, rng, pad) for img in images])


def load_cifar10(path, n_per_class: int) -> Dataset:
    """Load the first ``n_per_class`` samples of each class from CIFAR-10
    binary batches (3073-byte records: label byte then channel-planar R,G,B
    pixels, row-major 32x32). ``path`` may be one .bin file or a directory of
    them. Pixels are scaled to [0, 1]."""
    if n_per_class < 1:
        raise DataError(f"n_per_class must be >= 1, got {n_per_class}")
    p = Path(path)
    if p.is_file():
        files = [p]
    elif p.is_dir():
        files = sorted(p.glob("*.bin"))
        if not files:
            raise DataError(f"no .bin batch files under {p}")
    else:
        raise DataError(f"no such file or directory: {p}")

    images: list[np.ndarray] = []
    labels: list[int] = []
    counts = [0] * 10
    for f in files:
        raw = f.read_bytes()
        n_full, leftover = divmod(len(raw), RECORD_BYTES)
        if leftover:
            raise DataError(
                f"{f}: truncated record at byte offset {n_full * RECORD_BYTES} "
                f"({leftover} trailing bytes)"
            )
        for r in range(n_full):
            offset = r * RECORD_BYTES
            label = raw[offset]
            if label > 9:
                raise DataError(
                    f"{f}: invalid label byte {label} at offset {offset}"
                )
            if counts[label] >= n_per_class:
                continue
            counts[label] += 1
            pixels = np.frombuffer(raw, dtype=np.uint8, count=3072, offset=offset + 1)
            images.append(pixels.reshape(3, 32, 32).astype(np.float32) / np.float32(255))
            labels.append(label)
        if all(c >= n_per_class for c in counts):
            break
    short = [c for c, n in enumerate(counts) if n < n_per_class]
    if short:
        raise DataError(
            f"classes {short} have fewer than {n_per_class} samples in {p}"
        )
    return Dataset(np.stack(images), np.array(labels, dtype=np.int64),
                   list(CIFAR10_CLASSES))


def split(dataset: Dataset, num: int, den: int, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified train/valid split in ratio num:den (e.g. 5:1).

    Per class, round(n * num / (num + den)) samples go to train; the rest to
    valid. Deterministic for a given seed; the two parts are disjoint and
    their union is the original multiset.
    """
    if num < 1 or den < 1:
        raise DataError(f"split ratio parts must be >= 1, got {num}:{den}")
    if len(dataset) < num + den:
        raise DataError(
            f"dataset of {len(dataset)} samples cannot be split {num}:{den}"
        )
    rng = np.random.default_rng(seed)
    frac = num / (num + den)
    train_idx: list[np.ndarray] = []
    valid_idx: list[np.ndarray] = []
    for c in np.unique(dataset.labels):
        idx = np.flatnonzero(dataset.labels == c)
        idx = rng.permutation(idx)
        n_train = round(len(idx) * frac)
        train_idx.append(idx[:n_train])
        valid_idx.append(idx[n_train:])
    tr = np.concatenate(train_idx)
    va = np.concatenate(valid_idx)
    return (
        Dataset(dataset.images[tr], dataset.labels[tr], list(dataset.class_names)),
        Dataset(dataset.images[va], dataset.labels[va], list(dataset.class_names)),
    )


def make_blobs(n_per_class: int = 200, n_classes: int = 3, shape=(3, 8, 8),
               noise: float = 0.08, seed: int = 0) -> Dataset:
    """Separable Gaussian-blob 'images': each class is a fixed random mean
    pattern plus pixel noise, clipped to [0, 1]."""
    rng = np.random.default_rng(seed)
    means = rng.uniform(0.25, 0.75, size=(n_classes,) + tuple(shape))
    images = []
    labels = []
    for c in range(n_classes):
        samples = means[c] + rng.normal(0.0, noise, size=(n_per_class,) + tuple(shape))
        images.append(np.clip(samples, 0.0, 1.0))
        labels.append(np.full(n_per_class, c, dtype=np.int64))
    return Dataset(
        np.concatenate(images).astype(np.float32),
        np.concatenate(labels),
        [f"blob{c}" for c in range(n_classes)],
    )
