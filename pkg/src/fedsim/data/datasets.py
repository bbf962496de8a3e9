"""Datasets: CIFAR-10 binary batches, synthetic class blobs, preprocessing.

Images are always (N, 3, H, W) float arrays holding raw byte values in
[0, 255] until a preprocessing step rescales them.  Standardization
statistics must come from the training split and be reused verbatim on
validation/test data.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..errors import FormatError
from .. import rng as rngmod

CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 1024 pixel bytes
CIFAR_RECORDS_PER_BATCH = 10000
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"


class Preprocessing(Enum):
    RAW = "raw"
    SCALED = "scaled"
    STANDARDIZED = "standardized"


@dataclass
class Dataset:
    images: np.ndarray  # (N, 3, H, W) float32
    labels: np.ndarray  # (N,) int64
    class_count: int
    split: str = "train"  # train | val | test

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[1] != 3:
            raise FormatError(f"images must be (N, 3, H, W), got {self.images.shape}")
        if len(self.labels) != len(self.images) or len(self.images) == 0:
            raise FormatError(
                f"{len(self.labels)} labels for {len(self.images)} images (need N > 0 and equal)"
            )
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise FormatError(
                f"labels outside [0, {self.class_count}): {self.labels.min()}..{self.labels.max()}"
            )

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, indices: np.ndarray, split: Optional[str] = None) -> "Dataset":
        return Dataset(
            self.images[indices], self.labels[indices], self.class_count, split or self.split
        )

    def label_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)


def _read_cifar_file(path: Path) -> tuple[np.ndarray, np.ndarray]:
    if not path.is_file():
        raise FormatError(
            f"missing CIFAR-10 batch (expected {CIFAR_RECORDS_PER_BATCH * CIFAR_RECORD_BYTES} bytes)",
            str(path),
        )
    raw = np.fromfile(path, dtype=np.uint8)
    expected = CIFAR_RECORDS_PER_BATCH * CIFAR_RECORD_BYTES
    if raw.size != expected:
        raise FormatError(f"expected {expected} bytes, found {raw.size}", str(path))
    records = raw.reshape(CIFAR_RECORDS_PER_BATCH, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32)
    return images, labels


def load_cifar10(dir_path: Union[str, Path]) -> tuple[Dataset, Dataset]:
    """Load the standard binary batches from ``dir_path``.

    Accepts either the directory containing the ``*.bin`` files or its
    parent holding the ``cifar-10-batches-bin`` folder.
    """
    root = Path(dir_path)
    if (root / "cifar-10-batches-bin").is_dir():
        root = root / "cifar-10-batches-bin"
    train_parts = [_read_cifar_file(root / name) for name in CIFAR_TRAIN_FILES]
    train_images = np.concatenate([p[0] for p in train_parts])
    train_labels = np.concatenate([p[1] for p in train_parts])
    test_images, test_labels = _read_cifar_file(root / CIFAR_TEST_FILE)
    train = Dataset(train_images, train_labels, 10, "train")
    test = Dataset(test_images, test_labels, 10, "test")
    return train, test


def synthesize_dataset(
    class_count: int,
    n: int,
    height: int = 32,
    width: int = 32,
    seed: int = 0,
    *,
    class_scale: float = 55.0,
    noise_scale: float = 48.0,
    coarse: int = 4,
) -> Dataset:
    """Class-conditional blob images in raw byte range.

    Each class owns a fixed low-resolution pattern (``coarse`` x ``coarse``
    per channel, block-upsampled); samples add per-pixel Gaussian noise and
    a random brightness shift.  Classes are linearly separable by design.
    """
    gen = rngmod.stream(seed, rngmod.SYNTH)
    reps_h = -(-height // coarse)
    reps_w = -(-width // coarse)
    prototypes = np.empty((class_count, 3, height, width), dtype=np.float32)
    for c in range(class_count):
        cgen = rngmod.stream(seed, rngmod.SYNTH, c + 1)
        pattern = cgen.uniform(-1.0, 1.0, size=(3, coarse, coarse))
        up = np.repeat(np.repeat(pattern, reps_h, axis=1), reps_w, axis=2)
        prototypes[c] = 128.0 + class_scale * up[:, :height, :width]
    base = n // class_count
    counts = np.full(class_count, base, dtype=np.int64)
    counts[: n - base * class_count] += 1
    labels = np.repeat(np.arange(class_count), counts)
    gen.shuffle(labels)
    noise = gen.normal(0.0, noise_scale, size=(n, 3, height, width)).astype(np.float32)
    brightness = gen.uniform(-20.0, 20.0, size=(n, 1, 1, 1)).astype(np.float32)
    images = np.clip(prototypes[labels] + noise + brightness, 0.0, 255.0)
    return Dataset(images, labels, class_count, "train")


def channel_stats(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std over every pixel of the dataset."""
    mean = ds.images.mean(axis=(0, 2, 3), dtype=np.float64)
    std = ds.images.std(axis=(0, 2, 3), dtype=np.float64)
    return mean.astype(np.float32), std.astype(np.float32)


def preprocess(
    ds: Dataset,
    kind: Preprocessing,
    train_stats: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> Dataset:
    """Apply a preprocessing mode, returning a new dataset.

    Standardization on a non-train split requires the training statistics.
    """
    if kind is Preprocessing.RAW:
        return replace(ds, images=ds.images.copy())
    if kind is Preprocessing.SCALED:
        return replace(ds, images=(ds.images / np.float32(255.0)))
    if kind is Preprocessing.STANDARDIZED:
        if train_stats is None:
            if ds.split != "train":
                raise FormatError(
                    f"standardizing a {ds.split!r} split requires training statistics"
                )
            train_stats = channel_stats(ds)
        mean, std = train_stats
        m = np.asarray(mean, dtype=np.float32).reshape(1, 3, 1, 1)
        s = np.asarray(std, dtype=np.float32).reshape(1, 3, 1, 1)
        return replace(ds, images=(ds.images - m) / s)
    raise ValueError(f"unknown preprocessing {kind!r}")


def preprocess_images(
    images: np.ndarray,
    kind: Preprocessing,
    train_stats: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> np.ndarray:
    """Same transform as :func:`preprocess` for a bare image array."""
    if kind is Preprocessing.RAW:
        return images.copy()
    if kind is Preprocessing.SCALED:
        return images / np.float32(255.0)
    if kind is Preprocessing.STANDARDIZED:
        if train_stats is None:
            raise FormatError("standardizing raw images requires training statistics")
        mean, std = train_stats
        m = np.asarray(mean, dtype=np.float32).reshape(1, 3, 1, 1)
        s = np.asarray(std, dtype=np.float32).reshape(1, 3, 1, 1)
        return (images - m) / s
    raise ValueError(f"unknown preprocessing {kind!r}")


def train_val_split(ds: Dataset, val_fraction: float = 0.1, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Carve a seeded server-validation slice off a training set."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")
    gen = rngmod.stream(seed, rngmod.SPLIT)
    perm = gen.permutation(len(ds))
    n_val = max(1, int(round(val_fraction * len(ds))))
    return ds.subset(perm[n_val:], "train"), ds.subset(perm[:n_val], "val")
