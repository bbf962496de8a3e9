"""Binary containers for datasets ("FSD1") and partitions ("FSP1").

FSD1, little-endian:
    magic b"FSD1", u8 split-tag length + UTF-8 tag, u32 class_count,
    u32 N, u32 C, u32 H, u32 W, N*u32 labels, N*C*H*W f32 images.

FSP1, little-endian:
    magic b"FSP1", u32 n_clients, u32 class_count,
    per client: u32 count + count*u32 indices,
    n_clients*class_count u32 histogram.

``save_partition`` also writes a human-readable ``<path>.hist.json``
sidecar with the per-client class histograms.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Union

import numpy as np

from ..errors import FormatError
from .datasets import Dataset
from .partition import Partition, PartitionSpec

DATASET_MAGIC = b"FSD1"
PARTITION_MAGIC = b"FSP1"


def save_dataset(path: Union[str, Path], ds: Dataset) -> None:
    n, c, h, w = ds.images.shape
    tag = ds.split.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<B", len(tag)))
        fh.write(tag)
        fh.write(struct.pack("<5I", ds.class_count, n, c, h, w))
        fh.write(ds.labels.astype("<u4").tobytes())
        fh.write(np.ascontiguousarray(ds.images, dtype="<f4").tobytes())


def _read_exact(fh, n: int, what: str, path: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated while reading {what}", path)
    return data


def load_dataset(path: Union[str, Path]) -> Dataset:
    p = str(path)
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic", p) != DATASET_MAGIC:
            raise FormatError(f"bad magic, expected {DATASET_MAGIC!r}", p)
        (tag_len,) = struct.unpack("<B", _read_exact(fh, 1, "split tag length", p))
        split = _read_exact(fh, tag_len, "split tag", p).decode("utf-8")
        k, n, c, h, w = struct.unpack("<5I", _read_exact(fh, 20, "dimensions", p))
        labels = np.frombuffer(_read_exact(fh, 4 * n, "labels", p), dtype="<u4").astype(np.int64)
        images = np.frombuffer(
            _read_exact(fh, 4 * n * c * h * w, "images", p), dtype="<f4"
        ).reshape(n, c, h, w).copy()
        if fh.read(1):
            raise FormatError("trailing bytes after images", p)
    return Dataset(images, labels, k, split)


def save_partition(path: Union[str, Path], part: Partition) -> None:
    n_clients, k = part.histograms.shape
    with open(path, "wb") as fh:
        fh.write(PARTITION_MAGIC)
        fh.write(struct.pack("<2I", n_clients, k))
        for idx in part.assignments:
            fh.write(struct.pack("<I", len(idx)))
            fh.write(idx.astype("<u4").tobytes())
        fh.write(part.histograms.astype("<u4").tobytes())
    sidecar = {
        f"client_{i}": {str(c): int(part.histograms[i, c]) for c in range(k)
                        if part.histograms[i, c]}
        for i in range(n_clients)
    }
    Path(f"{path}.hist.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_partition(path: Union[str, Path], spec: PartitionSpec | None = None) -> Partition:
    p = str(path)
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic", p) != PARTITION_MAGIC:
            raise FormatError(f"bad magic, expected {PARTITION_MAGIC!r}", p)
        n_clients, k = struct.unpack("<2I", _read_exact(fh, 8, "header", p))
        assignments = []
        for i in range(n_clients):
            (count,) = struct.unpack("<I", _read_exact(fh, 4, f"client {i} count", p))
            idx = np.frombuffer(
                _read_exact(fh, 4 * count, f"client {i} indices", p), dtype="<u4"
            ).astype(np.int64)
            assignments.append(idx)
        hist = np.frombuffer(
            _read_exact(fh, 4 * n_clients * k, "histograms", p), dtype="<u4"
        ).reshape(n_clients, k).astype(np.int64)
        if fh.read(1):
            raise FormatError("trailing bytes after histograms", p)
    return Partition(assignments, hist, spec or PartitionSpec(n_clients=n_clients))
