"""Flat binary weight container ("FSW1").

Layout, all little-endian:

    magic   4 bytes  b"FSW1"
    count   u32      number of tensors
    per tensor:
        name_len  u32
        name      UTF-8 bytes
        rank      u8
        dims      rank * u32
        payload   prod(dims) * f32, C order

Payloads are float32 regardless of in-memory dtype; running statistics are
recognized by their ``.running_mean`` / ``.running_var`` name suffixes when
loading.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from ..errors import FormatError
from .weights import WeightSet

MAGIC = b"FSW1"
_NON_TRAINABLE_SUFFIXES = (".running_mean", ".running_var")


def _write(fh: BinaryIO, ws: WeightSet) -> None:
    fh.write(MAGIC)
    fh.write(struct.pack("<I", len(ws)))
    for name, t in ws.items():
        nb = name.encode("utf-8")
        fh.write(struct.pack("<I", len(nb)))
        fh.write(nb)
        fh.write(struct.pack("<B", t.ndim))
        fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
        fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def save_weights(path: Union[str, Path], ws: WeightSet) -> None:
    with open(path, "wb") as fh:
        _write(fh, ws)


def weights_to_bytes(ws: WeightSet) -> bytes:
    buf = io.BytesIO()
    _write(buf, ws)
    return buf.getvalue()


def _read_exact(fh: BinaryIO, n: int, what: str, path: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated while reading {what} (wanted {n} bytes, got {len(data)})", path)
    return data


def _read(fh: BinaryIO, path: str) -> WeightSet:
    magic = _read_exact(fh, 4, "magic", path)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", path)
    (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count", path))
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = struct.unpack("<I", _read_exact(fh, 4, f"name length of tensor {i}", path))
        name = _read_exact(fh, name_len, f"name of tensor {i}", path).decode("utf-8")
        (rank,) = struct.unpack("<B", _read_exact(fh, 1, f"rank of {name}", path))
        dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, f"dims of {name}", path))
        size = int(np.prod(dims)) if rank else 1
        payload = _read_exact(fh, 4 * size, f"payload of {name}", path)
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    trailing = fh.read(1)
    if trailing:
        raise FormatError("trailing bytes after last tensor", path)
    non_trainable = frozenset(
        n for n in tensors if n.endswith(_NON_TRAINABLE_SUFFIXES)
    )
    return WeightSet(tensors, non_trainable)


def load_weights(path: Union[str, Path]) -> WeightSet:
    with open(path, "rb") as fh:
        return _read(fh, str(path))


def weights_from_bytes(data: bytes) -> WeightSet:
    return _read(io.BytesIO(data), "<bytes>")
