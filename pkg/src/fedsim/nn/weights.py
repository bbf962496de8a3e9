"""Named parameter collections.

A :class:`WeightSet` is an ordered mapping ``name -> ndarray`` plus the set
of names excluded from gradient updates (batch-norm running statistics).
Two WeightSets built from the same model spec always agree on names, order
and shapes, which is what aggregation and SGD rely on.
"""

from __future__ import annotations

from typing import Dict, Iterator, Tuple

import numpy as np

from ..errors import ShapeError


class WeightSet:
    def __init__(self, tensors: Dict[str, np.ndarray], non_trainable: frozenset[str] = frozenset()):
        unknown = non_trainable - tensors.keys()
        if unknown:
            raise ValueError(f"non_trainable names not in tensor set: {sorted(unknown)}")
        self.tensors = dict(tensors)
        self.non_trainable = frozenset(non_trainable)

    # -- mapping-ish surface -------------------------------------------------
    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self.tensors:
            raise KeyError(name)
        self.tensors[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self) -> list[str]:
        return list(self.tensors)

    def items(self) -> Iterator[Tuple[str, np.ndarray]]:
        return iter(self.tensors.items())

    def is_trainable(self, name: str) -> bool:
        return name not in self.non_trainable

    def trainable_names(self) -> list[str]:
        return [n for n in self.tensors if n not in self.non_trainable]

    # -- utilities -----------------------------------------------------------
    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.tensors.values())).dtype

    def copy(self) -> "WeightSet":
        return WeightSet({n: t.copy() for n, t in self.tensors.items()}, self.non_trainable)

    def astype(self, dtype) -> "WeightSet":
        return WeightSet({n: t.astype(dtype) for n, t in self.tensors.items()}, self.non_trainable)

    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def check_aligned(self, other: "WeightSet") -> None:
        if self.names() != other.names():
            raise ShapeError("weight sets disagree on tensor names/order")
        for name, t in self.tensors.items():
            if t.shape != other.tensors[name].shape:
                raise ShapeError(
                    f"shape mismatch {t.shape} vs {other.tensors[name].shape}", layer=name
                )

    def allclose(self, other: "WeightSet", rtol: float = 0.0, atol: float = 0.0) -> bool:
        self.check_aligned(other)
        return all(
            np.allclose(t, other.tensors[n], rtol=rtol, atol=atol) for n, t in self.tensors.items()
        )

    def equal(self, other: "WeightSet") -> bool:
        """Bit-for-bit equality (dtype included)."""
        self.check_aligned(other)
        return all(
            t.dtype == other.tensors[n].dtype and np.array_equal(t, other.tensors[n])
            for n, t in self.tensors.items()
        )
