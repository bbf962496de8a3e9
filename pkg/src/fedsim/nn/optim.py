"""Plain SGD on the trainable tensors of a WeightSet."""

from __future__ import annotations

from typing import Dict, Mapping

import numpy as np

from ..errors import ShapeError
from .weights import WeightSet


def sgd_step(weights: WeightSet, grads: Mapping[str, np.ndarray], lr: float) -> WeightSet:
    """w' = w - lr * g elementwise on trainable tensors; running stats pass through."""
    if lr < 0:
        raise ValueError(f"learning rate must be nonnegative, got {lr}")
    trainable = weights.trainable_names()
    if set(grads) != set(trainable):
        missing = set(trainable) - set(grads)
        extra = set(grads) - set(trainable)
        raise ShapeError(f"gradient names misaligned (missing {sorted(missing)}, extra {sorted(extra)})")
    out: Dict[str, np.ndarray] = {}
    for name, t in weights.items():
        if name in grads:
            g = grads[name]
            if g.shape != t.shape:
                raise ShapeError(f"gradient shape {g.shape} != weight shape {t.shape}", name)
            out[name] = (t - lr * g).astype(t.dtype)
        else:
            out[name] = t.copy()
    return WeightSet(out, weights.non_trainable)
