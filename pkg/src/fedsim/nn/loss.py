"""Softmax cross-entropy with per-class loss weights.

The per-class weight vector is how both the importance-reweighting variant
and the unknown-class loss term are realized: sample i contributes
``class_weights[labels[i]] * nll_i``, and the batch loss is the mean over
the batch size (so all-zero weights give exactly zero loss and gradient).
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import ShapeError


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stable under large logits."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(
    logits: np.ndarray,
    labels: np.ndarray,
    class_weights: Optional[np.ndarray] = None,
) -> tuple[float, np.ndarray]:
    """Weighted-mean negative log softmax and its exact logits gradient."""
    b, k = logits.shape
    labels = np.asarray(labels)
    if class_weights is None:
        cw = np.ones(k, dtype=logits.dtype)
    else:
        cw = np.asarray(class_weights, dtype=logits.dtype)
        if cw.shape != (k,):
            raise ShapeError(f"class_weights shape {cw.shape} != ({k},)", "loss")
        if (cw < 0).any():
            raise ValueError(f"negative class weight: {cw.min()}")
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    nll = lse - z[np.arange(b), labels]
    sample_w = cw[labels]
    loss = float((sample_w * nll).sum() / b)
    probs = softmax(logits)
    dlogits = probs * sample_w[:, None]
    dlogits[np.arange(b), labels] -= sample_w
    dlogits /= b
    return loss, dlogits.astype(logits.dtype)
