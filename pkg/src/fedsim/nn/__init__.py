"""Minimal deterministic neural-network engine (numpy, CPU)."""

from .layers import BN_MOMENTUM, EPSILON, EVAL, TRAIN
from .loss import cross_entropy, softmax
from .model import (
    DEFAULT_GROUPS,
    ModelSpec,
    NormKind,
    backward,
    build_layers,
    forward,
    init_weights,
    layer_output_shapes,
    lenet5,
)
from .optim import sgd_step
from .serialize import load_weights, save_weights, weights_from_bytes, weights_to_bytes
from .weights import WeightSet

__all__ = [
    "BN_MOMENTUM",
    "DEFAULT_GROUPS",
    "EPSILON",
    "EVAL",
    "TRAIN",
    "ModelSpec",
    "NormKind",
    "WeightSet",
    "backward",
    "build_layers",
    "cross_entropy",
    "forward",
    "init_weights",
    "layer_output_shapes",
    "lenet5",
    "load_weights",
    "save_weights",
    "sgd_step",
    "softmax",
    "weights_from_bytes",
    "weights_to_bytes",
]
