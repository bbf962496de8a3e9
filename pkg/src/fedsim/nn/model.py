"""Model description and whole-network forward/backward.

The architecture is a LeNet-5 variant: three valid 5x5 convolutions with
widths (6, 16, 120), 2x2 average pooling after the first two, ReLU
activations, a 84-unit hidden dense layer, and a classification head with
``num_known_classes`` outputs (+1 when the unknown head is enabled).
Each convolution optionally carries a batch-norm or group-norm layer
between the convolution and its activation.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ShapeError
from .. import rng as rngmod
from .layers import (
    EVAL,
    TRAIN,
    AvgPool2d,
    BatchNorm2d,
    Conv2d,
    Dense,
    Flatten,
    GroupNorm,
    Layer,
    ReLU,
)
from .loss import cross_entropy
from .weights import WeightSet

DEFAULT_GROUPS = (2, 4, 30)


@dataclass(frozen=True)
class NormKind:
    kind: str = "none"  # none | batch | group
    groups: tuple[int, ...] = DEFAULT_GROUPS

    def __post_init__(self):
        if self.kind not in ("none", "batch", "group"):
            raise ValueError(f"unknown normalization kind: {self.kind!r}")
        if self.kind == "group" and any(g < 1 for g in self.groups):
            raise ValueError(f"group counts must be positive: {self.groups}")

    @classmethod
    def none(cls) -> "NormKind":
        return cls("none")

    @classmethod
    def batch(cls) -> "NormKind":
        return cls("batch")

    @classmethod
    def group(cls, groups: tuple[int, ...] = DEFAULT_GROUPS) -> "NormKind":
        return cls("group", tuple(groups))


@dataclass(frozen=True)
class ModelSpec:
    input_shape: tuple[int, int, int] = (3, 32, 32)
    num_known_classes: int = 10
    has_unknown_head: bool = False
    norm: NormKind = field(default_factory=NormKind.none)
    conv_channels: tuple[int, ...] = (6, 16, 120)
    kernel_size: int = 5
    hidden_units: int = 84

    def __post_init__(self):
        if self.input_shape[0] != 3:
            raise ShapeError(f"expected 3 input channels, got {self.input_shape[0]}", "input")
        if self.num_known_classes < 2:
            raise ValueError("need at least 2 known classes")
        if self.norm.kind == "group":
            if len(self.norm.groups) != len(self.conv_channels):
                raise ValueError(
                    f"need one group count per conv layer: {self.norm.groups} vs {self.conv_channels}"
                )
            for g, c in zip(self.norm.groups, self.conv_channels):
                if c % g:
                    raise ShapeError(f"groups {g} does not divide channels {c}", "norm")

    @property
    def output_dim(self) -> int:
        return self.num_known_classes + (1 if self.has_unknown_head else 0)

    @property
    def unknown_class(self) -> int:
        return self.num_known_classes


def lenet5(
    num_known_classes: int = 10,
    *,
    input_hw: tuple[int, int] = (32, 32),
    norm: Optional[NormKind] = None,
    has_unknown_head: bool = False,
) -> ModelSpec:
    """The default CIFAR-shaped LeNet-5 variant."""
    return ModelSpec(
        input_shape=(3, *input_hw),
        num_known_classes=num_known_classes,
        has_unknown_head=has_unknown_head,
        norm=norm or NormKind.none(),
    )


@functools.lru_cache(maxsize=64)
def build_layers(spec: ModelSpec) -> tuple[Layer, ...]:
    layers: list[Layer] = []
    in_ch = spec.input_shape[0]
    shape = spec.input_shape
    for i, out_ch in enumerate(spec.conv_channels, start=1):
        conv = Conv2d(f"conv{i}", in_ch, out_ch, spec.kernel_size)
        layers.append(conv)
        shape = conv.out_shape(shape)
        if spec.norm.kind == "batch":
            layers.append(BatchNorm2d(f"norm{i}", out_ch))
        elif spec.norm.kind == "group":
            layers.append(GroupNorm(f"norm{i}", out_ch, spec.norm.groups[i - 1]))
        layers.append(ReLU(f"relu{i}"))
        if i < len(spec.conv_channels):
            pool = AvgPool2d(f"pool{i}", 2)
            shape = pool.out_shape(shape)
            layers.append(pool)
        in_ch = out_ch
    layers.append(Flatten("flatten"))
    flat = int(np.prod(shape))
    layers.append(Dense("fc1", flat, spec.hidden_units))
    layers.append(ReLU("relu_fc1"))
    layers.append(Dense("fc2", spec.hidden_units, spec.output_dim))
    return tuple(layers)


def layer_output_shapes(spec: ModelSpec) -> list[tuple[str, tuple]]:
    """Per-layer output shapes (sans batch dim), in order."""
    shapes = []
    shape = spec.input_shape
    for layer in build_layers(spec):
        shape = layer.out_shape(shape)
        shapes.append((layer.name, shape))
    return shapes


def init_weights(spec: ModelSpec, seed: int, dtype=np.float32) -> WeightSet:
    """Fan-in-scaled uniform init; norm affine (1, 0); running stats (0, 1)."""
    gen = rngmod.stream(seed, rngmod.INIT)
    tensors: dict[str, np.ndarray] = {}
    non_trainable = set()
    for layer in build_layers(spec):
        for ps in layer.param_specs():
            name = f"{layer.name}.{ps.name}"
            if ps.init == "fan_in_uniform":
                limit = 1.0 / np.sqrt(ps.fan_in)
                t = gen.uniform(-limit, limit, size=ps.shape)
            elif ps.init == "ones":
                t = np.ones(ps.shape)
            elif ps.init == "zeros":
                t = np.zeros(ps.shape)
            else:
                raise ValueError(f"unknown init {ps.init!r}")
            tensors[name] = t.astype(dtype)
            if not ps.trainable:
                non_trainable.add(name)
    return WeightSet(tensors, frozenset(non_trainable))


def _layer_params(weights: WeightSet, layer: Layer) -> dict[str, np.ndarray]:
    return {ps.name: weights[f"{layer.name}.{ps.name}"] for ps in layer.param_specs()}


def _writeback_stats(weights: WeightSet, layer: Layer, params: dict[str, np.ndarray]) -> None:
    for ps in layer.param_specs():
        if not ps.trainable:
            weights[f"{layer.name}.{ps.name}"] = params[ps.name]


def _check_batch(spec: ModelSpec, images: np.ndarray, labels: Optional[np.ndarray]) -> None:
    if images.ndim != 4 or images.shape[1:] != spec.input_shape:
        raise ShapeError(
            f"batch images {images.shape} do not match input shape {spec.input_shape}", "input"
        )
    if labels is not None:
        if len(labels) != len(images):
            raise ShapeError(f"{len(labels)} labels for {len(images)} images", "input")
        if labels.min() < 0 or labels.max() >= spec.output_dim:
            raise ShapeError(
                f"labels outside [0, {spec.output_dim}): {labels.min()}..{labels.max()}", "input"
            )


def forward(spec: ModelSpec, weights: WeightSet, images: np.ndarray, mode: str = EVAL) -> np.ndarray:
    """Logits of shape (B, output_dim).

    Train mode uses batch statistics in batch-norm layers and updates the
    running statistics stored in ``weights``; eval mode never mutates.
    """
    if mode not in (TRAIN, EVAL):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    _check_batch(spec, images, None)
    x = images
    for layer in build_layers(spec):
        params = _layer_params(weights, layer)
        x, _ = layer.forward(x, params, mode)
        if mode == TRAIN:
            _writeback_stats(weights, layer, params)
    return x


def backward(
    spec: ModelSpec,
    weights: WeightSet,
    images: np.ndarray,
    labels: np.ndarray,
    class_weights: Optional[np.ndarray] = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss and gradients for every trainable tensor (train mode)."""
    _check_batch(spec, images, labels)
    layers = build_layers(spec)
    caches = []
    x = images
    for layer in layers:
        params = _layer_params(weights, layer)
        x, cache = layer.forward(x, params, TRAIN)
        _writeback_stats(weights, layer, params)
        caches.append(cache)
    loss, dx = cross_entropy(x, labels, class_weights)
    grads: dict[str, np.ndarray] = {}
    for layer, cache in zip(reversed(layers), reversed(caches)):
        dx, layer_grads = layer.backward(dx, cache, _layer_params(weights, layer))
        for pname, g in layer_grads.items():
            grads[f"{layer.name}.{pname}"] = g
    return loss, {n: grads[n] for n in weights.trainable_names()}
