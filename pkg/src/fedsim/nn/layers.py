"""Layer forward/backward kernels.

Layers are stateless descriptors; parameters live in a WeightSet and are
passed in per call.  ``forward`` returns the output plus an opaque cache
consumed by ``backward``; ``backward`` returns the input gradient and the
per-parameter gradients.  The only in-place effect anywhere is the batch
norm running-statistics update in train mode, which writes back into the
parameter mapping it was given.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from ..errors import ShapeError

EPSILON = 1e-5
BN_MOMENTUM = 0.1

TRAIN = "train"
EVAL = "eval"


@dataclass(frozen=True)
class ParamSpec:
    name: str            # local name; model prefixes the layer name
    shape: tuple
    init: str            # fan_in_uniform | ones | zeros
    fan_in: int = 0
    trainable: bool = True


class Layer:
    name: str

    def param_specs(self) -> list[ParamSpec]:
        return []

    def out_shape(self, in_shape: tuple) -> tuple:
        raise NotImplementedError

    def forward(self, x: np.ndarray, params: Dict[str, np.ndarray], mode: str):
        raise NotImplementedError

    def backward(self, dy: np.ndarray, cache, params: Dict[str, np.ndarray]):
        raise NotImplementedError


class Conv2d(Layer):
    """Valid (no padding), stride-1 square convolution via im2col."""

    def __init__(self, name: str, in_channels: int, out_channels: int, kernel_size: int):
        self.name = name
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size

    def param_specs(self):
        k = self.kernel_size
        fan_in = self.in_channels * k * k
        return [
            ParamSpec("kernel", (self.out_channels, self.in_channels, k, k), "fan_in_uniform", fan_in),
            ParamSpec("bias", (self.out_channels,), "fan_in_uniform", fan_in),
        ]

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise ShapeError(f"expected {self.in_channels} input channels, got {c}", self.name)
        k = self.kernel_size
        if h < k or w < k:
            raise ShapeError(f"input {h}x{w} smaller than kernel {k}", self.name)
        return (self.out_channels, h - k + 1, w - k + 1)

    def forward(self, x, params, mode):
        b, c, h, w = x.shape
        _, ho, wo = self.out_shape((c, h, w))
        k = self.kernel_size
        kernel = params["kernel"]
        # (B, C, Ho, Wo, K, K) view -> (B*Ho*Wo, C*K*K) matrix
        windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * k * k)
        out = cols @ kernel.reshape(self.out_channels, -1).T + params["bias"]
        y = out.reshape(b, ho, wo, self.out_channels).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(y), (x.shape, cols)

    def backward(self, dy, cache, params):
        x_shape, cols = cache
        b, c, h, w = x_shape
        k = self.kernel_size
        f = self.out_channels
        ho, wo = h - k + 1, w - k + 1
        dflat = dy.transpose(0, 2, 3, 1).reshape(b * ho * wo, f)
        dkernel = (dflat.T @ cols).reshape(params["kernel"].shape)
        dbias = dflat.sum(axis=0)
        dcols = (dflat @ params["kernel"].reshape(f, -1)).reshape(b, ho, wo, c, k, k)
        dx = np.zeros(x_shape, dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, :, i : i + ho, j : j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dx, {"kernel": dkernel, "bias": dbias}


class AvgPool2d(Layer):
    """Non-overlapping average pooling, size == stride."""

    def __init__(self, name: str, size: int = 2):
        self.name = name
        self.size = size

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if h % self.size or w % self.size:
            raise ShapeError(f"spatial dims {h}x{w} not divisible by pool size {self.size}", self.name)
        return (c, h // self.size, w // self.size)

    def forward(self, x, params, mode):
        b, c, h, w = x.shape
        s = self.size
        self.out_shape((c, h, w))
        y = x.reshape(b, c, h // s, s, w // s, s).mean(axis=(3, 5))
        return y, x.shape

    def backward(self, dy, cache, params):
        s = self.size
        scale = np.asarray(1.0 / (s * s), dtype=dy.dtype)
        dx = np.repeat(np.repeat(dy * scale, s, axis=2), s, axis=3)
        return dx, {}


class ReLU(Layer):
    def __init__(self, name: str):
        self.name = name

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x, params, mode):
        return np.maximum(x, 0), x > 0

    def backward(self, dy, cache, params):
        return dy * cache, {}


class Flatten(Layer):
    def __init__(self, name: str):
        self.name = name

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, params, mode):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache, params):
        return dy.reshape(cache), {}


class Dense(Layer):
    def __init__(self, name: str, in_features: int, out_features: int):
        self.name = name
        self.in_features = in_features
        self.out_features = out_features

    def param_specs(self):
        return [
            ParamSpec("weight", (self.out_features, self.in_features), "fan_in_uniform", self.in_features),
            ParamSpec("bias", (self.out_features,), "fan_in_uniform", self.in_features),
        ]

    def out_shape(self, in_shape):
        if in_shape != (self.in_features,):
            raise ShapeError(f"expected ({self.in_features},) features, got {in_shape}", self.name)
        return (self.out_features,)

    def forward(self, x, params, mode):
        return x @ params["weight"].T + params["bias"], x

    def backward(self, dy, cache, params):
        x = cache
        return dy @ params["weight"], {"weight": dy.T @ x, "bias": dy.sum(axis=0)}


class BatchNorm2d(Layer):
    """Per-channel batch statistics in train mode, running stats in eval.

    Train-mode forward writes the updated running mean/var back into the
    parameter mapping (the one explicitly sanctioned side effect).
    """

    def __init__(self, name: str, channels: int, momentum: float = BN_MOMENTUM, eps: float = EPSILON):
        self.name = name
        self.channels = channels
        self.momentum = momentum
        self.eps = eps

    def param_specs(self):
        c = (self.channels,)
        return [
            ParamSpec("scale", c, "ones"),
            ParamSpec("shift", c, "zeros"),
            ParamSpec("running_mean", c, "zeros", trainable=False),
            ParamSpec("running_var", c, "ones", trainable=False),
        ]

    def out_shape(self, in_shape):
        if in_shape[0] != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {in_shape[0]}", self.name)
        return in_shape

    def forward(self, x, params, mode):
        scale = params["scale"][None, :, None, None]
        shift = params["shift"][None, :, None, None]
        if mode == TRAIN:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.momentum
            params["running_mean"] = ((1 - m) * params["running_mean"] + m * mean).astype(x.dtype)
            params["running_var"] = ((1 - m) * params["running_var"] + m * var).astype(x.dtype)
        else:
            mean = params["running_mean"]
            var = params["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        y = scale * x_hat + shift
        if mode == TRAIN:
            return y, (x_hat, inv_std)
        return y, (x_hat, None)  # eval backward unused in training paths

    def backward(self, dy, cache, params):
        x_hat, inv_std = cache
        if inv_std is None:
            raise ShapeError("backward through eval-mode batch norm is unsupported", self.name)
        m = dy.shape[0] * dy.shape[2] * dy.shape[3]
        dscale = (dy * x_hat).sum(axis=(0, 2, 3))
        dshift = dy.sum(axis=(0, 2, 3))
        dx_hat = dy * params["scale"][None, :, None, None]
        # standard batch-norm gradient with biased variance
        term = dx_hat - dx_hat.mean(axis=(0, 2, 3), keepdims=True) \
            - x_hat * (dx_hat * x_hat).mean(axis=(0, 2, 3), keepdims=True)
        dx = term * inv_std[None, :, None, None]
        del m
        return dx, {"scale": dscale, "shift": dshift}


class GroupNorm(Layer):
    """Per-(sample, channel-group) normalization; no running statistics.

    groups == 1 is layer norm over (C, H, W); groups == channels is
    instance norm.
    """

    def __init__(self, name: str, channels: int, groups: int, eps: float = EPSILON):
        if channels % groups:
            raise ShapeError(f"groups {groups} does not divide channels {channels}", name)
        self.name = name
        self.channels = channels
        self.groups = groups
        self.eps = eps

    def param_specs(self):
        c = (self.channels,)
        return [ParamSpec("scale", c, "ones"), ParamSpec("shift", c, "zeros")]

    def out_shape(self, in_shape):
        if in_shape[0] != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {in_shape[0]}", self.name)
        return in_shape

    def forward(self, x, params, mode):
        b, c, h, w = x.shape
        g = self.groups
        grouped = x.reshape(b, g, -1)
        mean = grouped.mean(axis=2, keepdims=True)
        var = grouped.var(axis=2, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = ((grouped - mean) * inv_std).reshape(b, c, h, w)
        y = params["scale"][None, :, None, None] * x_hat + params["shift"][None, :, None, None]
        return y, (x_hat, inv_std)

    def backward(self, dy, cache, params):
        x_hat, inv_std = cache
        b, c, h, w = dy.shape
        g = self.groups
        dscale = (dy * x_hat).sum(axis=(0, 2, 3))
        dshift = dy.sum(axis=(0, 2, 3))
        dx_hat = (dy * params["scale"][None, :, None, None]).reshape(b, g, -1)
        xh = x_hat.reshape(b, g, -1)
        term = dx_hat - dx_hat.mean(axis=2, keepdims=True) \
            - xh * (dx_hat * xh).mean(axis=2, keepdims=True)
        dx = (term * inv_std).reshape(b, c, h, w)
        return dx, {"scale": dscale, "shift": dshift}
