"""Unknown-class augmentation for open-set federated training.

Clients receive a generator fitted to a generic image pool, draw
``round(fraction * n_local)`` synthetic samples labeled with the extra
class index K, and train a (K+1)-output model whose unknown-class loss
term is weighted by ``weight``.  At inference the unknown output is masked
so predictions stay within the K known classes.

Generators produce raw-range ([0, 255]) pixels; the classifier's
preprocessing is applied to their output downstream, exactly as for real
images.  The TinyGan variant is an adversarially trained MLP working at a
reduced resolution that is block-upsampled to the classifier input size,
keeping its parameter count comparable to the classifier's.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from . import rng as rngmod
from .data.datasets import Dataset
from .errors import FormatError, GanDivergedError, ShapeError
from .nn.optim import sgd_step
from .nn.serialize import load_weights, save_weights
from .nn.weights import WeightSet

_KIND_CODES = {"noise": 0.0, "gaussian_fit": 1.0, "tiny_gan": 2.0}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


def fedos_loss_weights(num_known: int, unknown_weight: float) -> np.ndarray:
    """Per-class loss weights: 1 for the K known classes, W_U for class K."""
    if unknown_weight < 0:
        raise ValueError(f"unknown-class weight must be nonnegative, got {unknown_weight}")
    w = np.ones(num_known + 1)
    w[num_known] = unknown_weight
    return w


def mask_unknown(logits: np.ndarray) -> np.ndarray:
    """Argmax restricted to the known classes (all but the last logit).

    Ties break toward the lowest index, as everywhere else.
    """
    if logits.shape[-1] < 2:
        raise ShapeError(f"need at least 2 logits to mask one, got {logits.shape}", "mask")
    return np.argmax(logits[..., :-1], axis=-1)


# --------------------------------------------------------------------------
# generators
# --------------------------------------------------------------------------


class Generator:
    kind: str
    image_shape: tuple[int, int, int]

    def sample(self, n: int, gen: np.random.Generator) -> np.ndarray:
        """(n, 3, H, W) float32 raw-range images."""
        raise NotImplementedError


class NoiseGenerator(Generator):
    """Uniform pixel noise over the raw byte range."""

    kind = "noise"

    def __init__(self, image_shape: tuple[int, int, int]):
        self.image_shape = tuple(image_shape)

    def sample(self, n, gen):
        return gen.uniform(0.0, 255.0, size=(n, *self.image_shape)).astype(np.float32)


class GaussianFitGenerator(Generator):
    """Per-pixel independent Gaussian fitted to an image pool."""

    kind = "gaussian_fit"

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        if mean.shape != std.shape or mean.ndim != 3:
            raise ShapeError(f"mean/std must be (3, H, W), got {mean.shape} and {std.shape}", "generator")
        self.mean = mean.astype(np.float32)
        self.std = std.astype(np.float32)
        self.image_shape = tuple(mean.shape)

    @classmethod
    def fit(cls, pool: Dataset) -> "GaussianFitGenerator":
        mean = pool.images.mean(axis=0, dtype=np.float64)
        std = pool.images.std(axis=0, dtype=np.float64)
        return cls(mean.astype(np.float32), np.maximum(std, 1.0).astype(np.float32))

    def sample(self, n, gen):
        draws = gen.normal(self.mean, self.std, size=(n, *self.image_shape))
        return np.clip(draws, 0.0, 255.0).astype(np.float32)


@dataclass(frozen=True)
class GanSpec:
    latent_dim: int = 32
    gen_widths: tuple[int, ...] = (64, 128)
    disc_widths: tuple[int, ...] = (128, 64)
    epochs: int = 30
    lr: float = 0.05
    batch_size: int = 64
    seed: int = 0
    resolution: int = 8  # GAN-internal square image size; upsampled to the pool's


def _mlp_params(prefix: str, dims: list[int], gen: np.random.Generator) -> dict[str, np.ndarray]:
    tensors = {}
    for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
        limit = 1.0 / np.sqrt(din)
        tensors[f"{prefix}.l{i}.weight"] = gen.uniform(-limit, limit, (dout, din)).astype(np.float32)
        tensors[f"{prefix}.l{i}.bias"] = np.zeros(dout, dtype=np.float32)
    return tensors


def _mlp_forward(ws: WeightSet, prefix: str, n_layers: int, x: np.ndarray, final: Optional[str]):
    caches = []
    for i in range(n_layers):
        w, b = ws[f"{prefix}.l{i}.weight"], ws[f"{prefix}.l{i}.bias"]
        z = x @ w.T + b
        last = i == n_layers - 1
        if not last:
            y = np.where(z > 0, z, 0.2 * z)  # leaky ReLU
        elif final == "tanh":
            y = np.tanh(z)
        else:
            y = z
        caches.append((x, z, y))
        x = y
    return x, caches


def _mlp_backward(ws: WeightSet, prefix: str, caches, dy: np.ndarray, final: Optional[str]):
    grads = {}
    n_layers = len(caches)
    for i in reversed(range(n_layers)):
        x, z, y = caches[i]
        last = i == n_layers - 1
        if not last:
            dz = dy * np.where(z > 0, 1.0, 0.2).astype(dy.dtype)
        elif final == "tanh":
            dz = dy * (1.0 - y * y)
        else:
            dz = dy
        w = ws[f"{prefix}.l{i}.weight"]
        grads[f"{prefix}.l{i}.weight"] = dz.T @ x
        grads[f"{prefix}.l{i}.bias"] = dz.sum(axis=0)
        dy = dz @ w
    return dy, grads


def _bce_with_logits(logits: np.ndarray, target: float) -> tuple[float, np.ndarray]:
    """Stable binary cross-entropy against a constant target; mean-reduced."""
    l = logits.ravel()
    loss = float(np.mean(np.maximum(l, 0) - l * target + np.log1p(np.exp(-np.abs(l)))))
    sig = 1.0 / (1.0 + np.exp(-l))
    dlogits = ((sig - target) / l.size).reshape(logits.shape).astype(logits.dtype)
    return loss, dlogits


def _block_downsample(images: np.ndarray, res: int) -> np.ndarray:
    n, c, h, w = images.shape
    if h % res or w % res:
        raise ShapeError(f"resolution {res} does not divide pool images {h}x{w}", "gan")
    fh, fw = h // res, w // res
    return images.reshape(n, c, res, fh, res, fw).mean(axis=(3, 5))


class TinyGanGenerator(Generator):
    """Adversarially trained MLP generator at reduced resolution."""

    kind = "tiny_gan"

    def __init__(self, weights: WeightSet, spec: GanSpec, image_shape: tuple[int, int, int]):
        self.weights = weights
        self.spec = spec
        self.image_shape = tuple(image_shape)
        self.n_layers = len(spec.gen_widths) + 1

    def parameter_count(self) -> int:
        return self.weights.num_parameters()

    def sample(self, n, gen):
        z = gen.normal(0.0, 1.0, size=(n, self.spec.latent_dim)).astype(np.float32)
        out, _ = _mlp_forward(self.weights, "gen", self.n_layers, z, "tanh")
        r = self.spec.resolution
        small = out.reshape(n, 3, r, r)
        _, h, w = self.image_shape
        up = np.repeat(np.repeat(small, h // r, axis=2), w // r, axis=3)
        return ((up + 1.0) * np.float32(127.5)).astype(np.float32)


@dataclass
class GanTrace:
    gen_losses: list[float] = field(default_factory=list)
    disc_losses: list[float] = field(default_factory=list)


def train_generator(
    pool: Dataset,
    spec: GanSpec,
    *,
    trace: Optional[GanTrace] = None,
) -> TinyGanGenerator:
    """Adversarial training on an unlabeled image pool.

    Non-saturating generator objective, logistic discriminator, plain SGD
    on both networks.  Deterministic per spec.seed.  Raises
    GanDivergedError on a non-finite loss.
    """
    _, h, w = pool.image_shape
    r = spec.resolution
    out_dim = 3 * r * r
    gen_dims = [spec.latent_dim, *spec.gen_widths, out_dim]
    disc_dims = [out_dim, *spec.disc_widths, 1]
    init = rngmod.stream(spec.seed, rngmod.GAN, 0)
    g_ws = WeightSet(_mlp_params("gen", gen_dims, init))
    d_ws = WeightSet(_mlp_params("disc", disc_dims, init))
    ng, nd = len(gen_dims) - 1, len(disc_dims) - 1

    real_all = (_block_downsample(pool.images, r).reshape(len(pool), out_dim)
                / np.float32(127.5)) - np.float32(1.0)

    for epoch in range(spec.epochs):
        egen = rngmod.stream(spec.seed, rngmod.GAN, 1, epoch)
        order = egen.permutation(len(pool))
        for step, start in enumerate(range(0, len(pool), spec.batch_size)):
            real = real_all[order[start : start + spec.batch_size]]
            b = len(real)
            # discriminator: real -> 1, generated -> 0
            z = egen.normal(0.0, 1.0, size=(b, spec.latent_dim)).astype(np.float32)
            fake, _ = _mlp_forward(g_ws, "gen", ng, z, "tanh")
            dr_logits, dr_cache = _mlp_forward(d_ws, "disc", nd, real, None)
            df_logits, df_cache = _mlp_forward(d_ws, "disc", nd, fake, None)
            loss_r, dl_r = _bce_with_logits(dr_logits, 1.0)
            loss_f, dl_f = _bce_with_logits(df_logits, 0.0)
            d_loss = loss_r + loss_f
            _, grads_r = _mlp_backward(d_ws, "disc", dr_cache, dl_r, None)
            _, grads_f = _mlp_backward(d_ws, "disc", df_cache, dl_f, None)
            d_grads = {k: grads_r[k] + grads_f[k] for k in grads_r}
            d_ws = sgd_step(d_ws, d_grads, spec.lr)
            # generator: make fresh fakes look real (non-saturating loss)
            z = egen.normal(0.0, 1.0, size=(b, spec.latent_dim)).astype(np.float32)
            fake, g_cache = _mlp_forward(g_ws, "gen", ng, z, "tanh")
            gf_logits, gf_cache = _mlp_forward(d_ws, "disc", nd, fake, None)
            g_loss, dl_g = _bce_with_logits(gf_logits, 1.0)
            dfake, _ = _mlp_backward(d_ws, "disc", gf_cache, dl_g, None)
            _, g_grads = _mlp_backward(g_ws, "gen", g_cache, dfake, "tanh")
            g_ws = sgd_step(g_ws, g_grads, spec.lr)
            if not (np.isfinite(d_loss) and np.isfinite(g_loss)):
                raise GanDivergedError("adversarial loss became non-finite", epoch, step)
            if trace is not None:
                trace.disc_losses.append(d_loss)
                trace.gen_losses.append(g_loss)
    return TinyGanGenerator(g_ws, spec, pool.image_shape)


def discriminator_accuracy(
    generator: TinyGanGenerator,
    disc_weights: WeightSet,
    held_out: np.ndarray,
    seed: int = 0,
) -> float:
    """Real-vs-generated accuracy of a discriminator on held-out images."""
    r = generator.spec.resolution
    out_dim = 3 * r * r
    nd = len(generator.spec.disc_widths) + 1
    real = (_block_downsample(held_out, r).reshape(len(held_out), out_dim)
            / np.float32(127.5)) - np.float32(1.0)
    fake_raw = generator.sample(len(held_out), rngmod.stream(seed, rngmod.GAN, 2))
    fake = (_block_downsample(fake_raw, r).reshape(len(held_out), out_dim)
            / np.float32(127.5)) - np.float32(1.0)
    real_logits, _ = _mlp_forward(disc_weights, "disc", nd, real, None)
    fake_logits, _ = _mlp_forward(disc_weights, "disc", nd, fake, None)
    hits = int((real_logits > 0).sum()) + int((fake_logits <= 0).sum())
    return hits / (2 * len(held_out))


# --------------------------------------------------------------------------
# unknown-sample caches and generator checkpoints
# --------------------------------------------------------------------------


def generate_unknown(
    generator: Generator,
    n: int,
    seed: int,
    preprocess_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    *,
    client_id: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """``n`` generated images labeled with the unknown class sentinel -1.

    Callers relabel to their model's unknown index; the engine uses
    ``num_known_classes`` directly.  Deterministic per (seed, client_id).
    """
    if n < 0:
        raise ValueError(f"sample count must be nonnegative, got {n}")
    gen = rngmod.stream(seed, rngmod.UNKNOWN_CACHE, client_id)
    images = generator.sample(n, gen)
    if preprocess_fn is not None and n > 0:
        images = preprocess_fn(images)
    labels = np.full(n, -1, dtype=np.int64)
    return images.astype(np.float32), labels


def unknown_cache_size(n_local: int, fraction: float) -> int:
    if fraction < 0:
        raise ValueError(f"unknown-sample fraction must be nonnegative, got {fraction}")
    return int(round(fraction * n_local))


@dataclass(frozen=True)
class UnknownConfig:
    """Hyperparameters of the unknown-class augmentation."""

    weight: float = 1.0      # loss weight of the unknown class (W_U)
    fraction: float = 0.6    # generated samples per client, as a fraction of local data
    generator: Generator = None  # type: ignore[assignment]
    resample_per_round: bool = False  # off by default: caches are drawn once per client

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError(f"unknown-class weight must be nonnegative, got {self.weight}")
        if self.fraction < 0:
            raise ValueError(f"unknown-sample fraction must be nonnegative, got {self.fraction}")
        if self.generator is None:
            raise ValueError("an unknown-sample generator is required")


_PREPROCESS_CODES = {"raw": 0.0, "scaled": 1.0, "standardized": 2.0}
_CODE_PREPROCESS = {v: k for k, v in _PREPROCESS_CODES.items()}


def save_generator(path: Union[str, Path], generator: Generator, preprocessing: str = "raw") -> None:
    """Persist a generator in the weight container with a metadata record."""
    if preprocessing not in _PREPROCESS_CODES:
        raise ValueError(f"unknown preprocessing tag {preprocessing!r}")
    meta = {
        "meta.kind": np.array(_KIND_CODES[generator.kind], dtype=np.float32),
        "meta.input_shape": np.array(generator.image_shape, dtype=np.float32),
        "meta.preprocessing": np.array(_PREPROCESS_CODES[preprocessing], dtype=np.float32),
    }
    if isinstance(generator, TinyGanGenerator):
        meta["meta.latent_dim"] = np.array(generator.spec.latent_dim, dtype=np.float32)
        meta["meta.resolution"] = np.array(generator.spec.resolution, dtype=np.float32)
        meta["meta.gen_widths"] = np.array(generator.spec.gen_widths, dtype=np.float32)
        tensors = {**meta, **dict(generator.weights.items())}
    elif isinstance(generator, GaussianFitGenerator):
        tensors = {**meta, "fit.mean": generator.mean, "fit.std": generator.std}
    elif isinstance(generator, NoiseGenerator):
        tensors = meta
    else:
        raise ValueError(f"cannot serialize generator kind {generator.kind!r}")
    save_weights(path, WeightSet(tensors))


def load_generator(
    path: Union[str, Path],
    *,
    classifier_parameter_count: Optional[int] = None,
) -> Generator:
    """Load a generator checkpoint; enforces the 2x-classifier size bound."""
    ws = load_weights(path)
    if "meta.kind" not in ws:
        raise FormatError("generator container missing metadata record", str(path))
    kind = _CODE_KINDS.get(float(ws["meta.kind"]))
    shape = tuple(int(v) for v in ws["meta.input_shape"])
    if kind == "noise":
        return NoiseGenerator(shape)
    if kind == "gaussian_fit":
        return GaussianFitGenerator(ws["fit.mean"], ws["fit.std"])
    if kind == "tiny_gan":
        widths = tuple(int(v) for v in np.atleast_1d(ws["meta.gen_widths"]))
        spec = GanSpec(
            latent_dim=int(ws["meta.latent_dim"]),
            gen_widths=widths,
            resolution=int(ws["meta.resolution"]),
        )
        weights = WeightSet({n: t for n, t in ws.items() if n.startswith("gen.")})
        gen = TinyGanGenerator(weights, spec, shape)
        if classifier_parameter_count is not None:
            if gen.parameter_count() > 2 * classifier_parameter_count:
                raise FormatError(
                    f"generator has {gen.parameter_count()} parameters, more than twice "
                    f"the classifier's {classifier_parameter_count}",
                    str(path),
                )
        return gen
    raise FormatError(f"unknown generator kind code {float(ws['meta.kind'])}", str(path))


def dump_samples(path: Union[str, Path], images: np.ndarray) -> None:
    """Raw RGB byte dump of generated samples for visual inspection."""
    arr = np.clip(images, 0.0, 255.0).astype(np.uint8)
    Path(path).write_bytes(arr.tobytes())
