"""Synchronous federated training loop.

Every round: sample a client fraction, train each selected client locally
from the current global weights, aggregate the returned weights by sample
count, evaluate on the server-held validation split, and record metrics.
Variants differ only in the local objective: a proximal pull toward the
global weights (fedprox), per-class importance weights (fedir), or
unknown-class augmentation (fedos).

Determinism contract: every random choice is a counter-based stream keyed
by (seed, round, client), so traces are bit-reproducible and independent
of client scheduling; parallel and sequential client execution aggregate
identically because reduction is in client-id order.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import rng as rngmod
from .data.datasets import Dataset
from .data.partition import Partition
from .errors import ConfigError, ShapeError
from .nn.loss import cross_entropy
from .nn.model import ModelSpec, backward, forward, init_weights
from .nn.optim import sgd_step
from .nn.weights import WeightSet
from .openset import UnknownConfig, generate_unknown, mask_unknown, fedos_loss_weights, unknown_cache_size

LOSS_BLOWUP = 1e4

VARIANT_KINDS = ("fedavg", "fedprox", "fedir", "fedos")


@dataclass(frozen=True)
class RoundConfig:
    rounds: int
    client_fraction: float = 0.2
    local_epochs: int = 1
    batch_size: int = 32
    lr: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 0:
            raise ConfigError(f"rounds must be nonnegative, got {self.rounds}", "rounds.rounds")
        if not 0.0 < self.client_fraction <= 1.0:
            raise ConfigError(
                f"client_fraction must be in (0, 1], got {self.client_fraction}",
                "rounds.client_fraction",
            )
        if self.local_epochs < 1:
            raise ConfigError(f"local_epochs must be >= 1, got {self.local_epochs}", "rounds.local_epochs")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}", "rounds.batch_size")


@dataclass(frozen=True)
class VariantConfig:
    kind: str = "fedavg"
    mu: float = 0.0                 # fedprox proximal coefficient
    smoothing: float = 1.0          # fedir additive histogram smoothing
    unknown: Optional[UnknownConfig] = None  # fedos settings

    def __post_init__(self):
        if self.kind not in VARIANT_KINDS:
            raise ConfigError(f"unknown variant {self.kind!r}", "variant.kind")
        if self.mu < 0:
            raise ConfigError(f"mu must be nonnegative, got {self.mu}", "variant.mu")
        if self.smoothing < 0:
            raise ConfigError(f"smoothing must be nonnegative, got {self.smoothing}", "variant.smoothing")
        if self.kind == "fedos" and self.unknown is None:
            raise ConfigError("fedos requires an UnknownConfig", "variant.unknown")

    @classmethod
    def fedavg(cls) -> "VariantConfig":
        return cls("fedavg")

    @classmethod
    def fedprox(cls, mu: float = 1.0) -> "VariantConfig":
        return cls("fedprox", mu=mu)

    @classmethod
    def fedir(cls, smoothing: float = 1.0) -> "VariantConfig":
        return cls("fedir", smoothing=smoothing)

    @classmethod
    def fedos(cls, unknown: UnknownConfig) -> "VariantConfig":
        return cls("fedos", unknown=unknown)


@dataclass
class ClientState:
    client_id: int
    indices: np.ndarray
    histogram: np.ndarray  # label counts over the known classes
    unknown_images: Optional[np.ndarray] = None
    unknown_labels: Optional[np.ndarray] = None

    @property
    def n_local(self) -> int:
        return len(self.indices)


@dataclass
class GlobalState:
    weights: WeightSet
    round: int = 0
    best_weights: Optional[WeightSet] = None
    best_accuracy: float = -1.0
    best_round: int = -1
    label_distribution: Optional[np.ndarray] = None


@dataclass
class RoundRecord:
    round: int
    train_loss: float
    val_acc: float
    rel_val_acc: Optional[float]
    selected: list[int]


@dataclass
class MetricTrace:
    variant: str = "fedavg"
    alpha: Optional[float] = None
    seed: int = 0
    reference_accuracy: Optional[float] = None
    records: list[RoundRecord] = field(default_factory=list)
    aborted_round: Optional[int] = None

    def val_accuracies(self) -> np.ndarray:
        return np.array([r.val_acc for r in self.records])

    def summary(self) -> dict:
        out = {
            "rounds": len(self.records),
            "variant": self.variant,
            "seed": self.seed,
            "aborted_round": self.aborted_round,
        }
        if self.records:
            accs = self.val_accuracies()
            out["max_val_acc"] = float(accs.max())
            out["mean_val_acc"] = float(accs.mean())
            out["best_round"] = int(self.records[int(accs.argmax())].round)
            if self.reference_accuracy:
                out["max_rel_val_acc"] = relative_accuracy(accs.max(), self.reference_accuracy)
                out["mean_rel_val_acc"] = float(
                    np.mean([relative_accuracy(a, self.reference_accuracy) for a in accs])
                )
        if self.alpha is not None:
            out["alpha"] = self.alpha
        if self.reference_accuracy is not None:
            out["reference_accuracy"] = self.reference_accuracy
        return out


def relative_accuracy(accuracy: float, reference: float) -> float:
    """Accuracy as a percentage of a centralized reference accuracy."""
    if reference <= 0:
        raise ValueError(f"reference accuracy must be positive, got {reference}")
    return 100.0 * accuracy / reference


# --------------------------------------------------------------------------
# primitives
# --------------------------------------------------------------------------


def sample_clients(n_clients: int, fraction: float, seed: int, round_idx: int) -> np.ndarray:
    """Uniform without-replacement selection; sorted, deterministic per (seed, round)."""
    count = max(1, int(round(fraction * n_clients)))
    gen = rngmod.stream(seed, rngmod.CLIENT_SELECT, round_idx)
    return np.sort(gen.choice(n_clients, size=count, replace=False))


def client_stream(seed: int, round_idx: int, client_id: int) -> np.random.Generator:
    return rngmod.stream(seed, rngmod.CLIENT_TRAIN, round_idx, client_id)


def minibatch_indices(gen: np.random.Generator, n: int, batch_size: int) -> list[np.ndarray]:
    """One epoch of shuffled minibatch index arrays (last batch may be short)."""
    perm = gen.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def fedir_weights(
    client_counts: np.ndarray,
    global_dist: np.ndarray,
    smoothing: float = 1.0,
) -> np.ndarray:
    """Importance weights p(y) / q_k(y) from a smoothed client histogram.

    ``client_counts`` are raw label counts; ``global_dist`` is already a
    probability vector.  Smoothing adds to every class count before
    normalizing, keeping weights finite for locally absent classes.
    """
    q = np.asarray(client_counts, dtype=np.float64) + smoothing
    total = q.sum()
    if total <= 0:
        raise ValueError("client histogram is empty and smoothing is zero")
    q /= total
    p = np.asarray(global_dist, dtype=np.float64)
    with np.errstate(divide="ignore"):
        w = np.where(p > 0, p / q, 0.0)
    return w


def local_train(
    spec: ModelSpec,
    global_weights: WeightSet,
    images: np.ndarray,
    labels: np.ndarray,
    cfg: RoundConfig,
    round_idx: int,
    client_id: int,
    *,
    mu: float = 0.0,
    class_weights: Optional[np.ndarray] = None,
) -> tuple[WeightSet, int, float]:
    """E local epochs of minibatch SGD from the global weights.

    Returns the new weights, the local sample count, and the mean per-sample
    training loss.  ``mu`` adds the proximal gradient mu * (w - w_global).
    """
    n = len(images)
    if n == 0:
        raise ShapeError("client has no local data", "local_train")
    weights = global_weights.copy()
    gen = client_stream(cfg.seed, round_idx, client_id)
    loss_sum = 0.0
    for _ in range(cfg.local_epochs):
        for idx in minibatch_indices(gen, n, cfg.batch_size):
            loss, grads = backward(spec, weights, images[idx], labels[idx], class_weights)
            if mu:
                for name in grads:
                    grads[name] = grads[name] + mu * (weights[name] - global_weights[name])
            weights = sgd_step(weights, grads, cfg.lr)
            loss_sum += loss * len(idx)
    return weights, n, loss_sum / (n * cfg.local_epochs)


def aggregate(updates: Sequence[tuple[WeightSet, int]]) -> WeightSet:
    """Sample-count-weighted mean of client weight sets (running stats included)."""
    if not updates:
        raise ValueError("aggregate needs at least one update")
    first = updates[0][0]
    for ws, _ in updates[1:]:
        first.check_aligned(ws)
    total = float(sum(n for _, n in updates))
    out = {}
    for name in first.names():
        acc = np.zeros(first[name].shape, dtype=np.float64)
        for ws, n in updates:
            acc += float(n) * ws[name]
        out[name] = (acc / total).astype(first[name].dtype)
    return WeightSet(out, first.non_trainable)


def evaluate(
    spec: ModelSpec,
    weights: WeightSet,
    ds: Dataset,
    mask: bool = False,
    batch_size: int = 256,
) -> float:
    """Top-1 accuracy in eval mode; ``mask`` restricts argmax to known classes."""
    hits = 0
    for start in range(0, len(ds), batch_size):
        logits = forward(spec, weights, ds.images[start : start + batch_size], "eval")
        if mask and spec.has_unknown_head:
            preds = mask_unknown(logits)
        else:
            preds = np.argmax(logits, axis=-1)
        hits += int((preds == ds.labels[start : start + batch_size]).sum())
    return hits / len(ds)


def mean_loss(
    spec: ModelSpec,
    weights: WeightSet,
    ds: Dataset,
    batch_size: int = 256,
) -> float:
    """Mean eval-mode cross-entropy over a dataset."""
    total = 0.0
    for start in range(0, len(ds), batch_size):
        imgs = ds.images[start : start + batch_size]
        logits = forward(spec, weights, imgs, "eval")
        loss, _ = cross_entropy(logits, ds.labels[start : start + batch_size])
        total += loss * len(imgs)
    return total / len(ds)


# --------------------------------------------------------------------------
# experiment setup and the round loop
# --------------------------------------------------------------------------


def build_clients(
    train_ds: Dataset,
    partition: Partition,
    *,
    variant: Optional[VariantConfig] = None,
    spec: Optional[ModelSpec] = None,
    seed: int = 0,
    unknown_preprocess=None,
) -> list[ClientState]:
    """Materialize client states; fedos clients get their unknown cache here.

    Caches are drawn once per client from the (seed, client_id) stream, so a
    client regenerates the identical cache across runs.
    """
    clients = [
        ClientState(i, partition.assignments[i], partition.histograms[i])
        for i in range(partition.n_clients)
    ]
    if variant is not None and variant.kind == "fedos":
        if spec is None or not spec.has_unknown_head:
            raise ConfigError("fedos needs a model spec with the unknown head", "variant.unknown")
        ucfg = variant.unknown
        for client in clients:
            n_gen = unknown_cache_size(client.n_local, ucfg.fraction)
            images, _ = generate_unknown(
                ucfg.generator, n_gen, seed, unknown_preprocess, client_id=client.client_id
            )
            client.unknown_images = images
            client.unknown_labels = np.full(n_gen, spec.unknown_class, dtype=np.int64)
    return clients


def _client_round(
    spec: ModelSpec,
    weights: WeightSet,
    train_ds: Dataset,
    client: ClientState,
    cfg: RoundConfig,
    variant: VariantConfig,
    round_idx: int,
    global_dist: np.ndarray,
) -> tuple[WeightSet, int, float]:
    images = train_ds.images[client.indices]
    labels = train_ds.labels[client.indices]
    mu = 0.0
    class_weights = None
    if variant.kind == "fedprox":
        mu = variant.mu
    elif variant.kind == "fedir":
        class_weights = fedir_weights(client.histogram, global_dist, variant.smoothing)
    elif variant.kind == "fedos":
        if client.unknown_images is not None and len(client.unknown_images):
            images = np.concatenate([images, client.unknown_images])
            labels = np.concatenate([labels, client.unknown_labels])
        class_weights = fedos_loss_weights(spec.num_known_classes, variant.unknown.weight)
    return local_train(
        spec, weights, images, labels, cfg, round_idx, client.client_id,
        mu=mu, class_weights=class_weights,
    )


def run_training(
    spec: ModelSpec,
    train_ds: Dataset,
    partition: Partition,
    val_ds: Dataset,
    cfg: RoundConfig,
    variant: VariantConfig = VariantConfig(),
    *,
    initial_weights: Optional[WeightSet] = None,
    reference_accuracy: Optional[float] = None,
    parallel: bool = False,
    unknown_preprocess=None,
) -> tuple[GlobalState, MetricTrace]:
    """The full synchronous loop; see the module docstring.

    On numerical blow-up (non-finite or huge round loss) the loop stops
    cleanly with ``trace.aborted_round`` set to the offending round.
    """
    clients = build_clients(
        train_ds, partition, variant=variant, spec=spec, seed=cfg.seed,
        unknown_preprocess=unknown_preprocess,
    )
    counts = partition.histograms.sum(axis=0).astype(np.float64)
    global_dist = counts / counts.sum()
    weights = initial_weights.copy() if initial_weights is not None else init_weights(spec, cfg.seed)
    state = GlobalState(weights=weights, label_distribution=global_dist)
    trace = MetricTrace(
        variant=variant.kind,
        alpha=partition.spec.alpha if partition.spec else None,
        seed=cfg.seed,
        reference_accuracy=reference_accuracy,
    )

    for round_idx in range(cfg.rounds):
        selected = sample_clients(partition.n_clients, cfg.client_fraction, cfg.seed, round_idx)

        def job(cid: int):
            return _client_round(
                spec, state.weights, train_ds, clients[cid], cfg, variant, round_idx, global_dist
            )

        if parallel and len(selected) > 1:
            with concurrent.futures.ThreadPoolExecutor(max_workers=len(selected)) as pool:
                results = dict(zip(selected, pool.map(job, selected)))
        else:
            results = {cid: job(cid) for cid in selected}

        updates = [(results[cid][0], results[cid][1]) for cid in selected]  # client-id order
        losses = np.array([results[cid][2] for cid in selected])
        weights_n = np.array([results[cid][1] for cid in selected], dtype=np.float64)
        round_loss = float((losses * weights_n).sum() / weights_n.sum())

        if not np.isfinite(round_loss) or round_loss > LOSS_BLOWUP:
            trace.aborted_round = round_idx
            break

        state.weights = aggregate(updates)
        state.round = round_idx + 1
        acc = evaluate(spec, state.weights, val_ds, mask=spec.has_unknown_head)
        rel = relative_accuracy(acc, reference_accuracy) if reference_accuracy else None
        if acc > state.best_accuracy:
            state.best_accuracy = acc
            state.best_round = round_idx
            state.best_weights = state.weights.copy()
        trace.records.append(
            RoundRecord(round_idx, round_loss, acc, rel, [int(c) for c in selected])
        )
    return state, trace


# --------------------------------------------------------------------------
# trace persistence
# --------------------------------------------------------------------------

TRACE_COLUMNS = "round,variant,alpha,seed,train_loss,val_acc,rel_val_acc,selected_clients"


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def write_trace(path: Union[str, Path], trace: MetricTrace, meta: Optional[dict] = None) -> None:
    """CSV with '# key=value' header lines carrying provenance."""
    lines = []
    header = {
        "variant": trace.variant,
        "alpha": "" if trace.alpha is None else repr(float(trace.alpha)),
        "seed": trace.seed,
        "reference_accuracy": _fmt(trace.reference_accuracy),
        "aborted_round": "" if trace.aborted_round is None else trace.aborted_round,
    }
    if meta:
        header.update(meta)
    for key in sorted(header):
        lines.append(f"# {key}={header[key]}")
    lines.append(TRACE_COLUMNS)
    alpha = "" if trace.alpha is None else repr(float(trace.alpha))
    for r in trace.records:
        sel = ";".join(str(c) for c in r.selected)
        lines.append(
            f"{r.round},{trace.variant},{alpha},{trace.seed},"
            f"{_fmt(r.train_loss)},{_fmt(r.val_acc)},{_fmt(r.rel_val_acc)},{sel}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace(path: Union[str, Path]) -> tuple[MetricTrace, dict]:
    """Inverse of :func:`write_trace`; returns the trace and header metadata."""
    meta: dict[str, str] = {}
    trace = MetricTrace()
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# "):
                key, _, value = line[2:].partition("=")
                meta[key] = value
                continue
            if line == TRACE_COLUMNS or not line:
                continue
            parts = line.split(",")
            rnd, variant, alpha, seed, loss, acc, rel, sel = parts
            trace.variant = variant
            trace.alpha = float(alpha) if alpha else None
            trace.seed = int(seed)
            trace.records.append(
                RoundRecord(
                    int(rnd),
                    float(loss),
                    float(acc),
                    float(rel) if rel else None,
                    [int(c) for c in sel.split(";") if c],
                )
            )
    if meta.get("reference_accuracy"):
        trace.reference_accuracy = float(meta["reference_accuracy"])
    if meta.get("aborted_round"):
        trace.aborted_round = int(meta["aborted_round"])
    return trace, meta
