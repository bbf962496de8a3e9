"""Experiment runners: centralized baseline, federated runs, ablation matrices.

Artifacts per seed: a CSV metric trace (with config hash and reference
accuracy in its header), best- and final-weights checkpoints, and a JSON
summary sidecar.  Re-running the same config reproduces all of them
bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .. import rng as rngmod
from ..data import (
    Dataset,
    PartitionSpec,
    Preprocessing,
    channel_stats,
    dirichlet_partition,
    load_cifar10,
    load_dataset,
    preprocess,
    preprocess_images,
    synthesize_dataset,
    train_val_split,
)
from ..engine import (
    MetricTrace,
    RoundConfig,
    RoundRecord,
    VariantConfig,
    evaluate,
    minibatch_indices,
    relative_accuracy,
    run_training,
    write_trace,
    LOSS_BLOWUP,
)
from ..errors import ConfigError, FedsimError
from ..nn import ModelSpec, NormKind, backward, init_weights, lenet5, save_weights, sgd_step
from ..openset import (
    GanSpec,
    GaussianFitGenerator,
    Generator,
    NoiseGenerator,
    UnknownConfig,
    load_generator,
    train_generator,
)
from .config import ExperimentConfig, config_hash, resolve_cifar_dir

POOL_SEED_TAG = 7777  # offsets the synthetic pool stream away from the dataset's


@dataclass
class DataBundle:
    train: Dataset               # preprocessed training split
    val: Dataset                 # preprocessed server validation split
    test: Optional[Dataset]      # preprocessed test split (cifar10 only)
    preprocess_fn: Callable[[np.ndarray], np.ndarray]  # raw images -> model space
    raw_pool: Dataset            # generic raw-space pool for generator fitting


def build_data(cfg: ExperimentConfig) -> DataBundle:
    d = cfg.data
    test = None
    if d.source == "synthetic":
        full = synthesize_dataset(
            d.synthetic_classes, d.synthetic_samples, d.synthetic_height, d.synthetic_width,
            seed=d.synthetic_seed,
        )
        raw_pool = synthesize_dataset(
            d.synthetic_classes, cfg.variant.pool_size, d.synthetic_height, d.synthetic_width,
            seed=d.synthetic_seed + POOL_SEED_TAG,
        )
    elif d.source == "cifar10":
        full, test_raw = load_cifar10(resolve_cifar_dir(cfg))
        test = test_raw
        raw_pool = None
    else:
        full = load_dataset(d.dataset_path)
        raw_pool = None

    train_raw, val_raw = train_val_split(full, d.val_fraction, seed=d.synthetic_seed)
    if d.train_subset:
        train_raw = train_raw.subset(np.arange(min(d.train_subset, len(train_raw))))
    if raw_pool is None:
        # carve the pool off the tail of the training split so it never
        # overlaps the first train_subset samples used for training
        pool_n = min(cfg.variant.pool_size, len(train_raw))
        raw_pool = train_raw.subset(np.arange(len(train_raw) - pool_n, len(train_raw)))

    kind = Preprocessing(d.preprocessing)
    stats = channel_stats(train_raw) if kind is Preprocessing.STANDARDIZED else None
    train = preprocess(train_raw, kind, stats)
    val = preprocess(val_raw, kind, stats)
    if test is not None:
        test = preprocess(test, kind, stats)
    fn = partial(preprocess_images, kind=kind, train_stats=stats)
    return DataBundle(train, val, test, fn, raw_pool)


def model_spec(cfg: ExperimentConfig, *, input_hw: tuple[int, int], classes: int,
               unknown_head: bool) -> ModelSpec:
    m = cfg.model
    if m.norm == "batch":
        norm = NormKind.batch()
    elif m.norm == "group":
        norm = NormKind.group(m.groups)
    else:
        norm = NormKind.none()
    return ModelSpec(
        input_shape=(3, *input_hw),
        num_known_classes=classes,
        has_unknown_head=unknown_head,
        norm=norm,
        hidden_units=m.hidden_units,
    )


def build_generator(cfg: ExperimentConfig, bundle: DataBundle,
                    classifier_parameter_count: Optional[int] = None) -> Generator:
    v = cfg.variant
    if v.generator_path:
        return load_generator(v.generator_path,
                              classifier_parameter_count=classifier_parameter_count)
    if v.generator == "noise":
        return NoiseGenerator(bundle.raw_pool.image_shape)
    if v.generator == "gaussian_fit":
        return GaussianFitGenerator.fit(bundle.raw_pool)
    g = cfg.gan
    spec = GanSpec(
        latent_dim=g.latent_dim, gen_widths=g.gen_widths, disc_widths=g.disc_widths,
        epochs=g.epochs, lr=g.lr, batch_size=g.batch_size, seed=g.seed,
        resolution=g.resolution,
    )
    return train_generator(bundle.raw_pool, spec)


def variant_config(cfg: ExperimentConfig, generator: Optional[Generator]) -> VariantConfig:
    v = cfg.variant
    if v.kind == "fedavg":
        return VariantConfig.fedavg()
    if v.kind == "fedprox":
        return VariantConfig.fedprox(v.mu)
    if v.kind == "fedir":
        return VariantConfig.fedir(v.smoothing)
    if generator is None:
        raise ConfigError("fedos needs a generator", "variant.generator")
    return VariantConfig.fedos(
        UnknownConfig(weight=v.unknown_weight, fraction=v.unknown_fraction, generator=generator)
    )


def resolve_reference(cfg: ExperimentConfig) -> Optional[float]:
    if cfg.reference_accuracy:
        return cfg.reference_accuracy
    if cfg.reference_path:
        summary = json.loads(Path(cfg.reference_path).read_text())
        if "reference_accuracy" not in summary:
            raise ConfigError(f"{cfg.reference_path} has no reference_accuracy key",
                              "experiment.reference_path")
        return float(summary["reference_accuracy"])
    return None


# --------------------------------------------------------------------------
# centralized baseline
# --------------------------------------------------------------------------


@dataclass
class CentralizedResult:
    trace: MetricTrace
    reference_accuracy: float  # best validation accuracy over the run
    best_weights: object
    final_weights: object


def run_centralized(cfg: ExperimentConfig, seed: int, *,
                    bundle: Optional[DataBundle] = None) -> CentralizedResult:
    """Plain minibatch SGD on the (subset) training split, evaluated per epoch."""
    if bundle is None:
        bundle = build_data(cfg)
    spec = model_spec(cfg, input_hw=bundle.train.image_shape[1:],
                      classes=bundle.train.class_count, unknown_head=False)
    c = cfg.centralized
    weights = init_weights(spec, seed)
    trace = MetricTrace(variant="centralized", seed=seed)
    best_acc = evaluate(spec, weights, bundle.val)
    best_weights = weights.copy()
    images, labels = bundle.train.images, bundle.train.labels
    n = len(images)
    for epoch in range(c.epochs):
        gen = rngmod.stream(seed, rngmod.CENTRAL, epoch)
        loss_sum = 0.0
        for idx in minibatch_indices(gen, n, c.batch_size):
            loss, grads = backward(spec, weights, images[idx], labels[idx])
            weights = sgd_step(weights, grads, c.lr)
            loss_sum += loss * len(idx)
        epoch_loss = loss_sum / n
        if not np.isfinite(epoch_loss) or epoch_loss > LOSS_BLOWUP:
            trace.aborted_round = epoch
            break
        acc = evaluate(spec, weights, bundle.val)
        if acc > best_acc:
            best_acc = acc
            best_weights = weights.copy()
        trace.records.append(RoundRecord(epoch, epoch_loss, acc, None, []))
    return CentralizedResult(trace, best_acc, best_weights, weights)


# --------------------------------------------------------------------------
# federated experiments
# --------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    hash: str
    traces: dict[int, MetricTrace]          # per seed
    summaries: dict[int, dict]
    out_dir: Optional[Path]


def run_experiment(cfg: ExperimentConfig, *, write: bool = True,
                   bundle: Optional[DataBundle] = None,
                   parallel: bool = False) -> ExperimentResult:
    """One run per seed; writes traces, checkpoints and summaries when ``write``."""
    if bundle is None:
        bundle = build_data(cfg)
    chash = config_hash(cfg)
    out = None
    if write:
        out = Path(cfg.out_dir) / cfg.name
        out.mkdir(parents=True, exist_ok=True)
    traces: dict[int, MetricTrace] = {}
    summaries: dict[int, dict] = {}

    if cfg.mode == "centralized":
        for seed in cfg.seeds:
            result = run_centralized(cfg, seed, bundle=bundle)
            traces[seed] = result.trace
            summary = result.trace.summary()
            summary.update({"config_hash": chash, "seed": seed,
                            "reference_accuracy": result.reference_accuracy})
            summaries[seed] = summary
            if write:
                write_trace(out / f"trace_seed{seed}.csv", result.trace,
                            {"config_hash": chash, "mode": "centralized"})
                save_weights(out / f"best_seed{seed}.fsw", result.best_weights)
                save_weights(out / f"final_seed{seed}.fsw", result.final_weights)
                (out / f"summary_seed{seed}.json").write_text(
                    json.dumps(summary, indent=2, sort_keys=True) + "\n")
        return ExperimentResult(cfg, chash, traces, summaries, out)

    reference = resolve_reference(cfg)
    unknown_head = cfg.variant.kind == "fedos"
    spec = model_spec(cfg, input_hw=bundle.train.image_shape[1:],
                      classes=bundle.train.class_count, unknown_head=unknown_head)
    generator = None
    if unknown_head:
        generator = build_generator(
            cfg, bundle, classifier_parameter_count=init_weights(spec, 0).num_parameters()
        )
    vc = variant_config(cfg, generator)

    for seed in cfg.seeds:
        pspec = PartitionSpec(cfg.partition.n_clients, cfg.partition.alpha,
                              cfg.partition.samples_per_client, seed=seed)
        part = dirichlet_partition(bundle.train, pspec)
        rc = RoundConfig(cfg.rounds.rounds, cfg.rounds.client_fraction, cfg.rounds.local_epochs,
                         cfg.rounds.batch_size, cfg.rounds.lr, seed=seed)
        state, trace = run_training(
            spec, bundle.train, part, bundle.val, rc, vc,
            reference_accuracy=reference, parallel=parallel,
            unknown_preprocess=bundle.preprocess_fn,
        )
        traces[seed] = trace
        summary = trace.summary()
        summary.update({"config_hash": chash, "seed": seed})
        summaries[seed] = summary
        if write:
            write_trace(out / f"trace_seed{seed}.csv", trace, {"config_hash": chash})
            if state.best_weights is not None:
                save_weights(out / f"best_seed{seed}.fsw", state.best_weights)
            save_weights(out / f"final_seed{seed}.fsw", state.weights)
            (out / f"summary_seed{seed}.json").write_text(
                json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return ExperimentResult(cfg, chash, traces, summaries, out)


ABLATION_AXES = {
    "alpha": "partition.alpha",
    "local_epochs": "rounds.local_epochs",
    "client_fraction": "rounds.client_fraction",
    "w_u": "variant.unknown_weight",
    "unknown_weight": "variant.unknown_weight",
    "f_u": "variant.unknown_fraction",
    "unknown_fraction": "variant.unknown_fraction",
}


def run_ablation_matrix(cfg: ExperimentConfig, axis: str, values: list,
                        *, bundle: Optional[DataBundle] = None):
    """One experiment per axis value; failures are recorded and skipped.

    Returns a ReportTable with per-value mean and max validation accuracy
    (and relative accuracy when a reference is configured).
    """
    from .report import ReportTable  # local import to avoid a cycle
    from .config import apply_overrides

    if axis not in ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis {axis!r} (have {sorted(ABLATION_AXES)})", "axis")
    dotted = ABLATION_AXES[axis]
    if bundle is None:
        bundle = build_data(cfg)  # no axis touches the dataset itself

    columns = ["axis", "value", "seeds", "mean_val_acc", "max_val_acc",
               "mean_rel_val_acc", "max_rel_val_acc", "error"]
    table = ReportTable(title=f"ablation over {axis}", columns=columns)
    for value in values:
        row: dict = {"axis": axis, "value": value, "seeds": len(cfg.seeds), "error": ""}
        try:
            derived = apply_overrides(cfg, {dotted: str(value)})
            result = run_experiment(derived, write=False, bundle=bundle)
            means, maxes, rel_means, rel_maxes = [], [], [], []
            for trace in result.traces.values():
                s = trace.summary()
                means.append(s.get("mean_val_acc", np.nan))
                maxes.append(s.get("max_val_acc", np.nan))
                rel_means.append(s.get("mean_rel_val_acc", np.nan))
                rel_maxes.append(s.get("max_rel_val_acc", np.nan))
            row["mean_val_acc"] = float(np.mean(means))
            row["max_val_acc"] = float(np.mean(maxes))
            if not all(np.isnan(rel_means)):
                row["mean_rel_val_acc"] = float(np.mean(rel_means))
                row["max_rel_val_acc"] = float(np.mean(rel_maxes))
        except FedsimError as exc:
            row["error"] = str(exc)
        table.rows.append(row)
    return table
