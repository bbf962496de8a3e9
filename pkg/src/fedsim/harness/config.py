"""Experiment configuration: INI-style files, validation, provenance hash.

The file format is flat sections of ``key = value`` pairs (configparser
dialect).  Every key has a default reproducing the baseline federated
setup (20 clients x 2000 samples, 20% fraction, 1 local epoch, lr 0.1,
standardized inputs), so an empty file is a valid experiment.  Unknown
sections or keys, type errors and constraint violations all raise
ConfigError naming the offending ``section.key``.

The config hash covers every semantic field except the output directory
and the seed list, so re-runs and per-seed artifacts of one experiment
share a hash.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional, Union

from ..errors import ConfigError

ENV_DATA_ROOT = "FEDSIM_DATA_ROOT"


@dataclass(frozen=True)
class DataSettings:
    source: str = "synthetic"  # synthetic | cifar10 | fsd
    cifar10_dir: str = ""
    dataset_path: str = ""
    synthetic_classes: int = 10
    synthetic_samples: int = 45000
    synthetic_height: int = 32
    synthetic_width: int = 32
    synthetic_seed: int = 0
    train_subset: int = 0  # 0 = use everything
    val_fraction: float = 0.1
    preprocessing: str = "standardized"  # raw | scaled | standardized


@dataclass(frozen=True)
class ModelSettings:
    norm: str = "none"  # none | batch | group
    groups: tuple[int, ...] = (2, 4, 30)
    hidden_units: int = 84


@dataclass(frozen=True)
class PartitionSettings:
    n_clients: int = 20
    alpha: float = 1.0
    samples_per_client: int = 2000


@dataclass(frozen=True)
class RoundSettings:
    rounds: int = 60
    client_fraction: float = 0.2
    local_epochs: int = 1
    batch_size: int = 32
    lr: float = 0.1


@dataclass(frozen=True)
class VariantSettings:
    kind: str = "fedavg"
    mu: float = 1.0
    smoothing: float = 1.0
    unknown_weight: float = 1.0
    unknown_fraction: float = 0.6
    generator: str = "gaussian_fit"  # noise | gaussian_fit | tiny_gan
    generator_path: str = ""
    pool_size: int = 5000


@dataclass(frozen=True)
class GanSettings:
    latent_dim: int = 32
    gen_widths: tuple[int, ...] = (64, 128)
    disc_widths: tuple[int, ...] = (128, 64)
    epochs: int = 30
    lr: float = 0.05
    batch_size: int = 64
    resolution: int = 8
    seed: int = 0


@dataclass(frozen=True)
class CentralizedSettings:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "federated"  # federated | centralized
    name: str = "experiment"
    out_dir: str = "runs"
    seeds: tuple[int, ...] = (0,)
    reference_accuracy: float = 0.0  # 0 = unset
    reference_path: str = ""
    data: DataSettings = DataSettings()
    model: ModelSettings = ModelSettings()
    partition: PartitionSettings = PartitionSettings()
    rounds: RoundSettings = RoundSettings()
    variant: VariantSettings = VariantSettings()
    gan: GanSettings = GanSettings()
    centralized: CentralizedSettings = CentralizedSettings()


_SECTIONS = {
    "experiment": (ExperimentConfig, None),
    "data": (DataSettings, "data"),
    "model": (ModelSettings, "model"),
    "partition": (PartitionSettings, "partition"),
    "rounds": (RoundSettings, "rounds"),
    "variant": (VariantSettings, "variant"),
    "gan": (GanSettings, "gan"),
    "centralized": (CentralizedSettings, "centralized"),
}
_TOP_LEVEL_KEYS = ("mode", "name", "out_dir", "seeds", "reference_accuracy", "reference_path")


def _parse_value(raw: str, proto, where: str):
    """Coerce a raw string to the type of the prototype default value."""
    raw = raw.strip()
    try:
        if isinstance(proto, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(proto, int):
            return int(raw)
        if isinstance(proto, float):
            return float(raw)
        if isinstance(proto, tuple):
            if not raw:
                return ()
            return tuple(int(p.strip()) for p in raw.split(","))
        return raw
    except ValueError as exc:
        raise ConfigError(f"cannot parse {raw!r} as {type(proto).__name__}", where) from exc


def _build_section(cls, section: str, items: dict[str, str]):
    defaults = cls()
    values = {}
    names = {f.name for f in fields(cls)}
    for key, raw in items.items():
        if key not in names:
            raise ConfigError(f"unknown key {key!r}", f"{section}.{key}")
        values[key] = _parse_value(raw, getattr(defaults, key), f"{section}.{key}")
    return replace(defaults, **values)


def _check(cond: bool, message: str, field: str) -> None:
    if not cond:
        raise ConfigError(message, field)


def _validate(cfg: ExperimentConfig) -> ExperimentConfig:
    _check(cfg.mode in ("federated", "centralized"), f"unknown mode {cfg.mode!r}", "experiment.mode")
    _check(len(cfg.seeds) >= 1, "need at least one seed", "experiment.seeds")
    d = cfg.data
    _check(d.source in ("synthetic", "cifar10", "fsd"), f"unknown source {d.source!r}", "data.source")
    _check(d.preprocessing in ("raw", "scaled", "standardized"),
           f"unknown preprocessing {d.preprocessing!r}", "data.preprocessing")
    _check(0.0 < d.val_fraction < 1.0, f"val_fraction must be in (0, 1), got {d.val_fraction}",
           "data.val_fraction")
    _check(d.synthetic_classes >= 2, "need at least 2 classes", "data.synthetic_classes")
    _check(d.synthetic_samples >= d.synthetic_classes, "too few samples", "data.synthetic_samples")
    if d.source == "cifar10":
        path = resolve_cifar_dir(cfg)
        _check(bool(path), "cifar10 source needs data.cifar10_dir or $" + ENV_DATA_ROOT,
               "data.cifar10_dir")
        _check(Path(path).exists(), f"cifar10 directory {path!r} does not exist", "data.cifar10_dir")
    if d.source == "fsd":
        _check(bool(d.dataset_path), "fsd source needs data.dataset_path", "data.dataset_path")
        _check(Path(d.dataset_path).exists(), f"dataset {d.dataset_path!r} does not exist",
               "data.dataset_path")
    m = cfg.model
    _check(m.norm in ("none", "batch", "group"), f"unknown norm {m.norm!r}", "model.norm")
    _check(m.hidden_units >= 1, "hidden_units must be positive", "model.hidden_units")
    p = cfg.partition
    _check(p.alpha > 0, f"alpha must be positive, got {p.alpha}", "partition.alpha")
    _check(p.n_clients >= 1, "n_clients must be >= 1", "partition.n_clients")
    _check(p.samples_per_client >= 1, "samples_per_client must be >= 1",
           "partition.samples_per_client")
    r = cfg.rounds
    _check(r.rounds >= 0, "rounds must be nonnegative", "rounds.rounds")
    _check(0.0 < r.client_fraction <= 1.0, f"client_fraction must be in (0, 1], got {r.client_fraction}",
           "rounds.client_fraction")
    _check(r.local_epochs >= 1, "local_epochs must be >= 1", "rounds.local_epochs")
    _check(r.batch_size >= 1, "batch_size must be >= 1", "rounds.batch_size")
    _check(r.lr > 0, "lr must be positive", "rounds.lr")
    v = cfg.variant
    _check(v.kind in ("fedavg", "fedprox", "fedir", "fedos"), f"unknown variant {v.kind!r}",
           "variant.kind")
    _check(v.mu >= 0, "mu must be nonnegative", "variant.mu")
    _check(v.smoothing >= 0, "smoothing must be nonnegative", "variant.smoothing")
    _check(v.unknown_weight >= 0, "unknown_weight must be nonnegative", "variant.unknown_weight")
    _check(v.unknown_fraction >= 0, "unknown_fraction must be nonnegative",
           "variant.unknown_fraction")
    _check(v.generator in ("noise", "gaussian_fit", "tiny_gan"),
           f"unknown generator {v.generator!r}", "variant.generator")
    _check(v.pool_size >= 1, "pool_size must be >= 1", "variant.pool_size")
    g = cfg.gan
    _check(g.latent_dim >= 1, "latent_dim must be >= 1", "gan.latent_dim")
    _check(g.epochs >= 0, "epochs must be nonnegative", "gan.epochs")
    _check(g.resolution >= 1, "resolution must be >= 1", "gan.resolution")
    c = cfg.centralized
    _check(c.epochs >= 0, "epochs must be nonnegative", "centralized.epochs")
    _check(c.batch_size >= 1, "batch_size must be >= 1", "centralized.batch_size")
    _check(c.lr > 0, "lr must be positive", "centralized.lr")
    return cfg


def resolve_cifar_dir(cfg: ExperimentConfig) -> str:
    if cfg.data.cifar10_dir:
        return cfg.data.cifar10_dir
    return os.environ.get(ENV_DATA_ROOT, "")


def _raw_items(path: Optional[Union[str, Path]]) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser()
    if path is not None:
        text = Path(path).read_text()
        try:
            parser.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config file: {exc}") from exc
    out: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]", section)
        out[section] = dict(parser.items(section))
    return out


def validate_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[dict[str, str]] = None,
) -> ExperimentConfig:
    """Parse, apply ``section.key -> value`` overrides, fill defaults, validate."""
    raw = _raw_items(path)
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section in override {dotted!r}", dotted)
        raw.setdefault(section, {})[key] = value

    exp_items = raw.get("experiment", {})
    top: dict[str, object] = {}
    for key, value in exp_items.items():
        if key not in _TOP_LEVEL_KEYS:
            raise ConfigError(f"unknown key {key!r}", f"experiment.{key}")
        if key == "seeds":
            try:
                top["seeds"] = tuple(int(p.strip()) for p in value.split(",") if p.strip())
            except ValueError as exc:
                raise ConfigError(f"cannot parse seed list {value!r}", "experiment.seeds") from exc
        elif key == "reference_accuracy":
            top["reference_accuracy"] = _parse_value(value, 0.0, "experiment.reference_accuracy")
        else:
            top[key] = value.strip()

    cfg = ExperimentConfig(
        **top,
        data=_build_section(DataSettings, "data", raw.get("data", {})),
        model=_build_section(ModelSettings, "model", raw.get("model", {})),
        partition=_build_section(PartitionSettings, "partition", raw.get("partition", {})),
        rounds=_build_section(RoundSettings, "rounds", raw.get("rounds", {})),
        variant=_build_section(VariantSettings, "variant", raw.get("variant", {})),
        gan=_build_section(GanSettings, "gan", raw.get("gan", {})),
        centralized=_build_section(CentralizedSettings, "centralized", raw.get("centralized", {})),
    )
    return _validate(cfg)


def apply_overrides(cfg: ExperimentConfig, overrides: dict[str, object]) -> ExperimentConfig:
    """Rebuild a validated config with ``section.key -> value`` replacements."""
    by_section: dict[str, dict[str, object]] = {}
    for dotted, value in overrides.items():
        section, _, key = dotted.partition(".")
        by_section.setdefault(section, {})[key] = value
    top = by_section.pop("experiment", {})
    kwargs: dict[str, object] = {}
    for section, items in by_section.items():
        if section not in _SECTIONS or _SECTIONS[section][1] is None:
            raise ConfigError(f"unknown section in override {section!r}", section)
        cls, attr = _SECTIONS[section]
        sub = getattr(cfg, attr)
        names = {f.name for f in fields(cls)}
        for key, value in items.items():
            if key not in names:
                raise ConfigError(f"unknown key {key!r}", f"{section}.{key}")
            proto = getattr(sub, key)
            sub = replace(sub, **{key: _parse_value(str(value), proto, f"{section}.{key}")
                                  if isinstance(value, str) else type(proto)(value)})
        kwargs[attr] = sub
    for key, value in top.items():
        if key not in _TOP_LEVEL_KEYS:
            raise ConfigError(f"unknown key {key!r}", f"experiment.{key}")
        kwargs[key] = value
    return _validate(replace(cfg, **kwargs))


def _dump_lines(cfg: ExperimentConfig) -> list[str]:
    lines = []
    for key in _TOP_LEVEL_KEYS:
        value = getattr(cfg, key)
        if key == "seeds":
            value = ",".join(str(s) for s in value)
        lines.append(f"experiment.{key}={value}")
    for section, (cls, attr) in _SECTIONS.items():
        if attr is None:
            continue
        sub = getattr(cfg, attr)
        for f in fields(cls):
            value = getattr(sub, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{section}.{f.name}={value}")
    return lines


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical INI text for the normalized config (reparses to itself)."""
    lines = ["[experiment]"]
    for key in _TOP_LEVEL_KEYS:
        value = getattr(cfg, key)
        if key == "seeds":
            value = ",".join(str(s) for s in value)
        lines.append(f"{key} = {value}")
    for section, (cls, attr) in _SECTIONS.items():
        if attr is None:
            continue
        lines.append(f"\n[{section}]")
        sub = getattr(cfg, attr)
        for f in fields(cls):
            value = getattr(sub, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    """12-hex digest over all semantic fields (out_dir, name and seeds excluded)."""
    skip = ("experiment.out_dir", "experiment.seeds", "experiment.name")
    payload = "\n".join(l for l in sorted(_dump_lines(cfg)) if not l.startswith(skip))
    return hashlib.sha256(payload.encode()).hexdigest()[:12]
