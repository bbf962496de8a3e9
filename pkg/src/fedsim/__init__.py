"""fedsim: deterministic federated-learning simulation at desk scale.

A small numpy CNN engine (LeNet-5 variant with optional batch/group
normalization), Dirichlet non-IID client partitioning, the FedAvg /
FedProx / FedIR aggregation variants, open-set unknown-class augmentation
with a generator, and an experiment harness with CLI.
"""

from . import data, engine, nn, openset, rng
from .errors import (
    ConfigError,
    FedsimError,
    FormatError,
    GanDivergedError,
    PartitionError,
    ShapeError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "FedsimError",
    "FormatError",
    "GanDivergedError",
    "PartitionError",
    "ShapeError",
    "data",
    "engine",
    "nn",
    "openset",
    "rng",
    "__version__",
]
