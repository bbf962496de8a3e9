"""Experiment harness: configs, runners, reports, CLI."""

from .config import (
    ExperimentConfig,
    apply_overrides,
    config_hash,
    dump_config,
    validate_config,
)
from .report import ReportTable, checkpoint_table, emit_report, svg_line_chart
from .runners import (
    DataBundle,
    build_data,
    build_generator,
    run_ablation_matrix,
    run_centralized,
    run_experiment,
)

__all__ = [
    "DataBundle",
    "ExperimentConfig",
    "ReportTable",
    "apply_overrides",
    "build_data",
    "build_generator",
    "checkpoint_table",
    "config_hash",
    "dump_config",
    "emit_report",
    "run_ablation_matrix",
    "run_centralized",
    "run_experiment",
    "svg_line_chart",
    "validate_config",
]
