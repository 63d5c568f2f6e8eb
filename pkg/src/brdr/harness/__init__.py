"""Experiment orchestration: configuration, training loop, CLI."""

from .config import (PRESETS, ExperimentConfig, config_from_dict, emit_config, parse_config,
                     parse_config_text, preset_config)
from .runner import (Experiment, MetricsRecord, RunResult, emit_metrics, metric_columns,
                     read_metrics, run_experiment)

__all__ = [
    "PRESETS", "Experiment", "ExperimentConfig", "MetricsRecord", "RunResult", "config_from_dict",
    "emit_config", "emit_metrics", "metric_columns", "parse_config", "parse_config_text",
    "preset_config", "read_metrics", "run_experiment",
]
