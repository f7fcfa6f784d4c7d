"""Experiment configuration, presets, Monte Carlo orchestration and CLI."""

from .config import ConfigError, ExperimentConfig, parse_config
from .presets import PRESETS
from .runner import RunResult, load_dataset, run_experiment

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "PRESETS", "RunResult",
           "load_dataset", "run_experiment"]
