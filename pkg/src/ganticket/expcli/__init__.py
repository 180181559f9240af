"""Experiment runner: config files, checkpoint archives, reports and the ``ganticket`` CLI."""

from ganticket.expcli.archive import ROOT_ENV, Archive, default_root
from ganticket.expcli.config import ExperimentConfig, load_config, parse_config
from ganticket.expcli.runner import RunError, run_experiment

__all__ = [
    "ROOT_ENV",
    "Archive",
    "ExperimentConfig",
    "RunError",
    "default_root",
    "load_config",
    "parse_config",
    "run_experiment",
]
