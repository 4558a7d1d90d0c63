"""Experiment configs, the runner, and result reporting."""

from .config import ExperimentConfig, expand_grid, from_dict, load_config_file
from .report import read_rows_csv, trend_report, write_rows_csv
from .runner import ResultRow, run_experiment

__all__ = [
    "ExperimentConfig",
    "ResultRow",
    "expand_grid",
    "from_dict",
    "load_config_file",
    "read_rows_csv",
    "run_experiment",
    "trend_report",
    "write_rows_csv",
]
