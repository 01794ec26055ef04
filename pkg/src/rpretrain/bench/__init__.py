"""Config-driven simulation benchmarks (records, figures, CLI)."""

from .config import ConfigError, ExperimentConfig
from .figures import MissingSeriesError, make_figure
from .runner import RECORD_COLUMNS, read_records, run_experiment

__all__ = ["ConfigError", "ExperimentConfig", "MissingSeriesError", "make_figure", "RECORD_COLUMNS",
           "read_records", "run_experiment"]
