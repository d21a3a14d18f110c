"""privaml: privacy-preserving transaction scoring.

Synthetic laundering-pattern data, sliding-window graph features, gradient
boosted trees, integer quantization, simulated homomorphic evaluation with
an exactness guarantee, Bayesian hyperparameter search, and a multi-party
scoring protocol, behind one CLI.
"""

from . import collab, data, fhe, gbt, graphfeat, hpo, metrics, quant
from .errors import ConfigError, DataError, PipelineError, PrivamlError
from .experiment import (
    MODES,
    REPORT_COLUMNS,
    ExperimentConfig,
    ReportRow,
    load_dataset,
    parse_report_csv,
    render_report,
    run_experiment,
)
from .metrics import MetricsReport, compute_metrics

__version__ = "0.1.0"

__all__ = [
    "MODES",
    "REPORT_COLUMNS",
    "ConfigError",
    "DataError",
    "ExperimentConfig",
    "MetricsReport",
    "PipelineError",
    "PrivamlError",
    "ReportRow",
    "collab",
    "compute_metrics",
    "data",
    "fhe",
    "gbt",
    "graphfeat",
    "hpo",
    "load_dataset",
    "metrics",
    "parse_report_csv",
    "quant",
    "render_report",
    "run_experiment",
    "__version__",
]
