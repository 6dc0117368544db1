"""
FCRec Simulator - simulátor federovaného kontinuálního doporučování.

Klientská adaptivní replay paměť s distilací znalostí, serverový item-wise
temporal mean, baseline metody (FT, Reg, KD) a ablace nad FedMF/FedNCF.
"""

from .config import Backbone, ExperimentConfig, Method, MethodProfile, build_config, method_profile
from .exceptions import (
    FCRecAggregationError,
    FCRecConfigError,
    FCRecDataError,
    FCRecDivergenceError,
    FCRecException,
    FCRecValidationError,
)
from .experiment import ExperimentResult, report, run_experiment, sweep
from .models import (
    AnalysisResult,
    BlockStats,
    ClientLossSummary,
    EvalResult,
    ExperimentSummary,
    RoundReport,
)

__version__ = "1.0.0"

__all__ = [
    # Config
    "ExperimentConfig",
    "Method",
    "Backbone",
    "MethodProfile",
    "build_config",
    "method_profile",
    # Experiment
    "run_experiment",
    "sweep",
    "report",
    "ExperimentResult",
    # Models
    "EvalResult",
    "RoundReport",
    "ClientLossSummary",
    "BlockStats",
    "AnalysisResult",
    "ExperimentSummary",
    # Exceptions
    "FCRecException",
    "FCRecValidationError",
    "FCRecConfigError",
    "FCRecDataError",
    "FCRecDivergenceError",
    "FCRecAggregationError",
]
