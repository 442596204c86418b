"""Propensity-score subclassification for binary treatments and binary outcomes."""

from .analysis import AnalysisConfig, AnalysisResult, run_analysis
from .dataset import GroupSummary, ObservationalDataset, Unit, load_csv, summarize, write_csv
from .errors import PsstratError
from .estimators import (
    EffectEstimate,
    aggregate_strata,
    bias_decomposition,
    naive_difference,
    regression_adjusted_effect,
    stratified_effect,
)
from .glm import DesignSpec, GlmFit, fit_binary_glm, likelihood_ratio_test
from .propensity import common_support, estimate_propensity, trim_to_support
from .stratify import balance_table, initial_strata, refine_strata, rubin_diagnostics

__version__ = "0.1.0"

__all__ = [
    "AnalysisConfig", "AnalysisResult", "run_analysis",
    "GroupSummary", "ObservationalDataset", "Unit", "load_csv", "summarize", "write_csv",
    "PsstratError",
    "EffectEstimate", "aggregate_strata", "bias_decomposition", "naive_difference",
    "regression_adjusted_effect", "stratified_effect",
    "DesignSpec", "GlmFit", "fit_binary_glm", "likelihood_ratio_test",
    "common_support", "estimate_propensity", "trim_to_support",
    "balance_table", "initial_strata", "refine_strata", "rubin_diagnostics",
    "__version__",
]
