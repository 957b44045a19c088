"""Treatment effect estimation under covariate-adaptive randomization with heavy-tailed outcomes."""

from ._backend import BACKEND
from .designs import (
    DesignConfig,
    assign,
    assign_biased_coin,
    assign_minimization,
    assign_simple,
    assign_stratified_block,
    design_diagnostics,
)
from .errors import CarError, EstimationError, NotApplicableError, ValidationError
from .estimators import (
    EstimatorConfig,
    TrialData,
    diff_in_medians,
    diff_in_weighted_medians,
    naive_dim,
    split_samples,
    stratified_diff_in_medians,
    stratified_dim,
    stratified_tdim,
    tdim,
)
from .inference import (
    EstimateReport,
    q_for_design,
    variance_components,
    variance_conservative,
    variance_str,
    variance_tdim,
    wald_ci,
)
from .pipeline import EstimatorSpec, analyze_trial
from .score import ScoreModel, TruncationThresholds, fit_score

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CarError",
    "DesignConfig",
    "EstimateReport",
    "EstimationError",
    "EstimatorConfig",
    "EstimatorSpec",
    "NotApplicableError",
    "ScoreModel",
    "TrialData",
    "TruncationThresholds",
    "ValidationError",
    "analyze_trial",
    "assign",
    "assign_biased_coin",
    "assign_minimization",
    "assign_simple",
    "assign_stratified_block",
    "design_diagnostics",
    "diff_in_medians",
    "diff_in_weighted_medians",
    "fit_score",
    "naive_dim",
    "q_for_design",
    "split_samples",
    "stratified_diff_in_medians",
    "stratified_dim",
    "stratified_tdim",
    "tdim",
    "variance_components",
    "variance_conservative",
    "variance_str",
    "variance_tdim",
    "wald_ci",
]
