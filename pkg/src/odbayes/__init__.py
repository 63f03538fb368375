"""Bayesian inference for static origin-destination matrices given their margins."""

__version__ = "0.1.0"

from .core import (
    ConvergenceError,
    CostBins,
    InfeasibleError,
    MarginData,
    MarginError,
    ODError,
    check_consistency,
    complete_from_submatrix,
    round_to_feasible,
)
from .priors import (
    calibrate_beta,
    extended_furness,
    furness_balance,
    gravity_proportions,
    logit_proportions,
)
from .samplers import (
    ChainConfig,
    ChainOutput,
    run_beta_tld_chain,
    run_fixed_p_chain,
    run_seed_chain,
)
from .analysis import exact_posterior, summarize

__all__ = [
    "ChainConfig", "ChainOutput", "ConvergenceError", "CostBins", "InfeasibleError",
    "MarginData", "MarginError", "ODError", "calibrate_beta", "check_consistency",
    "complete_from_submatrix", "exact_posterior", "extended_furness", "furness_balance",
    "gravity_proportions", "logit_proportions", "round_to_feasible", "run_beta_tld_chain",
    "run_fixed_p_chain", "run_seed_chain", "summarize",
]
