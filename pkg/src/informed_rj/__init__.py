"""Informed reversible-jump MCMC for Bayesian variable selection in linear regression.

Normal and LPTN (log-Pareto-tailed normal) error models, Laplace-informed
model proposals, annealed and multi-estimate model switches, exact and
importance-sampling reference PMFs, and run diagnostics.
"""

from .diagnostics import ModelInfoCache, RunSummary, Trace, empirical_model_pmf, ess_scalar
from .estimator import InformedRJRegressor
from .laplace import ModelInfo, build_model_info, map_estimate, model_proposal_pmf
from .oracle import ModelPmf, exact_model_pmf_normal, golden_model_pmf_lptn, tv_distance
from .regression import Dataset, load_csv, lptn_constants
from .samplers import AnnealConfig, ChainState, SamplerSpec, run_chain

__version__ = "0.1.0"

__all__ = [
    "AnnealConfig", "ChainState", "Dataset", "InformedRJRegressor", "ModelInfo", "ModelInfoCache",
    "ModelPmf", "RunSummary", "SamplerSpec", "Trace", "build_model_info", "empirical_model_pmf",
    "ess_scalar", "exact_model_pmf_normal", "golden_model_pmf_lptn", "load_csv", "lptn_constants",
    "map_estimate", "model_proposal_pmf", "run_chain", "tv_distance",
]
