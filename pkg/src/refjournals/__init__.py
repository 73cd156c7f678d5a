"""Journal-level quality estimates from institution-level rating profiles.

Two estimators are provided: a hierarchical Poisson-binomial model sampled
with NUTS (:class:`PoissonBinomialHMC`) and an EM algorithm over
noncentral hypergeometric imputations (:class:`HypergeometricEM`).
"""
from .data import (AGGREGATE_COLUMNS, CONFERENCE, OTHER_JOURNALS, OTHER_OUTPUTS, CountsMatrix,
                   InstitutionProfile, ProfileArrays, TargetLevel, align_profiles)
from .em import (CvConfig, EmConfig, HypergeometricUrn, RaschFit, cross_validate, em_run,
                 fit_rasch, mvh_approx_expectation, mvh_exact_expectation)
from .estimators import HypergeometricEM, PoissonBinomialHMC
from .metrics import (FundingConfig, dissimilarity, ecological_bounds, funding_value,
                      metric_correlation, money_redistribution, predict, probit_gap)
from .model import (ModelState, PoissonBinomialPosterior, derive_three_star, grad_log_posterior,
                    log_posterior)
from .pbinom import grad_log_pmf, log_pmf_dp, log_pmf_shah, moments
from .sampler import ChainConfig, PosteriorDraws, run_chains, summarize

__version__ = "0.1.0"

__all__ = [
    "AGGREGATE_COLUMNS", "CONFERENCE", "OTHER_JOURNALS", "OTHER_OUTPUTS", "CountsMatrix",
    "InstitutionProfile", "ProfileArrays", "TargetLevel", "align_profiles",
    "CvConfig", "EmConfig", "HypergeometricUrn", "RaschFit", "cross_validate", "em_run",
    "fit_rasch", "mvh_approx_expectation", "mvh_exact_expectation",
    "HypergeometricEM", "PoissonBinomialHMC",
    "FundingConfig", "dissimilarity", "ecological_bounds", "funding_value", "metric_correlation",
    "money_redistribution", "predict", "probit_gap",
    "ModelState", "PoissonBinomialPosterior", "derive_three_star", "grad_log_posterior",
    "log_posterior",
    "grad_log_pmf", "log_pmf_dp", "log_pmf_shah", "moments",
    "ChainConfig", "PosteriorDraws", "run_chains", "summarize",
]
