"""Numerical estimation core: GLM fits, mixed models, robust covariances."""

from .betareg import beta_observed_information, beta_score_matrix, fit_beta_regression
from .frame import FitResult, ModelFrame, VarianceKind, VarianceSpec, check_full_rank
from .glmm import fit_glmm_random_intercept
from .linear import fit_weighted_linear
from .logistic import fit_binomial_logistic, fit_quasibinomial, pearson_dispersion
from .sandwich import sandwich_covariance
from .transforms import icc_from_tau2, squeeze_unit_interval, standardize, tau2_from_icc

__all__ = [
    "FitResult",
    "ModelFrame",
    "VarianceKind",
    "VarianceSpec",
    "beta_observed_information",
    "beta_score_matrix",
    "check_full_rank",
    "fit_beta_regression",
    "fit_binomial_logistic",
    "fit_glmm_random_intercept",
    "fit_quasibinomial",
    "fit_weighted_linear",
    "icc_from_tau2",
    "pearson_dispersion",
    "sandwich_covariance",
    "squeeze_unit_interval",
    "standardize",
    "tau2_from_icc",
]
