"""Robust (sandwich) covariance estimators on top of fitted models."""

from __future__ import annotations

import numpy as np

from ..errors import EstimationError
from .betareg import beta_score_matrix
from .frame import FitResult, ModelFrame, VarianceKind, VarianceSpec

_LEVERAGE_LIMIT = 1.0 - 1e-12


def _glm_components(fit: FitResult, frame: ModelFrame):
    """Scores, bread, and leverage for the supported model families."""
    x = frame.design
    w = frame.prior_weights()

    if fit.model in ("binomial", "quasibinomial"):
        mu = fit.fitted_means
        n = frame.trials
        scores = x * (w * (frame.response - n * mu))[:, None]
        irls_w = w * n * mu * (1.0 - mu)
        bread = np.linalg.inv(x.T @ (x * irls_w[:, None]))
        leverage = np.einsum("ij,jk,ik->i", x, bread, x) * irls_w
        return scores, bread, leverage

    if fit.model == "wls":
        resid = frame.response - fit.linear_predictor
        scores = x * (w * resid)[:, None]
        bread = np.linalg.inv(x.T @ (x * w[:, None]))
        leverage = np.einsum("ij,jk,ik->i", x, bread, x) * w
        return scores, bread, leverage

    if fit.model == "beta":
        phi = fit.dispersion_or_precision
        scores = beta_score_matrix(frame, fit.coefficients, phi)
        bread = fit.diagnostics["joint_covariance"]
        return scores, bread, None

    raise EstimationError(f"sandwich covariance not defined for model '{fit.model}'")


def sandwich_covariance(fit: FitResult, frame: ModelFrame, spec: VarianceSpec) -> np.ndarray:
    """Bread x meat x bread covariance for a converged fit.

    The meat follows the requested flavor: raw score outer products (HC0),
    the N/(N-k) small-sample rescaling (HC1), leverage-adjusted scores
    (HC3), or within-cluster score sums (cluster robust). For beta fits the
    matrix covers the joint (coefficients, precision) vector.
    """
    scores, bread, leverage = _glm_components(fit, frame)
    n_obs = frame.n_obs
    k = frame.n_params

    kind = spec.kind
    if kind is VarianceKind.MODEL_BASED:
        return fit.covariance_model_based

    if kind is VarianceKind.CLUSTER_ROBUST:
        ids = spec.cluster_ids if spec.cluster_ids is not None else frame.cluster_ids
        if ids is None:
            raise ValueError("cluster-robust variance needs cluster identifiers")
        if len(ids) != n_obs:
            raise ValueError("cluster identifiers must match the number of rows")
        labels = {c: i for i, c in enumerate(dict.fromkeys(ids))}
        grouped = np.zeros((len(labels), scores.shape[1]))
        for row, cid in enumerate(ids):
            grouped[labels[cid]] += scores[row]
        meat = grouped.T @ grouped
    elif kind is VarianceKind.HC3:
        if leverage is None:
            raise EstimationError(f"HC3 leverage is not defined for model '{fit.model}'")
        if np.any(leverage >= _LEVERAGE_LIMIT):
            row = int(np.argmax(leverage))
            raise EstimationError(f"HC3 undefined: row {row} has leverage 1")
        adjusted = scores / (1.0 - leverage)[:, None]
        meat = adjusted.T @ adjusted
    else:
        meat = scores.T @ scores
        if kind is VarianceKind.HC1:
            meat = meat * (n_obs / (n_obs - k))

    cov = bread @ meat @ bread
    return 0.5 * (cov + cov.T)
