"""Weighted least squares with known weights (used by the IPTW estimator)."""

from __future__ import annotations

import numpy as np

from .frame import FitResult, ModelFrame, check_full_rank


def fit_weighted_linear(frame: ModelFrame) -> FitResult:
    """Solve the weighted normal equations for a continuous response.

    Weights are treated as fixed and known; the model-based covariance uses
    the weighted residual variance with N - k degrees of freedom.
    """
    check_full_rank(frame)
    x = frame.design
    y = frame.response
    w = frame.prior_weights()

    xtwx = x.T @ (x * w[:, None])
    beta = np.linalg.solve(xtwx, x.T @ (w * y))
    fitted = x @ beta
    resid = y - fitted
    dof = max(frame.n_obs - frame.n_params, 1)
    sigma2 = float(np.sum(w * resid**2)) / dof
    covariance = sigma2 * np.linalg.inv(xtwx)

    return FitResult(
        model="wls",
        coefficients=beta,
        covariance_model_based=covariance,
        linear_predictor=fitted,
        fitted_means=fitted,
        converged=True,
        iterations=1,
        dispersion_or_precision=sigma2,
        column_names=frame.column_names,
        diagnostics={"residuals": resid},
    )
