"""Binomial logistic regression by Fisher scoring, plus its quasi variant."""

from __future__ import annotations

import numpy as np
from scipy.special import expit, gammaln

from ..errors import EstimationError
from .frame import FitResult, ModelFrame, check_full_rank

MAX_ITERATIONS = 100
COEF_TOLERANCE = 1e-8
MU_FLOOR = 1e-12


def _binomial_loglik(y, n, mu, w) -> float:
    mu = np.clip(mu, MU_FLOOR, 1.0 - MU_FLOOR)
    const = gammaln(n + 1.0) - gammaln(y + 1.0) - gammaln(n - y + 1.0)
    return float(np.sum(w * (const + y * np.log(mu) + (n - y) * np.log1p(-mu))))


def fit_binomial_logistic(frame: ModelFrame) -> FitResult:
    """Maximum-likelihood logistic regression for success counts.

    Iteratively reweighted least squares with step-halving when a full
    Newton step would decrease the log-likelihood. Convergence is declared
    when the largest relative coefficient change drops below 1e-8; after 100
    iterations the result is returned with ``converged=False`` (separation
    and other divergent cases are flagged, never raised).
    """
    if frame.trials is None:
        raise ValueError("binomial fits need success counts with trials")
    check_full_rank(frame)
    x = frame.design
    y = frame.response
    n = frame.trials
    w = frame.prior_weights()

    beta = np.zeros(frame.n_params)
    # Start the intercept-like direction at the pooled empirical log-odds.
    pooled = (float(np.sum(w * y)) + 0.5) / (float(np.sum(w * n)) + 1.0)
    eta0 = np.log(pooled / (1.0 - pooled))
    col_const = np.all(x == x[0, :], axis=0) & (x[0, :] != 0.0)
    if col_const.any():
        j = int(np.argmax(col_const))
        beta[j] = eta0 / x[0, j]

    eta = x @ beta
    mu = expit(eta)
    loglik = _binomial_loglik(y, n, mu, w)
    converged = False
    iterations = 0
    singular = False

    for iterations in range(1, MAX_ITERATIONS + 1):
        irls_w = np.maximum(w * n * mu * (1.0 - mu), MU_FLOOR)
        score = x.T @ (w * (y - n * mu))
        info = x.T @ (x * irls_w[:, None])
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            singular = True
            break

        # Step-halving keeps the likelihood monotone.
        scale = 1.0
        for _ in range(30):
            candidate = beta + scale * step
            cand_loglik = _binomial_loglik(y, n, expit(x @ candidate), w)
            if cand_loglik >= loglik - 1e-12:
                break
            scale *= 0.5
        change = np.max(np.abs(scale * step) / (1.0 + np.abs(beta)))
        beta = beta + scale * step
        eta = x @ beta
        mu = expit(eta)
        loglik = _binomial_loglik(y, n, mu, w)
        if change < COEF_TOLERANCE:
            converged = True
            break

    irls_w = np.maximum(w * n * mu * (1.0 - mu), MU_FLOOR)
    info = x.T @ (x * irls_w[:, None])
    try:
        covariance = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        covariance = np.linalg.pinv(info)
        singular = True

    return FitResult(
        model="binomial",
        coefficients=beta,
        covariance_model_based=covariance,
        linear_predictor=eta,
        fitted_means=np.clip(mu, MU_FLOOR, 1.0 - MU_FLOOR),
        converged=converged and not singular,
        iterations=iterations,
        log_likelihood=loglik,
        column_names=frame.column_names,
        diagnostics={"singular_information": singular},
    )


def pearson_dispersion(frame: ModelFrame, fit: FitResult) -> float:
    """Pearson chi-square dispersion, chi2 / (N - k)."""
    dof = frame.n_obs - frame.n_params
    if dof <= 0:
        raise EstimationError(
            f"dispersion undefined: {frame.n_obs} observations for {frame.n_params} parameters"
        )
    mu = fit.fitted_means
    n = frame.trials
    w = frame.prior_weights()
    chi2 = float(np.sum(w * (frame.response - n * mu) ** 2 / (n * mu * (1.0 - mu))))
    return chi2 / dof


def fit_quasibinomial(frame: ModelFrame) -> FitResult:
    """Quasi-binomial regression: binomial score equations, free dispersion.

    Coefficients equal the binomial MLE; the covariance is the binomial
    model-based covariance scaled by the Pearson dispersion, and no
    log-likelihood is reported.
    """
    fit = fit_binomial_logistic(frame)
    phi = pearson_dispersion(frame, fit)
    return FitResult(
        model="quasibinomial",
        coefficients=fit.coefficients,
        covariance_model_based=phi * fit.covariance_model_based,
        linear_predictor=fit.linear_predictor,
        fitted_means=fit.fitted_means,
        converged=fit.converged,
        iterations=fit.iterations,
        dispersion_or_precision=phi,
        log_likelihood=None,
        column_names=frame.column_names,
        diagnostics=dict(fit.diagnostics),
    )
