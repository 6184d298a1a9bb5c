"""Random-intercept binomial GLMM fit by adaptive Gauss-Hermite quadrature.

Each row of the frame is one cluster (one village) with its own random
intercept; the marginal likelihood integrates the intercept out with an
adaptive rule centered at the per-cluster posterior mode.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import expit, gammaln, logsumexp

from .frame import FitResult, ModelFrame, check_full_rank
from .logistic import fit_binomial_logistic

TAU_MAX = 10.0
TAU_BOUNDARY = 1e-4
_MODE_ITERATIONS = 50
_MODE_TOL = 1e-11
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _cluster_modes(eta, tau, y, n):
    """Newton search for the mode of log f(y | u) - u^2/2, vectorized over clusters."""
    u = np.zeros_like(eta)
    for _ in range(_MODE_ITERATIONS):
        mu = expit(eta + tau * u)
        grad = tau * (y - n * mu) - u
        hess = -(tau**2) * n * mu * (1.0 - mu) - 1.0
        step = np.clip(-grad / hess, -10.0, 10.0)
        u = u + step
        if np.max(np.abs(step)) < _MODE_TOL:
            break
    mu = expit(eta + tau * u)
    curvature = (tau**2) * n * mu * (1.0 - mu) + 1.0
    return u, curvature


def _marginal_loglik(beta, tau, frame: ModelFrame, nodes, log_weights) -> float:
    x = frame.design
    y = frame.response
    n = frame.trials
    eta = x @ beta
    const = gammaln(n + 1.0) - gammaln(y + 1.0) - gammaln(n - y + 1.0)

    u_hat, curvature = _cluster_modes(eta, tau, y, n)
    sigma = 1.0 / np.sqrt(curvature)

    # u_jk = mode_j + sqrt(2) sigma_j t_k, one row per cluster.
    u = u_hat[:, None] + math.sqrt(2.0) * sigma[:, None] * nodes[None, :]
    lin = eta[:, None] + tau * u
    loglik_given_u = y[:, None] * lin - n[:, None] * np.logaddexp(0.0, lin)
    h = loglik_given_u - 0.5 * u**2
    inner = logsumexp(h + log_weights[None, :] + nodes[None, :] ** 2, axis=1)
    per_cluster = const + inner + 0.5 * math.log(2.0) + np.log(sigma) - _LOG_SQRT_2PI
    return float(np.sum(per_cluster))


def _numeric_hessian(fun, theta, step=1e-4):
    p = theta.size
    hess = np.empty((p, p))
    for i in range(p):
        for j in range(i, p):
            ei = np.zeros(p)
            ej = np.zeros(p)
            ei[i] = step
            ej[j] = step
            fpp = fun(theta + ei + ej)
            fpm = fun(theta + ei - ej)
            fmp = fun(theta - ei + ej)
            fmm = fun(theta - ei - ej)
            hess[i, j] = hess[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * step**2)
    return hess


def fit_glmm_random_intercept(frame: ModelFrame, quadrature_nodes: int = 15) -> FitResult:
    """Fit a binomial GLMM with one random intercept per row.

    Parameters
    ----------
    frame : ModelFrame
        Success counts with trials; each row is its own cluster.
    quadrature_nodes : int
        Number of Gauss-Hermite nodes (at least 5; default 15).

    Returns
    -------
    FitResult
        Fixed effects with ``tau2`` set; a variance estimate at the zero
        boundary is reported with ``tau2_boundary=True``, not as an error.
    """
    import scipy.optimize

    if frame.trials is None:
        raise ValueError("the mixed model needs success counts with trials")
    if quadrature_nodes < 5:
        raise ValueError("quadrature_nodes must be at least 5")
    check_full_rank(frame)

    nodes, weights = hermgauss(quadrature_nodes)
    log_weights = np.log(weights)
    k = frame.n_params

    start_fit = fit_binomial_logistic(frame)
    theta0 = np.append(start_fit.coefficients, 0.5)

    def negloglik(theta):
        return -_marginal_loglik(theta[:k], theta[k], frame, nodes, log_weights)

    bounds = [(None, None)] * k + [(0.0, TAU_MAX)]
    res = scipy.optimize.minimize(
        negloglik,
        theta0,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": 300, "ftol": 1e-12},
    )

    beta = res.x[:k]
    tau = float(res.x[k])
    boundary = tau < TAU_BOUNDARY
    loglik = -float(res.fun)

    if boundary:
        hess = _numeric_hessian(lambda b: -_marginal_loglik(b, tau, frame, nodes, log_weights), beta)
        try:
            covariance = np.linalg.inv(hess)
        except np.linalg.LinAlgError:
            covariance = np.linalg.pinv(hess)
    else:
        hess = _numeric_hessian(negloglik, res.x)
        try:
            joint = np.linalg.inv(hess)
        except np.linalg.LinAlgError:
            joint = np.linalg.pinv(hess)
        covariance = joint[:k, :k]
    covariance = 0.5 * (covariance + covariance.T)

    eta = frame.design @ beta
    return FitResult(
        model="glmm",
        coefficients=beta,
        covariance_model_based=covariance,
        linear_predictor=eta,
        fitted_means=expit(eta),
        converged=bool(res.success),
        iterations=int(res.nit),
        log_likelihood=loglik,
        tau2=tau**2,
        tau2_boundary=boundary,
        column_names=frame.column_names,
        diagnostics={"tau": tau, "quadrature_nodes": quadrature_nodes},
    )
