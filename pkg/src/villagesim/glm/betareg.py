"""Beta regression with mean-precision parametrization.

The response y in (0, 1) follows Beta(mu * phi, (1 - mu) * phi), so that
E y = mu and Var y = mu (1 - mu) / (1 + phi). The mean uses a logit link;
the single precision phi is estimated on the log scale.
"""

from __future__ import annotations

import numpy as np
import scipy.optimize
from scipy.special import digamma, expit, gammaln, polygamma

from .frame import FitResult, ModelFrame, check_full_rank

ZETA_MIN = -20.0
ZETA_MAX = 25.0
_BOUNDARY_MARGIN = 1e-6


def _trigamma(x):
    return polygamma(1, x)


def _check_open_interval(y: np.ndarray) -> None:
    if np.any(y <= 0.0) or np.any(y >= 1.0):
        raise ValueError(
            "beta responses must lie strictly in (0, 1); apply squeeze_unit_interval first"
        )


_MU_CLIP = 1e-12


def _loglik_parts(y, ystar, x, w, beta, phi):
    """Per-observation log-likelihood, and the mean/precision score pieces."""
    eta = x @ beta
    mu = np.clip(expit(eta), _MU_CLIP, 1.0 - _MU_CLIP)
    a = mu * phi
    b = (1.0 - mu) * phi
    ll = gammaln(phi) - gammaln(a) - gammaln(b) + (a - 1.0) * np.log(y) + (b - 1.0) * np.log1p(-y)
    mustar = digamma(a) - digamma(b)
    dmu = mu * (1.0 - mu)
    score_beta = x.T @ (w * phi * (ystar - mustar) * dmu)
    score_phi = float(
        np.sum(w * (mu * (ystar - mustar) + np.log1p(-y) - digamma(b) + digamma(phi)))
    )
    return float(np.sum(w * ll)), score_beta, score_phi, mu


def beta_observed_information(frame: ModelFrame, beta: np.ndarray, phi: float) -> np.ndarray:
    """Negative Hessian of the log-likelihood over (beta, phi)."""
    x = frame.design
    y = frame.response
    w = frame.prior_weights()
    ystar = np.log(y) - np.log1p(-y)

    mu = np.clip(expit(x @ beta), _MU_CLIP, 1.0 - _MU_CLIP)
    a = mu * phi
    b = (1.0 - mu) * phi
    mustar = digamma(a) - digamma(b)
    trig_a = _trigamma(a)
    trig_b = _trigamma(b)
    dmu = mu * (1.0 - mu)
    d2mu = dmu * (1.0 - 2.0 * mu)

    # d2l/dmu2, d2l/dmu dphi, d2l/dphi2 per observation.
    g_mumu = -(phi**2) * (trig_a + trig_b)
    g_muphi = (ystar - mustar) - phi * (mu * trig_a - (1.0 - mu) * trig_b)
    g_phiphi = _trigamma(phi) - mu**2 * trig_a - (1.0 - mu) ** 2 * trig_b

    dl_dmu = phi * (ystar - mustar)
    h_bb = x.T @ (x * (w * (g_mumu * dmu**2 + dl_dmu * d2mu))[:, None])
    h_bp = x.T @ (w * g_muphi * dmu)
    h_pp = float(np.sum(w * g_phiphi))

    k = frame.n_params
    hessian = np.empty((k + 1, k + 1))
    hessian[:k, :k] = h_bb
    hessian[:k, k] = h_bp
    hessian[k, :k] = h_bp
    hessian[k, k] = h_pp
    return -hessian


def beta_score_matrix(frame: ModelFrame, beta: np.ndarray, phi: float) -> np.ndarray:
    """Per-observation score rows over (beta, phi)."""
    x = frame.design
    y = frame.response
    w = frame.prior_weights()
    ystar = np.log(y) - np.log1p(-y)
    mu = np.clip(expit(x @ beta), _MU_CLIP, 1.0 - _MU_CLIP)
    a = mu * phi
    b = (1.0 - mu) * phi
    mustar = digamma(a) - digamma(b)
    dmu = mu * (1.0 - mu)
    s_beta = x * (w * phi * (ystar - mustar) * dmu)[:, None]
    s_phi = w * (mu * (ystar - mustar) + np.log1p(-y) - digamma(b) + digamma(phi))
    return np.column_stack([s_beta, s_phi])


def _initial_values(frame: ModelFrame) -> tuple[np.ndarray, float]:
    """Method-of-moments start: linear fit on the logit scale."""
    x = frame.design
    ystar = np.log(frame.response) - np.log1p(-frame.response)
    beta, *_ = np.linalg.lstsq(x, ystar, rcond=None)
    mu = expit(x @ beta)
    dof = max(frame.n_obs - frame.n_params, 1)
    s2 = float(np.sum((ystar - x @ beta) ** 2)) / dof
    # Var(logit y) ~ 1 / ((1 + phi) mu (1 - mu)) via the delta method.
    phi = float(np.mean(1.0 / (max(s2, 1e-8) * mu * (1.0 - mu)))) - 1.0
    return beta, min(max(phi, 0.1), 1e6)


def fit_beta_regression(frame: ModelFrame) -> FitResult:
    """Maximize the beta log-likelihood by L-BFGS-B with analytic gradient.

    Returns the coefficient covariance from the inverse observed information;
    the joint (beta, phi) covariance is kept in ``diagnostics`` for robust
    variance estimation. A precision estimate pinned at the log-scale bound
    (degenerate, near-constant responses) is flagged as non-converged.
    """
    if frame.trials is not None:
        raise ValueError("beta regression takes unit-interval responses without trials")
    _check_open_interval(frame.response)
    check_full_rank(frame)

    x = frame.design
    y = frame.response
    w = frame.prior_weights()
    ystar = np.log(y) - np.log1p(-y)
    k = frame.n_params

    beta0, phi0 = _initial_values(frame)
    theta0 = np.append(beta0, np.log(phi0))

    def objective(theta):
        beta = theta[:k]
        phi = np.exp(theta[k])
        ll, s_beta, s_phi, _ = _loglik_parts(y, ystar, x, w, beta, phi)
        grad = np.append(s_beta, s_phi * phi)  # chain rule to log(phi)
        if not np.isfinite(ll) or not np.all(np.isfinite(grad)):
            return 1e30, np.zeros_like(theta)
        return -ll, -grad

    bounds = [(None, None)] * k + [(ZETA_MIN, ZETA_MAX)]
    res = scipy.optimize.minimize(
        objective,
        theta0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": 500, "ftol": 1e-14, "gtol": 1e-9},
    )

    theta = res.x.copy()
    # Newton polish pins the optimum well below the optimizer tolerance, so
    # results do not depend on the L-BFGS path (e.g. under row permutation).
    for _ in range(3):
        beta = theta[:k]
        phi = float(np.exp(theta[k]))
        if theta[k] >= ZETA_MAX - _BOUNDARY_MARGIN or theta[k] <= ZETA_MIN + _BOUNDARY_MARGIN:
            break
        ll_here, s_beta, s_phi, _ = _loglik_parts(y, ystar, x, w, beta, phi)
        grad = np.append(s_beta, s_phi * phi)
        info = beta_observed_information(frame, beta, phi)
        # chain rule to the log-precision coordinate
        info[k, :k] *= phi
        info[:k, k] *= phi
        info[k, k] = info[k, k] * phi**2 - s_phi * phi
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)) or np.max(np.abs(step)) > 0.5:
            break
        candidate = theta + step
        ll_new, *_ = _loglik_parts(y, ystar, x, w, candidate[:k], float(np.exp(candidate[k])))
        if not np.isfinite(ll_new) or ll_new < ll_here - 1e-9:
            break
        theta = candidate
        if np.max(np.abs(step)) < 1e-12:
            break

    beta = theta[:k]
    zeta = float(np.clip(theta[k], ZETA_MIN, ZETA_MAX))
    phi = float(np.exp(zeta))
    at_bound = zeta >= ZETA_MAX - _BOUNDARY_MARGIN or zeta <= ZETA_MIN + _BOUNDARY_MARGIN
    ll, s_beta, s_phi, mu = _loglik_parts(y, ystar, x, w, beta, phi)
    # Convergence means a vanishing (scaled) score at the reported optimum;
    # the optimizer's own status can read ABNORMAL when the line search
    # stalls at machine precision right next to the maximum.
    scaled_score = float(np.max(np.abs(np.append(s_beta, s_phi * phi)))) / (1.0 + abs(ll))
    converged = not at_bound and (scaled_score <= 1e-6)

    info = beta_observed_information(frame, beta, phi)
    try:
        joint_cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        joint_cov = np.linalg.pinv(info)
    joint_cov = 0.5 * (joint_cov + joint_cov.T)

    return FitResult(
        model="beta",
        coefficients=beta,
        covariance_model_based=joint_cov[:k, :k],
        linear_predictor=x @ beta,
        fitted_means=mu,
        converged=converged,
        iterations=int(res.nit),
        dispersion_or_precision=phi,
        log_likelihood=ll,
        column_names=frame.column_names,
        diagnostics={
            "joint_covariance": joint_cov,
            "precision_at_bound": at_bound,
            "optimizer_message": str(res.message),
        },
    )
