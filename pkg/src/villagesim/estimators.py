"""The four competing analyses of one simulated trial dataset.

All tests are one-sided on the lower tail: a village-level drop in the
unvaccinated rate under intervention rejects the null. Non-convergent fits
never reject; they are flagged so the harness can tally them separately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.stats

from .allocation import Allocation
from .census import Village
from .dgm import FollowUpRecord
from .errors import EstimationError
from .glm import (
    ModelFrame,
    VarianceSpec,
    fit_beta_regression,
    fit_binomial_logistic,
    fit_quasibinomial,
    fit_weighted_linear,
    sandwich_covariance,
    squeeze_unit_interval,
    standardize,
)
from .glm.frame import FitResult

# Calibrated one-sided critical value for the weighting estimator
# (nominal level 0.035), applied in all weighted analyses.
IPTW_CRITICAL_VALUE = -1.811911

EXTREME_PROPENSITY = 1e-6

OUTCOME_REGRESSORS = ("intercept", "arm", "baseline_rate", "population_std", "distance", "pop_x_dist")
PROPENSITY_REGRESSORS = ("intercept", "baseline_rate", "population_std", "distance", "pop_x_dist")


class Method(Enum):
    BETA = "beta"
    QUASIBINOMIAL = "quasibinomial"
    IPTW = "iptw"
    NAIVE = "naive"


@dataclass(frozen=True)
class AnalysisInput:
    """Village-level data for one simulated trial."""

    village_ids: tuple[str, ...]
    arm: np.ndarray
    baseline_rate: np.ndarray
    population_std: np.ndarray
    distance: np.ndarray
    y1: np.ndarray
    m1: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.village_ids)
        for name in ("arm", "baseline_rate", "population_std", "distance", "y1", "m1"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} must have one entry per village")
        if not (self.arm == 0).any() or not (self.arm == 1).any():
            raise ValueError("both arms must be present")
        if np.any(self.y1 < 0) or np.any(self.y1 > self.m1):
            raise ValueError("follow-up counts must lie in [0, m1]")

    @property
    def proportions(self) -> np.ndarray:
        return self.y1 / self.m1

    def outcome_design(self) -> np.ndarray:
        return np.column_stack(
            [
                np.ones(len(self.village_ids)),
                self.arm,
                self.baseline_rate,
                self.population_std,
                self.distance,
                self.population_std * self.distance,
            ]
        )

    def propensity_design(self) -> np.ndarray:
        return np.column_stack(
            [
                np.ones(len(self.village_ids)),
                self.baseline_rate,
                self.population_std,
                self.distance,
                self.population_std * self.distance,
            ]
        )


@dataclass(frozen=True)
class TestResult:
    method: Method
    estimate: float
    se: float
    statistic: float
    p_one_sided: float
    rejected: bool
    critical_value: float
    diagnostics: dict


@dataclass(frozen=True)
class WeightVector:
    weights: np.ndarray
    propensity_fit: FitResult
    extreme: bool


def build_analysis_input(
    allocation: Allocation, census: list[Village], records: list[FollowUpRecord]
) -> AnalysisInput:
    """Assemble the per-village analysis table for one replicate.

    Population is standardized within the analyzed sample; the baseline
    rate enters as the raw per-village ratio.
    """
    index = {v.id: v for v in census}
    villages = [index[r.village_id] for r in records]
    population = np.array([float(v.population) for v in villages])
    return AnalysisInput(
        village_ids=tuple(r.village_id for r in records),
        arm=np.array([r.arm for r in records]),
        baseline_rate=np.array([v.baseline_rate for v in villages]),
        population_std=standardize(population),
        distance=np.array([v.distance_km for v in villages]),
        y1=np.array([r.y1 for r in records]),
        m1=np.array([r.m1 for r in records]),
    )


def _no_rejection(method: Method, critical_value: float, reason: str) -> TestResult:
    return TestResult(
        method=method,
        estimate=math.nan,
        se=math.nan,
        statistic=math.nan,
        p_one_sided=1.0,
        rejected=False,
        critical_value=critical_value,
        diagnostics={"converged": False, "failure": reason},
    )


def _wald_result(
    method: Method,
    estimate: float,
    se: float,
    critical_value: float,
    diagnostics: dict,
) -> TestResult:
    statistic = estimate / se
    return TestResult(
        method=method,
        estimate=estimate,
        se=se,
        statistic=statistic,
        p_one_sided=float(scipy.stats.norm.cdf(statistic)),
        rejected=bool(statistic < critical_value),
        critical_value=critical_value,
        diagnostics=diagnostics,
    )


def analyze_beta(input: AnalysisInput, alpha: float = 0.05) -> TestResult:
    """Beta regression of squeezed follow-up proportions, robust Wald test.

    The standard error comes from the sandwich clustered by village; with
    one row per village that is the HC0 estimator over village rows.
    """
    critical_value = float(scipy.stats.norm.ppf(alpha))
    props = squeeze_unit_interval(input.proportions, len(input.village_ids))
    frame = ModelFrame(
        response=props, design=input.outcome_design(), column_names=OUTCOME_REGRESSORS
    )
    try:
        fit = fit_beta_regression(frame)
    except EstimationError as exc:
        return _no_rejection(Method.BETA, critical_value, str(exc))
    if not fit.converged:
        return _no_rejection(Method.BETA, critical_value, "beta fit did not converge")
    robust = sandwich_covariance(fit, frame, VarianceSpec.hc0())
    se = float(np.sqrt(robust[1, 1]))
    return _wald_result(
        Method.BETA,
        float(fit.coefficients[1]),
        se,
        critical_value,
        {"converged": True, "precision": fit.dispersion_or_precision},
    )


def analyze_quasibinomial(input: AnalysisInput, alpha: float = 0.05) -> TestResult:
    """Quasi-binomial regression of follow-up counts, model-based Wald test."""
    critical_value = float(scipy.stats.norm.ppf(alpha))
    frame = ModelFrame(
        response=input.y1,
        trials=input.m1,
        design=input.outcome_design(),
        column_names=OUTCOME_REGRESSORS,
    )
    try:
        fit = fit_quasibinomial(frame)
    except EstimationError as exc:
        return _no_rejection(Method.QUASIBINOMIAL, critical_value, str(exc))
    if not fit.converged:
        return _no_rejection(Method.QUASIBINOMIAL, critical_value, "IRLS did not converge")
    se = float(np.sqrt(fit.covariance_model_based[1, 1]))
    return _wald_result(
        Method.QUASIBINOMIAL,
        float(fit.coefficients[1]),
        se,
        critical_value,
        {"converged": True, "dispersion": fit.dispersion_or_precision},
    )


def estimate_weights(input: AnalysisInput) -> WeightVector:
    """Inverse-propensity weights from the village-level treatment model.

    Raises EstimationError when the propensity fit separates; extreme
    estimated propensities are flagged, not rejected.
    """
    frame = ModelFrame(
        response=input.arm.astype(float),
        trials=np.ones(len(input.village_ids)),
        design=input.propensity_design(),
        column_names=PROPENSITY_REGRESSORS,
    )
    fit = fit_binomial_logistic(frame)
    if not fit.converged:
        raise EstimationError("propensity model did not converge (separation)")
    e = fit.fitted_means
    weights = np.where(input.arm == 1, 1.0 / e, 1.0 / (1.0 - e))
    extreme = bool(np.any(e < EXTREME_PROPENSITY) or np.any(e > 1.0 - EXTREME_PROPENSITY))
    return WeightVector(weights=weights, propensity_fit=fit, extreme=extreme)


def analyze_iptw(
    input: AnalysisInput, variance: VarianceSpec | None = None
) -> TestResult:
    """Weighted difference in mean village proportions with robust SE.

    The estimate is the normalized (Hajek) weighted contrast, obtained as
    the arm coefficient of the weighted linear regression of proportions on
    arm; the variance treats the weights as known (HC3 by default).
    """
    variance = variance or VarianceSpec.hc3()
    try:
        wv = estimate_weights(input)
    except EstimationError as exc:
        return _no_rejection(Method.IPTW, IPTW_CRITICAL_VALUE, str(exc))
    frame = ModelFrame(
        response=input.proportions,
        design=np.column_stack([np.ones(len(input.village_ids)), input.arm]),
        weights=wv.weights,
        column_names=("intercept", "arm"),
    )
    fit = fit_weighted_linear(frame)
    try:
        robust = sandwich_covariance(fit, frame, variance)
    except EstimationError as exc:
        return _no_rejection(Method.IPTW, IPTW_CRITICAL_VALUE, str(exc))
    se = float(np.sqrt(robust[1, 1]))
    result = _wald_result(
        Method.IPTW,
        float(fit.coefficients[1]),
        se,
        IPTW_CRITICAL_VALUE,
        {
            "converged": True,
            "weight_min": float(wv.weights.min()),
            "weight_max": float(wv.weights.max()),
            "extreme_propensity": wv.extreme,
        },
    )
    return result


def analyze_naive(
    input: AnalysisInput, alpha: float = 0.05, form: str = "count_pooled"
) -> TestResult:
    """Unadjusted Wald test of the arm contrast.

    ``count_pooled`` (default) fits an intercept-plus-arm quasi-binomial
    model to the raw counts, pooling children across villages;
    ``village_mean`` runs the two-sample Wald test on per-village
    proportions with unpooled variances. The estimate is a log-odds ratio
    for the pooled form and a rate difference for the village-mean form.
    """
    critical_value = float(scipy.stats.norm.ppf(alpha))
    if (input.arm == 1).sum() < 2 or (input.arm == 0).sum() < 2:
        raise ValueError("the naive test needs at least two villages per arm")

    if form == "count_pooled":
        frame = ModelFrame(
            response=input.y1,
            trials=input.m1,
            design=np.column_stack([np.ones(len(input.village_ids)), input.arm]),
            column_names=("intercept", "arm"),
        )
        try:
            fit = fit_quasibinomial(frame)
        except EstimationError as exc:
            return _no_rejection(Method.NAIVE, critical_value, str(exc))
        if not fit.converged:
            return _no_rejection(Method.NAIVE, critical_value, "IRLS did not converge")
        se = float(np.sqrt(fit.covariance_model_based[1, 1]))
        return _wald_result(
            Method.NAIVE,
            float(fit.coefficients[1]),
            se,
            critical_value,
            {"converged": True, "form": form, "dispersion": fit.dispersion_or_precision},
        )

    if form != "village_mean":
        raise ValueError(f"unknown naive test form '{form}'")
    props = input.proportions
    p1 = props[input.arm == 1]
    p0 = props[input.arm == 0]
    estimate = float(p1.mean() - p0.mean())
    se = float(np.sqrt(p1.var(ddof=1) / p1.size + p0.var(ddof=1) / p0.size))
    if se == 0.0:
        statistic = 0.0 if estimate == 0.0 else math.copysign(math.inf, estimate)
    else:
        statistic = estimate / se
    return TestResult(
        method=Method.NAIVE,
        estimate=estimate,
        se=se,
        statistic=statistic,
        p_one_sided=float(scipy.stats.norm.cdf(statistic)),
        rejected=bool(statistic < critical_value),
        critical_value=critical_value,
        diagnostics={"converged": True, "form": form},
    )


def or_from_rates(pi1: float, pi0: float) -> float:
    """Odds ratio pi1 (1 - pi0) / (pi0 (1 - pi1)) for interior rates."""
    if not 0.0 < pi1 < 1.0 or not 0.0 < pi0 < 1.0:
        raise ValueError("rates must lie strictly inside (0, 1)")
    return (pi1 * (1.0 - pi0)) / (pi0 * (1.0 - pi1))


ANALYZERS = {
    Method.BETA: analyze_beta,
    Method.QUASIBINOMIAL: analyze_quasibinomial,
    Method.IPTW: lambda input, alpha=0.05: analyze_iptw(input),
    Method.NAIVE: analyze_naive,
}
