"""Calibration and execution of the follow-up outcome generator.

Follow-up unvaccinated counts are binomial with a village-level logit that
combines a calibrated intercept, a normal random intercept, the village's
baseline log-odds as an offset, a treatment shift derived from the target
relative reduction, and population/distance effects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit, logit

from .allocation import Allocation, AllocationPool
from .census import Village
from .errors import CalibrationError, ConfigurationError
from .glm.transforms import icc_from_tau2, tau2_from_icc
from .rng import substream

__all__ = [
    "COEFFICIENT_SETS",
    "CalibratedDGM",
    "CoefficientSet",
    "FollowUpRecord",
    "ScenarioSpec",
    "baseline_log_odds",
    "calibrate_intercept",
    "generate_outcomes",
    "icc_from_tau2",
    "simulate_marginal_control_rate",
    "tau2_from_icc",
    "treatment_logit_shift",
    "with_effect",
]

CALIBRATION_TOLERANCE = 0.002
CALIBRATION_BRACKET = (-10.0, 10.0)
MIN_CALIBRATION_DRAWS = 100_000


@dataclass(frozen=True)
class CoefficientSet:
    """Population and distance effects used by the outcome generator."""

    label: str
    beta1_pop: float
    beta2_dist: float


COEFFICIENT_SETS: dict[int, CoefficientSet] = {
    1: CoefficientSet("1", -0.00010860, 0.074920),
    2: CoefficientSet("2", -0.00015608, 0.061783),
    3: CoefficientSet("3", -0.00006112, 0.088057),
}


@dataclass(frozen=True)
class ScenarioSpec:
    """One cell of the simulation grid."""

    delta_r: float
    pi0: float
    n_per_arm: int
    coef: CoefficientSet
    icc: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.delta_r < 1.0:
            raise ValueError("delta_r must lie in [0, 1)")
        if not 0.0 < self.pi0 < 1.0:
            raise ValueError("pi0 must lie in (0, 1)")
        if not 0.0 <= self.icc < 1.0:
            raise ValueError("icc must lie in [0, 1)")
        if self.n_per_arm <= 0:
            raise ValueError("n_per_arm must be positive")

    @property
    def tau2(self) -> float:
        return tau2_from_icc(self.icc)

    @property
    def scenario_id(self) -> str:
        return (
            f"d{self.delta_r:g}_p{self.pi0:g}_n{self.n_per_arm}"
            f"_c{self.coef.label}_i{self.icc:.6g}"
        )

    @property
    def calibration_key(self) -> str:
        """Scenarios sharing this key share a calibrated intercept."""
        return f"p{self.pi0:g}_c{self.coef.label}_i{self.icc:.6g}"


@dataclass(frozen=True)
class CalibratedDGM:
    beta0: float
    theta: float
    beta1_pop: float
    beta2_dist: float
    tau2: float
    calibration_error: float
    follow_up_children: str = "fixed"  # or "poisson"


@dataclass(frozen=True)
class FollowUpRecord:
    village_id: str
    m1: int
    y1: int
    arm: int

    def __post_init__(self) -> None:
        if not 0 <= self.y1 <= self.m1:
            raise ValueError("y1 must lie in [0, m1]")


def treatment_logit_shift(delta_r: float, pi0: float) -> float:
    """Log-odds shift achieving a conditional relative reduction.

    ``theta = logit(pi0 * (1 - delta_r)) - logit(pi0)``; zero when the
    reduction is zero and strictly decreasing in ``delta_r``.
    """
    if not 0.0 <= delta_r < 1.0:
        raise ValueError("delta_r must lie in [0, 1)")
    if not 0.0 < pi0 < 1.0:
        raise ValueError("pi0 must lie in (0, 1)")
    target = pi0 * (1.0 - delta_r)
    if target <= 0.0:
        raise ValueError("reduced rate must stay positive")
    return float(logit(target) - logit(pi0))


def baseline_log_odds(village: Village) -> float:
    """Baseline log-odds offset, with boundary counts squeezed by half.

    Villages with 0 or all children unvaccinated get counts pulled in by
    0.5 so the offset stays finite.
    """
    y0 = float(village.penta0_count)
    m0 = float(village.children_12_24)
    if y0 <= 0.0:
        y0 = 0.5
    elif y0 >= m0:
        y0 = m0 - 0.5
    return math.log(y0 / (m0 - y0))


def _village_index(census: list[Village]) -> dict[str, Village]:
    return {v.id: v for v in census}


def _stratified_normal(rng: np.random.Generator, size: int, sd: float) -> np.ndarray:
    """Shuffled quantile-midpoint normal draws.

    Used only for the calibration panel, where the random intercept enters
    an expectation; stratification removes most of its Monte Carlo noise
    without biasing the mean.
    """
    from scipy.stats import norm

    if sd == 0.0:
        return np.zeros(size)
    return sd * norm.ppf((rng.permutation(size) + 0.5) / size)


def _control_panel(
    census: list[Village],
    pool: AllocationPool,
    rng: np.random.Generator,
    min_draws: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Offsets, populations, and distances of pool-drawn control villages."""
    index = _village_index(census)
    n = pool.spec.villages_per_arm
    n_alloc = max(1, math.ceil(min_draws / n))
    picks = rng.integers(0, len(pool.accepted), size=n_alloc)
    offsets, pops, dists = [], [], []
    cache: dict[str, tuple[float, float, float]] = {}
    for k in picks:
        for vid in pool.accepted[int(k)].control_ids:
            if vid not in cache:
                v = index[vid]
                cache[vid] = (baseline_log_odds(v), float(v.population), v.distance_km)
            o, p, d = cache[vid]
            offsets.append(o)
            pops.append(p)
            dists.append(d)
    return np.array(offsets), np.array(pops), np.array(dists)


def calibrate_intercept(
    census: list[Village],
    pool: AllocationPool,
    scenario: ScenarioSpec,
    seed: int,
    min_draws: int = MIN_CALIBRATION_DRAWS,
    tolerance: float = CALIBRATION_TOLERANCE,
) -> CalibratedDGM:
    """Bisect the intercept so the marginal control-arm rate equals pi0.

    The Monte Carlo panel (pool draws, random intercepts, offsets) is fixed
    while bisecting, making the rate a smooth monotone function of the
    intercept; the residual |rate - pi0| on the panel is recorded as the
    calibration error.
    """
    if not pool.accepted:
        raise CalibrationError("cannot calibrate against an empty allocation pool")
    rng = substream(seed, "calibrate", scenario.calibration_key)
    offsets, pops, dists = _control_panel(census, pool, rng, min_draws)
    alpha = _stratified_normal(rng, offsets.size, math.sqrt(scenario.tau2))
    fixed = alpha + offsets + scenario.coef.beta1_pop * pops + scenario.coef.beta2_dist * dists

    def rate_minus_target(beta0: float) -> float:
        return float(np.mean(expit(beta0 + fixed))) - scenario.pi0

    lo, hi = CALIBRATION_BRACKET
    f_lo = rate_minus_target(lo)
    f_hi = rate_minus_target(hi)
    if f_lo > 0.0 or f_hi < 0.0:
        raise CalibrationError(
            f"no intercept in [{lo}, {hi}] reaches control rate {scenario.pi0}"
        )
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        f_mid = rate_minus_target(mid)
        if f_mid < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    beta0 = 0.5 * (lo + hi)
    error = abs(rate_minus_target(beta0))
    if error > tolerance:
        raise CalibrationError(f"calibration error {error:.4g} exceeds tolerance {tolerance}")

    return CalibratedDGM(
        beta0=beta0,
        theta=treatment_logit_shift(scenario.delta_r, scenario.pi0),
        beta1_pop=scenario.coef.beta1_pop,
        beta2_dist=scenario.coef.beta2_dist,
        tau2=scenario.tau2,
        calibration_error=error,
    )


def with_effect(dgm: CalibratedDGM, delta_r: float, pi0: float) -> CalibratedDGM:
    """Same calibrated intercept, different treatment shift."""
    return replace(dgm, theta=treatment_logit_shift(delta_r, pi0))


def simulate_marginal_control_rate(
    census: list[Village],
    pool: AllocationPool,
    dgm: CalibratedDGM,
    seed: int,
    min_draws: int = MIN_CALIBRATION_DRAWS,
) -> float:
    """Fresh-seed Monte Carlo estimate of the control-arm marginal rate."""
    rng = substream(seed, "marginal-check")
    offsets, pops, dists = _control_panel(census, pool, rng, min_draws)
    alpha = _stratified_normal(rng, offsets.size, math.sqrt(dgm.tau2))
    lin = dgm.beta0 + alpha + offsets + dgm.beta1_pop * pops + dgm.beta2_dist * dists
    return float(np.mean(expit(lin)))


def generate_outcomes(
    allocation: Allocation,
    census: list[Village],
    dgm: CalibratedDGM,
    rng: np.random.Generator,
) -> list[FollowUpRecord]:
    """Simulate follow-up counts for every allocated village.

    Control villages come first, each arm in its stored id order; the
    generator consumes the stream in a fixed order so results are
    bit-identical for a given substream.
    """
    index = _village_index(census)
    ids = list(allocation.control_ids) + list(allocation.intervention_ids)
    arms = np.array([0] * len(allocation.control_ids) + [1] * len(allocation.intervention_ids))
    try:
        villages = [index[vid] for vid in ids]
    except KeyError as exc:
        raise ConfigurationError(f"allocated village {exc} is not in the census") from exc

    offsets = np.array([baseline_log_odds(v) for v in villages])
    pops = np.array([float(v.population) for v in villages])
    dists = np.array([v.distance_km for v in villages])
    m0 = np.array([v.children_12_24 for v in villages])

    alpha = rng.normal(0.0, math.sqrt(dgm.tau2), size=len(villages))
    lin = (
        dgm.beta0
        + alpha
        + offsets
        + dgm.theta * arms
        + dgm.beta1_pop * pops
        + dgm.beta2_dist * dists
    )
    pi1 = expit(lin)
    if dgm.follow_up_children == "poisson":
        m1 = np.maximum(rng.poisson(m0), 1)
    else:
        m1 = m0
    y1 = rng.binomial(m1, pi1)

    return [
        FollowUpRecord(village_id=vid, m1=int(m1[i]), y1=int(y1[i]), arm=int(arms[i]))
        for i, vid in enumerate(ids)
    ]
