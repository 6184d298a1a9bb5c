"""Small exact transforms used throughout the fitting code."""

from __future__ import annotations

import math

import numpy as np

LOGISTIC_RESIDUAL_VARIANCE = math.pi**2 / 3.0


def standardize(values) -> np.ndarray:
    """Center and scale to sample mean 0, sample SD 1 (ddof=1).

    Raises ValueError on a constant vector (zero SD).
    """
    x = np.asarray(values, dtype=float)
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    if sd <= 0.0:
        raise ValueError("cannot standardize a vector with zero standard deviation")
    return (x - float(np.mean(x))) / sd


def squeeze_unit_interval(y, n: int) -> np.ndarray:
    """Shrink [0, 1] proportions strictly inside (0, 1).

    Applies ``y' = (y * (n - 1) + 0.5) / n`` with ``n`` the number of
    observations, so boundary values 0 and 1 map to 0.5/n and 1 - 0.5/n.
    """
    if n <= 0:
        raise ValueError("n must be a positive integer")
    y = np.asarray(y, dtype=float)
    if np.any(y < 0.0) or np.any(y > 1.0):
        raise ValueError("responses must lie in [0, 1] before squeezing")
    return (y * (n - 1) + 0.5) / n


def icc_from_tau2(tau2: float) -> float:
    """Intraclass correlation implied by a random-intercept variance.

    Uses the latent-logistic residual variance pi^2/3, so the result lies in
    [0, 1) and increases strictly with ``tau2``.
    """
    if tau2 < 0.0:
        raise ValueError("tau2 must be nonnegative")
    return tau2 / (LOGISTIC_RESIDUAL_VARIANCE + tau2)


def tau2_from_icc(icc: float) -> float:
    """Random-intercept variance achieving a target intraclass correlation."""
    if not 0.0 <= icc < 1.0:
        raise ValueError("icc must lie in [0, 1)")
    return icc * LOGISTIC_RESIDUAL_VARIANCE / (1.0 - icc)
