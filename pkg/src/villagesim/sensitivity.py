"""Unmeasured-confounding sensitivity: E-values and bias-adjusted estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class EValueReport:
    input_or: float
    b: float
    evalue: float


@dataclass(frozen=True)
class BiasAdjustment:
    r_ct: float
    r_co: float
    adjusted: float
    squared: bool


def evalue_from_or(or_hat: float) -> EValueReport:
    """Approximate E-value for an odds ratio.

    Uses b = max(OR, 1/OR) and E = sqrt(b) + sqrt(sqrt(b) (sqrt(b) - 1)),
    so the result is symmetric under OR <-> 1/OR and equals 1 only at the
    null.
    """
    if or_hat <= 0.0:
        raise ValueError("odds ratio must be positive")
    b = max(or_hat, 1.0 / or_hat)
    root = math.sqrt(b)
    return EValueReport(input_or=or_hat, b=b, evalue=root + math.sqrt(root * (root - 1.0)))


def bias_adjusted_estimate(
    beta_hat: float, r_ct: float, r_co: float, squared: bool = True
) -> BiasAdjustment:
    """Shrink an effect estimate by the confounding bound.

    The default applies the squared factor
    ``((r_ct + r_co - 1) / (r_ct r_co))**2``; the conventional unsquared
    bound is available with ``squared=False``. Reports always carry which
    variant was used.
    """
    if beta_hat <= 0.0:
        raise ValueError("the effect estimate must be positive (a ratio measure)")
    if r_ct < 1.0 or r_co < 1.0:
        raise ValueError("confounder risk ratios must be at least 1")
    factor = (r_ct + r_co - 1.0) / (r_ct * r_co)
    if squared:
        factor = factor**2
    return BiasAdjustment(r_ct=r_ct, r_co=r_co, adjusted=beta_hat * factor, squared=squared)
