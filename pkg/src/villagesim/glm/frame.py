"""Model frames and fit results shared by all regression routines."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg

from ..errors import EstimationError

RANK_TOLERANCE = 1e-10


class VarianceKind(Enum):
    MODEL_BASED = "model_based"
    HC0 = "hc0"
    HC1 = "hc1"
    HC3 = "hc3"
    CLUSTER_ROBUST = "cluster_robust"


@dataclass(frozen=True)
class VarianceSpec:
    """Which covariance estimator to apply on top of a fit."""

    kind: VarianceKind
    cluster_ids: tuple | None = None

    @classmethod
    def model_based(cls) -> "VarianceSpec":
        return cls(VarianceKind.MODEL_BASED)

    @classmethod
    def hc0(cls) -> "VarianceSpec":
        return cls(VarianceKind.HC0)

    @classmethod
    def hc1(cls) -> "VarianceSpec":
        return cls(VarianceKind.HC1)

    @classmethod
    def hc3(cls) -> "VarianceSpec":
        return cls(VarianceKind.HC3)

    @classmethod
    def cluster_robust(cls, cluster_ids) -> "VarianceSpec":
        return cls(VarianceKind.CLUSTER_ROBUST, cluster_ids=tuple(cluster_ids))


@dataclass
class ModelFrame:
    """One regression problem: response, trials, design matrix, weights.

    ``response`` holds success counts when ``trials`` is present, and
    unit-interval proportions for beta responses (``trials`` absent). The
    design matrix carries the intercept column explicitly.
    """

    response: np.ndarray
    design: np.ndarray
    trials: np.ndarray | None = None
    weights: np.ndarray | None = None
    cluster_ids: tuple | None = None
    column_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        self.response = np.asarray(self.response, dtype=float)
        self.design = np.atleast_2d(np.asarray(self.design, dtype=float))
        if self.trials is not None:
            self.trials = np.asarray(self.trials, dtype=float)
            if np.any(self.trials <= 0):
                raise ValueError("trials must be positive")
            if self.trials.shape != self.response.shape:
                raise ValueError("trials and response must share length")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if np.any(self.weights <= 0):
                raise ValueError("weights must be positive")
            if self.weights.shape != self.response.shape:
                raise ValueError("weights and response must share length")
        if self.design.shape[0] != self.response.shape[0]:
            raise ValueError("design rows must match response length")
        if self.column_names is not None and len(self.column_names) != self.design.shape[1]:
            raise ValueError("column_names must match design width")

    @property
    def n_obs(self) -> int:
        return self.design.shape[0]

    @property
    def n_params(self) -> int:
        return self.design.shape[1]

    def prior_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.ones(self.n_obs)
        return self.weights

    def column_label(self, j: int) -> str:
        if self.column_names is not None:
            return self.column_names[j]
        return f"column {j}"


@dataclass
class FitResult:
    """Converged (or flagged) estimate with its model-based covariance."""

    model: str
    coefficients: np.ndarray
    covariance_model_based: np.ndarray
    linear_predictor: np.ndarray
    fitted_means: np.ndarray
    converged: bool
    iterations: int
    dispersion_or_precision: float | None = None
    log_likelihood: float | None = None
    tau2: float | None = None
    tau2_boundary: bool = False
    column_names: tuple[str, ...] | None = None
    diagnostics: dict = field(default_factory=dict)

    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance_model_based))


def check_full_rank(frame: ModelFrame) -> None:
    """Reject rank-deficient designs, naming the first collinear column.

    Uses a pivoted QR decomposition; a column whose pivot falls below
    ``RANK_TOLERANCE`` times the largest pivot is treated as collinear.
    """
    x = frame.design
    _, r, piv = scipy.linalg.qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0:
        raise EstimationError("design matrix has no columns")
    cutoff = RANK_TOLERANCE * diag[0]
    bad = np.nonzero(diag <= cutoff)[0]
    if bad.size > 0:
        j = int(piv[bad[0]])
        raise EstimationError(
            f"design matrix is rank deficient: {frame.column_label(j)} is collinear"
        )
