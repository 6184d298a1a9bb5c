import numpy as np
import pytest
from scipy.special import expit

from villagesim.errors import EstimationError
from villagesim.glm import (
    ModelFrame,
    VarianceSpec,
    fit_beta_regression,
    fit_binomial_logistic,
    fit_weighted_linear,
    sandwich_covariance,
)


@pytest.fixture
def binomial_fit():
    rng = np.random.default_rng(8)
    n = 80
    x = np.column_stack([np.ones(n), rng.normal(size=n)])
    trials = rng.integers(8, 40, size=n).astype(float)
    mu = expit(-0.4 + 0.5 * x[:, 1])
    y = rng.binomial(trials.astype(int), mu).astype(float)
    frame = ModelFrame(response=y, trials=trials, design=x)
    return fit_binomial_logistic(frame), frame


class TestSandwich:
    def test_hc1_is_scaled_hc0(self, binomial_fit):
        fit, frame = binomial_fit
        hc0 = sandwich_covariance(fit, frame, VarianceSpec.hc0())
        hc1 = sandwich_covariance(fit, frame, VarianceSpec.hc1())
        n, k = frame.n_obs, frame.n_params
        assert np.allclose(hc1, hc0 * n / (n - k), rtol=1e-12)

    def test_singleton_clusters_equal_hc0(self, binomial_fit):
        fit, frame = binomial_fit
        hc0 = sandwich_covariance(fit, frame, VarianceSpec.hc0())
        cr = sandwich_covariance(
            fit, frame, VarianceSpec.cluster_robust(range(frame.n_obs))
        )
        assert np.array_equal(hc0, cr)

    def test_symmetric_psd(self, binomial_fit):
        fit, frame = binomial_fit
        for spec in (VarianceSpec.hc0(), VarianceSpec.hc1(), VarianceSpec.hc3()):
            cov = sandwich_covariance(fit, frame, spec)
            assert np.max(np.abs(cov - cov.T)) < 1e-12
            assert np.min(np.linalg.eigvalsh(cov)) >= -1e-10

    def test_homoscedastic_linear_hc0_close_to_model_based(self):
        rng = np.random.default_rng(23)
        n = 600
        x = np.column_stack([np.ones(n), rng.normal(size=n)])
        y = x @ np.array([1.0, 2.0]) + rng.normal(0.0, 1.5, size=n)
        frame = ModelFrame(response=y, design=x)
        fit = fit_weighted_linear(frame)
        hc0 = sandwich_covariance(fit, frame, VarianceSpec.hc0())
        ratio = np.diag(hc0) / np.diag(fit.covariance_model_based)
        assert np.all(ratio > 0.8) and np.all(ratio < 1.2)

    def test_hc3_leverage_one_raises_with_row(self):
        # one observation's weight dwarfs the rest: leverage approaches 1
        x = np.column_stack([np.ones(4), np.array([0.0, 0.0, 0.0, 1.0])])
        y = np.array([0.1, 0.2, 0.3, 0.9])
        frame = ModelFrame(response=y, design=x)
        fit = fit_weighted_linear(frame)
        with pytest.raises(EstimationError, match="row 3"):
            sandwich_covariance(fit, frame, VarianceSpec.hc3())

    def test_cluster_grouping_differs_from_hc0_with_real_clusters(self, binomial_fit):
        fit, frame = binomial_fit
        ids = [i // 4 for i in range(frame.n_obs)]
        cr = sandwich_covariance(fit, frame, VarianceSpec.cluster_robust(ids))
        hc0 = sandwich_covariance(fit, frame, VarianceSpec.hc0())
        assert not np.allclose(cr, hc0)
        assert np.max(np.abs(cr - cr.T)) < 1e-12

    def test_beta_sandwich_covers_joint_vector(self):
        rng = np.random.default_rng(31)
        n = 60
        x = np.column_stack([np.ones(n), rng.normal(size=n)])
        mu = expit(-0.3 + 0.4 * x[:, 1])
        y = np.clip(rng.beta(mu * 6, (1 - mu) * 6), 1e-6, 1 - 1e-6)
        frame = ModelFrame(response=y, design=x)
        fit = fit_beta_regression(frame)
        cov = sandwich_covariance(fit, frame, VarianceSpec.hc0())
        assert cov.shape == (3, 3)
        assert np.min(np.linalg.eigvalsh(cov)) >= -1e-10

    def test_model_based_passthrough(self, binomial_fit):
        fit, frame = binomial_fit
        assert np.array_equal(
            sandwich_covariance(fit, frame, VarianceSpec.model_based()),
            fit.covariance_model_based,
        )
