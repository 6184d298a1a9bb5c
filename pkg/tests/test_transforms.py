import math

import numpy as np
import pytest

from villagesim.glm.transforms import (
    icc_from_tau2,
    squeeze_unit_interval,
    standardize,
    tau2_from_icc,
)


class TestStandardize:
    def test_hand_example(self):
        out = standardize([1.0, 2.0, 3.0])
        assert np.allclose(out, [-1.0, 0.0, 1.0])

    def test_idempotent_on_standardized(self):
        x = standardize(np.random.default_rng(0).normal(3.0, 2.0, 50))
        again = standardize(x)
        assert np.max(np.abs(again - x)) < 1e-12

    def test_constant_vector_raises(self):
        with pytest.raises(ValueError):
            standardize([2.0, 2.0, 2.0])

    def test_output_moments(self):
        out = standardize(np.random.default_rng(1).uniform(0, 10, 101))
        assert abs(out.mean()) < 1e-12
        assert abs(out.std(ddof=1) - 1.0) < 1e-12


class TestSqueeze:
    def test_boundary_values(self):
        assert squeeze_unit_interval(np.array([0.0]), 10)[0] == pytest.approx(0.05, abs=1e-15)
        assert squeeze_unit_interval(np.array([1.0]), 10)[0] == pytest.approx(0.95, abs=1e-15)

    @pytest.mark.parametrize("n", [2, 10, 1000])
    def test_half_is_fixed_point(self, n):
        assert squeeze_unit_interval(np.array([0.5]), n)[0] == pytest.approx(0.5, abs=1e-15)

    def test_output_strictly_interior(self):
        y = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
        out = squeeze_unit_interval(y, len(y))
        assert np.all(out > 0.0) and np.all(out < 1.0)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            squeeze_unit_interval(np.array([-0.1]), 5)


class TestIcc:
    def test_zero(self):
        assert icc_from_tau2(0.0) == 0.0

    def test_symmetry_point(self):
        assert icc_from_tau2(math.pi**2 / 3.0) == pytest.approx(0.5, abs=1e-15)

    def test_published_value(self):
        assert icc_from_tau2(0.9279) == pytest.approx(0.22, abs=5e-4)

    def test_negative_raises(self):
        with pytest.raises(ValueError):
            icc_from_tau2(-0.1)

    def test_round_trip(self):
        for tau2 in np.linspace(0.0, 50.0, 100):
            assert abs(tau2_from_icc(icc_from_tau2(tau2)) - tau2) <= 1e-12 * max(tau2, 1.0)

    def test_strictly_increasing(self):
        grid = np.linspace(0.0, 10.0, 200)
        vals = [icc_from_tau2(t) for t in grid]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_tau2_from_icc_examples(self):
        assert tau2_from_icc(0.0) == 0.0
        assert tau2_from_icc(0.5) == pytest.approx(math.pi**2 / 3.0, rel=1e-12)
        assert tau2_from_icc(0.22) == pytest.approx(0.9279, abs=5e-4)
        with pytest.raises(ValueError):
            tau2_from_icc(1.0)
