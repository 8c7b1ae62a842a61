import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intervalforge.curves import CurveFitError, fit_concave_monotone, interpolate_error_curve


def grid_shape_ok(curve, n=1000):
    x = np.linspace(curve.x_min, curve.x_max, n)
    f = curve(x)
    slopes = np.diff(f) / np.diff(x)
    return bool(np.all(np.diff(f) >= -1e-12) and np.all(np.diff(slopes) <= 1e-9))


class TestFit:
    def test_representable_curve_reproduced(self):
        x = np.linspace(0.5, 4.0, 25)
        first, _ = fit_concave_monotone(x, 1 - np.exp(-x))
        target = first(x)
        refit, r2 = fit_concave_monotone(x, target)
        np.testing.assert_allclose(refit(x), target, atol=1e-6)
        assert r2 == pytest.approx(1.0, abs=1e-9)

    def test_linear_exact(self):
        x = np.linspace(0, 1, 10)
        curve, r2 = fit_concave_monotone(x, 0.2 + 0.5 * x)
        np.testing.assert_allclose(curve(x), 0.2 + 0.5 * x, atol=1e-9)

    def test_noisy_concave(self):
        rng = np.random.default_rng(0)
        x = np.sort(rng.uniform(0.1, 5, 60))
        y = 1 - np.exp(-x) + rng.normal(scale=0.01, size=60)
        curve, r2 = fit_concave_monotone(x, y)
        assert r2 > 0.98 and grid_shape_ok(curve)

    def test_derivatives_signs(self):
        x = np.linspace(0, 3, 20)
        curve, _ = fit_concave_monotone(x, np.sin(x))
        g = np.linspace(0, 3, 500)
        assert np.all(curve.slope(g) >= 0) and np.all(curve.curvature(g) <= 0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.integers(6, 40))
    def test_shape_exact_on_arbitrary_data(self, seed, n):
        rng = np.random.default_rng(seed)
        x = np.sort(rng.uniform(0, 10, n))
        if np.any(np.diff(x) <= 0):
            return
        curve, _ = fit_concave_monotone(x, rng.normal(size=n))
        assert grid_shape_ok(curve)

    def test_errors(self):
        with pytest.raises(CurveFitError):
            fit_concave_monotone(np.arange(5.0), np.arange(5.0))
        with pytest.raises(CurveFitError):
            fit_concave_monotone(np.r_[0.0, 0.0, 1, 2, 3, 4], np.arange(6.0))
        with pytest.raises(CurveFitError):
            fit_concave_monotone(np.r_[np.nan, 1, 2, 3, 4, 5], np.arange(6.0))


class TestInterpolate:
    def test_clamping_and_flags(self):
        w = np.linspace(1, 3, 12)
        e = np.exp(-w)
        res = interpolate_error_curve(w, e, [0.5, 2.0, 5.0])
        assert res.clamped.tolist() == [True, False, True]
        assert res.errors[0] == pytest.approx(1 - res.curve(1.0)[0])
        assert res.errors[2] == pytest.approx(1 - res.curve(3.0)[0])
        assert res.errors[1] == pytest.approx(np.exp(-2.0), abs=5e-3)

    def test_errors_in_unit_interval(self):
        w = np.linspace(0.1, 2, 10)
        res = interpolate_error_curve(w, np.clip(1.2 - w, 0, 1), np.linspace(0.1, 2, 50))
        assert np.all((res.errors >= 0) & (res.errors <= 1))

    def test_rejects(self):
        with pytest.raises(CurveFitError):
            interpolate_error_curve(np.arange(1.0, 5.0), np.zeros(4), [1.0])
        with pytest.raises(CurveFitError):
            interpolate_error_curve(np.arange(0.0, 6.0), np.zeros(6), [1.0])
        with pytest.raises(CurveFitError):
            interpolate_error_curve(np.arange(1.0, 7.0), np.zeros(6), [np.inf])
