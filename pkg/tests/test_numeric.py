"""Normal-distribution helpers, the max-of-two-normals quantile, golden
section search, and the quasi-Newton wrapper.

Reference values are frozen from independent closed forms (stated next to
each literal) so a regression in the implementation cannot hide behind a
matching regression in the test.
"""

import numpy as np
import pytest

from ivbounds.numeric import (
    BivariateNormalParams,
    ConvergenceError,
    NormalParams,
    NumericalError,
    golden_maximize,
    golden_minimize,
    max2_normal_cdf,
    max2_normal_quantile,
    norm_cdf,
    norm_logcdf,
    norm_logpdf,
    norm_pdf,
    norm_quantile,
    numeric_gradient,
    numeric_hessian,
    quasi_newton_maximize,
)


class TestNormalFunctions:
    def test_cdf_at_zero(self):
        assert norm_cdf(0.0) == pytest.approx(0.5, abs=1e-15)

    def test_pdf_at_zero(self):
        # 1 / sqrt(2 pi)
        assert norm_pdf(0.0) == pytest.approx(0.3989422804014327, abs=1e-15)

    def test_quantile_975(self):
        assert norm_quantile(0.975) == pytest.approx(1.959963985, abs=1e-5)

    def test_cdf_quantile_roundtrip(self):
        for p in [1e-6, 0.01, 0.3, 0.5, 0.7, 0.975, 1 - 1e-6]:
            assert abs(norm_cdf(norm_quantile(p)) - p) <= 1e-12

    def test_quantile_domain(self):
        for p in [0.0, 1.0, -0.2, 1.3]:
            with pytest.raises(NumericalError):
                norm_quantile(p)

    def test_log_tails_finite(self):
        # the naive log(cdf(x)) underflows near -40; the log form must not
        assert np.isfinite(norm_logcdf(-40.0))
        assert norm_logcdf(-40.0) < -700.0
        assert np.isfinite(norm_logpdf(40.0))

    def test_cdf_monotone(self):
        xs = np.linspace(-8, 8, 200)
        vals = norm_cdf(xs)
        assert np.all(np.diff(vals) > 0)


class TestMaxTwoNormals:
    def test_perfect_correlation_degenerates(self):
        # max of two identical normals is the normal itself
        assert max2_normal_quantile(0.9975, 1.0) == pytest.approx(
            norm_quantile(0.9975), abs=1e-12)
        assert max2_normal_quantile(0.9975, 1.0) == pytest.approx(2.8070, abs=1e-3)

    def test_independent_pair(self):
        # P(max <= c) = Phi(c)^2, so c = Phi^{-1}(sqrt(0.9975))
        assert max2_normal_quantile(0.9975, 0.0) == pytest.approx(
            3.023152138, abs=1e-6)

    def test_antithetic_pair(self):
        # rho = -1 makes max(Z, -Z) = |Z|; P(|Z| <= c) = 0.5 at Phi^{-1}(0.75)
        assert max2_normal_quantile(0.5, -1.0) == pytest.approx(
            0.6744897501960817, abs=1e-6)

    def test_cdf_quantile_roundtrip(self):
        for rho in [-1.0, -0.5, 0.0, 0.5, 0.9, 1.0]:
            for p in [0.5, 0.9, 0.99, 0.9975]:
                c = max2_normal_quantile(p, rho)
                assert abs(max2_normal_cdf(c, rho) - p) <= 1e-4

    def test_cdf_against_monte_carlo(self):
        rho = 0.5
        c = 1.3
        rng = np.random.default_rng(123)
        n = 2_000_000
        z1 = rng.normal(size=n)
        z2 = rho * z1 + np.sqrt(1 - rho * rho) * rng.normal(size=n)
        p_hat = np.mean(np.maximum(z1, z2) <= c)
        se = np.sqrt(p_hat * (1 - p_hat) / n)
        assert abs(max2_normal_cdf(c, rho) - p_hat) <= 4 * se

    def test_quantile_monotone_in_rho(self):
        # more correlation means a smaller maximum, so a smaller quantile
        qs = [max2_normal_quantile(0.99, r) for r in [-1, -0.5, 0, 0.5, 1]]
        assert np.all(np.diff(qs) < 0)


class TestGoldenSection:
    def test_quadratic(self):
        arg, val = golden_minimize(lambda x: (x - 1.0) ** 2, (0.0, 5.0))
        assert arg == pytest.approx(1.0, abs=1e-8)
        assert val == pytest.approx(0.0, abs=1e-14)

    def test_scaled_density_peak(self):
        # f(s2) = pdf(1/sqrt(s2)) / sqrt(s2) is stationary at s2 = 1
        def f(s2):
            return norm_pdf(1.0 / np.sqrt(s2)) / np.sqrt(s2)

        arg, _ = golden_maximize(f, (0.2, 5.0))
        assert arg == pytest.approx(1.0, abs=1e-6)

    def test_degenerate_interval(self):
        arg, val = golden_minimize(lambda x: (x - 1.0) ** 2, (2.0, 2.0))
        assert arg == 2.0
        assert val == 1.0

    def test_multimodal_needs_grid(self):
        # plain golden section from the endpoints would latch onto a local
        # valley; the 200-point pre-scan must find the global one
        def f(x):
            return np.sin(10.0 * x) + 0.1 * (x - 2.0) ** 2

        arg, val = golden_minimize(f, (0.0, 4.0))
        grid = np.linspace(0.0, 4.0, 2_000_001)
        brute = np.min(f(grid))
        assert val <= brute + 1e-9

    def test_nonfinite_objective(self):
        def f(x):
            if x > 2.0:
                return np.nan
            return x

        with pytest.raises(NumericalError):
            golden_minimize(f, (0.0, 5.0))


class TestDerivatives:
    def test_gradient_matches_analytic(self):
        def f(v):
            return v[0] ** 2 * v[1] + np.sin(v[1])

        at = np.array([1.3, -0.7])
        g = numeric_gradient(f, at)
        exact = np.array([2 * 1.3 * -0.7, 1.3 ** 2 + np.cos(-0.7)])
        assert np.allclose(g, exact, rtol=1e-6, atol=1e-8)

    def test_hessian_symmetric_and_exact(self):
        def f(v):
            return v[0] ** 2 + 3.0 * v[0] * v[1] - 2.0 * v[1] ** 2

        H = numeric_hessian(f, np.array([0.4, 0.9]))
        assert np.allclose(H, H.T, atol=1e-8)
        assert np.allclose(H, [[2.0, 3.0], [3.0, -4.0]], atol=1e-4)


class TestQuasiNewton:
    def test_concave_quadratic(self):
        x, H = quasi_newton_maximize(lambda v: -float(v @ v),
                                     np.array([1.0, 1.0]))
        assert np.allclose(x, 0.0, atol=1e-8)
        assert np.all(np.linalg.eigvalsh(H) < 0)

    def test_recovers_curved_optimum(self):
        # banana-shaped ridge; needs curvature updates, not just steepest ascent
        def f(v):
            return -(100.0 * (v[1] - v[0] ** 2) ** 2 + (1.0 - v[0]) ** 2)

        x, _ = quasi_newton_maximize(f, np.array([-1.2, 1.0]))
        assert np.allclose(x, [1.0, 1.0], atol=1e-6)

    def test_plateau_raises(self):
        with pytest.raises(ConvergenceError):
            quasi_newton_maximize(lambda v: 0.0, np.array([1.0, 1.0]))

    def test_callback_sees_nondecreasing_values(self):
        seen = []

        def f(v):
            return -float((v - 3.0) @ (v - 3.0))

        quasi_newton_maximize(f, np.array([0.0, 0.0]),
                              callback=lambda x, val: seen.append(val))
        assert len(seen) >= 1
        assert np.all(np.diff(seen) >= -1e-9)


class TestParamRecords:
    def test_normal_params_rejects_bad_scale(self):
        with pytest.raises(NumericalError):
            NormalParams(mean=0.0, variance=-1.0)

    def test_bivariate_requires_psd(self):
        with pytest.raises(NumericalError):
            BivariateNormalParams(mean=(0.0, 0.0),
                                  cov=np.array([[1.0, 2.0], [2.0, 1.0]]))
