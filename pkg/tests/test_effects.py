"""Partial effects, averaged effects, and their extremization over the
identified variance interval.

Frozen values use theta = (2, 1) and evaluation point h = (0, 1), where
the index is theta'h = 1:
    mean effect at s2 = 1: Phi(1) * 2        = 1.6826894921370859
    mean effect at s2 = 5: Phi(1/sqrt5) * 2  = 1.3452791539814231
    prob effect at s2 = 1: phi(1) * 2        = 0.4839414490382867
    prob effect at s2 = 5: phi(1/sqrt5)*2/sqrt5 = 0.3228684517430724
"""

import numpy as np
import pytest
from scipy import stats

from ivbounds.data import (
    APE_PROBABILITY,
    APE_TOBIT_MEAN,
    PE_PROBABILITY,
    PE_TOBIT_MEAN,
    EffectQuery,
    Interval,
)
from ivbounds.effects import (
    ape_bounds,
    ape_probability,
    ape_scale2,
    ape_tobit_mean,
    effect_gradient,
    effect_value,
    pe_bounds,
    pe_probability,
    pe_tobit_mean,
)

THETA = np.array([2.0, 1.0])
H = np.array([0.0, 1.0])


class TestPointwiseEffects:
    def test_mean_effect_values(self):
        assert pe_tobit_mean(H, 0, THETA, 1.0) == pytest.approx(
            1.6826894921370859, abs=1e-12)
        assert pe_tobit_mean(H, 0, THETA, 5.0) == pytest.approx(
            1.3452791539814231, abs=1e-12)

    def test_mean_effect_at_zero_index(self):
        h0 = np.array([0.0, 0.0])
        assert pe_tobit_mean(h0, 0, THETA, 1.0) == pytest.approx(0.5 * 2.0)
        assert pe_tobit_mean(h0, 1, THETA, 1.0) == pytest.approx(0.5 * 1.0)

    def test_probability_effect_values(self):
        assert pe_probability(H, 0, THETA, 1.0) == pytest.approx(
            0.4839414490382867, abs=1e-12)
        assert pe_probability(H, 0, THETA, 5.0) == pytest.approx(
            0.3228684517430724, abs=1e-12)

    def test_probability_effect_at_zero_index(self):
        h0 = np.array([0.0, 0.0])
        assert pe_probability(h0, 0, THETA, 1.0) == pytest.approx(
            0.3989422804014327 * 2.0, abs=1e-12)

    def test_zero_coefficient_gives_zero(self):
        th = np.array([2.0, 0.0])
        assert pe_tobit_mean(H, 1, th, 1.0) == 0.0
        assert pe_probability(H, 1, th, 1.0) == 0.0


class TestPointwiseBounds:
    def make_fit(self, tobit_two_step):
        return tobit_two_step

    def test_probability_bounds_reference(self, tobit_two_step):
        # over [0.2, 5] with index 1 the peak sits at the interior point
        # s2 = 1; endpoint s2 = 0.2 gives the minimum
        fit = tobit_two_step.replace_params(
            np.array([2.0, 1.0, 1.0, 0.0, 5.0, 2.0, -2.0]))
        q = EffectQuery(kind=PE_PROBABILITY, index=0, h=H)
        b = pe_bounds(q, fit, Interval(0.2, 5.0))
        assert b.lower == pytest.approx(0.1464498256192648, abs=1e-10)
        assert b.upper == pytest.approx(0.4839414490382867, abs=1e-10)
        assert b.argmax_sigma2 == pytest.approx(1.0, abs=1e-12)
        assert b.argmin_sigma2 == pytest.approx(0.2, abs=1e-12)

    def test_peak_outside_interval_uses_endpoints(self, tobit_two_step):
        fit = tobit_two_step.replace_params(
            np.array([2.0, 1.0, 1.0, 0.0, 5.0, 2.0, -2.0]))
        q = EffectQuery(kind=PE_PROBABILITY, index=0, h=H)
        b = pe_bounds(q, fit, Interval(2.0, 5.0))
        # density scale falls with s2 beyond the peak at 1
        assert b.argmax_sigma2 == 2.0
        assert b.argmin_sigma2 == 5.0

    def test_mean_bounds_monotone(self, tobit_two_step):
        fit = tobit_two_step.replace_params(
            np.array([2.0, 1.0, 1.0, 0.0, 5.0, 2.0, -2.0]))
        q = EffectQuery(kind=PE_TOBIT_MEAN, index=0, h=H)
        b = pe_bounds(q, fit, Interval(0.2, 5.0))
        # positive index: larger variance flattens the curve, so the
        # upper bound is at the interval's lower endpoint
        assert b.argmax_sigma2 == 0.2
        assert b.argmin_sigma2 == 5.0
        assert b.lower == pytest.approx(1.3452791539814231, abs=1e-12)

    def test_naive_equals_upper_variance_endpoint(self, tobit_two_step):
        q = EffectQuery(kind=PE_TOBIT_MEAN, index=0, h=H)
        iv = Interval(0.2, tobit_two_step.sigma_u2)
        b = pe_bounds(q, tobit_two_step, iv)
        assert b.naive == pytest.approx(
            pe_tobit_mean(H, 0, tobit_two_step.theta,
                          tobit_two_step.sigma_u2), abs=1e-14)
        assert b.naive == pytest.approx(b.lower, abs=1e-12)

    def test_degenerate_interval(self, tobit_two_step):
        q = EffectQuery(kind=PE_TOBIT_MEAN, index=0, h=H)
        b = pe_bounds(q, tobit_two_step, Interval(3.0, 3.0))
        assert b.lower == b.upper


class TestAveragedEffects:
    def test_brute_force_agreement(self, tobit_two_step, tobit_data):
        """The vectorized average must equal an explicit per-row loop."""
        fit, d = tobit_two_step, tobit_data
        s2 = 1.7
        idx = (fit.theta1 * (d.zw @ fit.pi) + d.w @ fit.theta2)
        scale = np.sqrt(2 * s2 - fit.sigma_u2 + fit.theta1 ** 2 * fit.sigma_v2)
        want_mean = np.mean(stats.norm.cdf(idx / scale)) * fit.theta1
        want_prob = np.mean(stats.norm.pdf(idx / scale)) * fit.theta1 / scale
        assert ape_tobit_mean(fit, d, 0, s2) == pytest.approx(want_mean, abs=1e-12)
        assert ape_probability(fit, d, 0, s2) == pytest.approx(want_prob, abs=1e-12)

    def test_large_sample_matches_closed_form(self):
        # population value of the averaged mean effect at the generating
        # design is Phi(1/3) * 2; a 200k-row plug-in at the true
        # parameters should sit within Monte Carlo error of it
        from ivbounds.simulate import DgpConfig, sample, true_psi

        cfg = DgpConfig(n=200_000)
        d = sample(cfg, 23)
        from ivbounds.data import ReducedFormFit
        psi = true_psi(cfg)
        fit = ReducedFormFit(
            model_kind="tobit", method="two_step",
            theta1=psi[0], theta2=psi[1:2], pi1=psi[2:3], pi2=psi[3:4],
            sigma_u2=psi[4], sigma_v2=psi[5], sigma_uv=psi[6],
            vcov=np.zeros((7, 7)), n_obs=cfg.n)
        got = ape_tobit_mean(fit, d, 0, 1.0)
        # 3 MC standard errors of the plug-in average; the common scale at
        # s2 = 1 is sqrt(2*1 - 5 + 4*2) = sqrt(5)
        idx = fit.theta1 * (d.zw @ fit.pi) + d.w @ fit.theta2
        per = stats.norm.cdf(idx / np.sqrt(5.0)) * fit.theta1
        tol = 3.0 * per.std() / np.sqrt(cfg.n)
        assert got == pytest.approx(1.2611173196364727, abs=tol)

    def test_single_row_average_is_the_row_value(self, tobit_two_step):
        from conftest import make_raw_dataset

        d1 = make_raw_dataset([1.0], [0.5], [[1.0]], [[0.3]])
        fit = tobit_two_step
        got = ape_tobit_mean(fit, d1, 0, 2.0)
        idx = fit.theta1 * (fit.pi[0] * 0.3 + fit.pi[1] * 1.0) + fit.theta2[0]
        scale = np.sqrt(2 * 2.0 - fit.sigma_u2 + fit.theta1 ** 2 * fit.sigma_v2)
        assert got == pytest.approx(stats.norm.cdf(idx / scale) * fit.theta1,
                                    abs=1e-12)

    def test_zero_coefficient_gives_zero(self, tobit_two_step, tobit_data):
        psi = tobit_two_step.params.copy()
        psi[1] = 0.0
        fit = tobit_two_step.replace_params(psi)
        assert ape_tobit_mean(fit, tobit_data, 1, 2.0) == 0.0
        assert ape_probability(fit, tobit_data, 1, 2.0) == 0.0

    def test_scale_positive_inside_interval(self):
        """2 s2 - sigma_u2 + theta1^2 sigma_v2 >= s2 > 0 on the interval,
        because the lower endpoint is at least sigma_u2 - theta1^2 sigma_v2."""
        from ivbounds.bounds import sigma_ustar_interval
        from test_bounds import random_observables

        rng = np.random.default_rng(21)
        for _ in range(300):
            t1, su2, sv2, suv = random_observables(rng)
            iv = sigma_ustar_interval(t1, su2, sv2, suv)
            for s2 in np.linspace(iv.lo, iv.hi, 7):
                D = 2 * s2 - su2 + t1 * t1 * sv2
                assert D >= s2 - 1e-9


class TestAveragedBounds:
    def test_matches_grid_oracle(self, tobit_two_step, tobit_data):
        iv = Interval(0.9, 4.2)
        for kind in (APE_TOBIT_MEAN, APE_PROBABILITY):
            q = EffectQuery(kind=kind, index=0)
            b = ape_bounds(q, tobit_two_step, tobit_data, iv)
            fn = ape_tobit_mean if kind == APE_TOBIT_MEAN else ape_probability
            grid = np.linspace(iv.lo, iv.hi, 4001)
            vals = [fn(tobit_two_step, tobit_data, 0, s2) for s2 in grid]
            assert b.lower <= min(vals) + 1e-8
            assert b.upper >= max(vals) - 1e-8
            assert b.lower == pytest.approx(min(vals), abs=1e-6)
            assert b.upper == pytest.approx(max(vals), abs=1e-6)

    def test_degenerate_interval(self, tobit_two_step, tobit_data):
        q = EffectQuery(kind=APE_TOBIT_MEAN, index=0)
        b = ape_bounds(q, tobit_two_step, tobit_data, Interval(2.0, 2.0))
        assert b.lower == b.upper

    def test_bounds_bracket_value_inside(self, tobit_two_step, tobit_data):
        q = EffectQuery(kind=APE_PROBABILITY, index=0)
        iv = Interval(0.9, 4.2)
        b = ape_bounds(q, tobit_two_step, tobit_data, iv)
        mid = effect_value(q, tobit_two_step, tobit_data, 2.0)
        assert b.lower - 1e-12 <= mid <= b.upper + 1e-12


class TestEffectGradient:
    def test_matches_finite_differences(self, tobit_two_step, tobit_data):
        fit, d = tobit_two_step, tobit_data
        s2 = 2.0
        for kind, h in [(PE_TOBIT_MEAN, H), (PE_PROBABILITY, H),
                        (APE_TOBIT_MEAN, None), (APE_PROBABILITY, None)]:
            q = EffectQuery(kind=kind, index=0, h=h)
            val, grad, _ = effect_gradient(q, fit, d, s2)
            assert val == pytest.approx(effect_value(q, fit, d, s2), abs=1e-12)
            psi0 = fit.params
            step = 1e-6
            for k in range(len(psi0)):
                psi_p = psi0.copy()
                psi_m = psi0.copy()
                psi_p[k] += step
                psi_m[k] -= step
                fd = (effect_value(q, fit.replace_params(psi_p), d, s2)
                      - effect_value(q, fit.replace_params(psi_m), d, s2)) / (2 * step)
                assert grad[k] == pytest.approx(fd, rel=1e-4, abs=1e-7)

    def test_naive_gradient_includes_variance_channel(self, tobit_two_step,
                                                      tobit_data):
        q = EffectQuery(kind=PE_TOBIT_MEAN, index=0, h=H)
        fit = tobit_two_step
        _, grad_fixed, _ = effect_gradient(q, fit, tobit_data, fit.sigma_u2)
        _, grad_naive, _ = effect_gradient(q, fit, tobit_data, fit.sigma_u2,
                                           naive=True)
        # plugging the observable variance ties the scale to sigma_u2, so
        # the naive gradient must differ in that coordinate
        k = fit.idx_sigma_u2
        assert grad_fixed[k] == pytest.approx(0.0, abs=1e-10)
        assert abs(grad_naive[k]) > 1e-4
