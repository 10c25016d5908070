"""Dataset container, validation rules, and the small parameter records."""

import numpy as np
import pytest

from conftest import make_raw_dataset
from ivbounds.data import (
    APE_PROBABILITY,
    APE_TOBIT_MEAN,
    PE_PROBABILITY,
    PE_TOBIT_MEAN,
    DataError,
    Dataset,
    EffectQuery,
    Interval,
    ReducedFormFit,
    StructuralParams,
    validate,
)
from ivbounds.simulate import DgpConfig, sample


def good_tobit(n=60, seed=0):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=n)
    x = z + rng.normal(size=n)
    w = np.ones((n, 1))
    y = np.maximum(x + rng.normal(size=n), 0.0)
    return Dataset(y, x, w, z.reshape(-1, 1))


class TestDatasetShape:
    def test_dimensions(self):
        d = good_tobit()
        assert d.n == 60 and d.d_w == 1 and d.d_z == 1
        assert d.zw.shape == (60, 2)
        # regressor stack is [z, w] in that order
        assert np.array_equal(d.zw[:, 0], d.z[:, 0])
        assert np.array_equal(d.zw[:, 1], d.w[:, 0])

    def test_mismatched_lengths(self):
        d = good_tobit()
        with pytest.raises(DataError) as err:
            Dataset(d.y[:-1], d.x, d.w, d.z)
        assert err.value.code == "length_mismatch"


class TestValidate:
    def test_simulated_design_passes(self):
        d = sample(DgpConfig(n=1000), 0)
        out = validate(d, "tobit")
        assert out.n == 1000
        assert out.n_dropped == 0

    def test_idempotent(self):
        d = validate(good_tobit(), "tobit")
        assert validate(d, "tobit") is d

    def test_bad_kind(self):
        with pytest.raises(DataError) as err:
            validate(good_tobit(), "logit")
        assert err.value.code == "bad_kind"

    def test_drops_nonfinite_rows(self):
        d = good_tobit()
        y = d.y.copy()
        x = d.x.copy()
        y[3] = np.nan
        x[7] = np.inf
        out = validate(Dataset(y, x, d.w, d.z), "tobit")
        assert out.n == 58
        assert out.n_dropped == 2

    def test_negative_outcome(self):
        d = good_tobit()
        y = d.y.copy()
        y[0] = -0.5
        with pytest.raises(DataError) as err:
            validate(Dataset(y, d.x, d.w, d.z), "tobit")
        assert err.value.code == "negative_outcome"

    def test_all_positive_outcomes(self):
        d = good_tobit()
        with pytest.raises(DataError) as err:
            validate(Dataset(d.y + 10.0, d.x, d.w, d.z), "tobit")
        assert err.value.code == "no_censored"

    def test_all_censored(self):
        d = good_tobit()
        with pytest.raises(DataError) as err:
            validate(Dataset(np.zeros_like(d.y), d.x, d.w, d.z), "tobit")
        assert err.value.code == "no_uncensored"

    def test_binary_checks(self):
        d = good_tobit()
        with pytest.raises(DataError) as err:
            validate(Dataset(d.y, d.x, d.w, d.z), "probit")
        assert err.value.code == "not_binary"
        with pytest.raises(DataError) as err:
            validate(Dataset(np.ones_like(d.y), d.x, d.w, d.z), "probit")
        assert err.value.code == "one_class"

    def test_duplicate_instrument_column(self):
        d = good_tobit()
        z2 = np.column_stack([d.z[:, 0], d.z[:, 0]])
        with pytest.raises(DataError) as err:
            validate(Dataset(d.y, d.x, d.w, z2), "tobit")
        assert err.value.code == "rank_deficient"

    def test_zero_instrument_column(self):
        d = good_tobit()
        with pytest.raises(DataError) as err:
            validate(Dataset(d.y, d.x, d.w, np.zeros_like(d.z)), "tobit")
        assert err.value.code == "rank_deficient"

    def test_too_small(self):
        d = good_tobit(n=6)
        with pytest.raises(DataError) as err:
            validate(d, "tobit")
        assert err.value.code == "too_small"


class TestInterval:
    def test_basic(self):
        iv = Interval(0.2, 5.0)
        assert iv.width == pytest.approx(4.8)
        assert iv.contains(0.2) and iv.contains(5.0) and iv.contains(1.0)
        assert not iv.contains(5.0000001)
        assert iv.contains(5.0000001, tol=1e-3)
        assert not iv.is_singleton()

    def test_singleton(self):
        iv = Interval(2.0, 2.0)
        assert iv.is_singleton()
        assert iv.width == 0.0

    def test_ordering_enforced(self):
        with pytest.raises(ValueError):
            Interval(1.0, 0.5)


class TestStructuralParams:
    def test_valid_covariance(self):
        s = StructuralParams(sigma_ustar2=1.0, sigma_vstar2=1.0,
                             sigma_ustar_vstar=0.0, sigma_eps2=1.0)
        assert s.is_valid_covariance()

    def test_cauchy_schwarz_violation(self):
        s = StructuralParams(sigma_ustar2=1.0, sigma_vstar2=1.0,
                             sigma_ustar_vstar=1.5, sigma_eps2=0.0)
        assert not s.is_valid_covariance()

    def test_boundary_within_tolerance(self):
        s = StructuralParams(sigma_ustar2=1.0, sigma_vstar2=1.0,
                             sigma_ustar_vstar=1.0, sigma_eps2=0.0)
        assert s.is_valid_covariance()


class TestEffectQuery:
    def test_pointwise_requires_location(self):
        with pytest.raises(ValueError):
            EffectQuery(kind=PE_TOBIT_MEAN, index=0)
        q = EffectQuery(kind=PE_TOBIT_MEAN, index=0, h=np.array([0.0, 1.0]))
        assert not q.is_average
        assert not q.is_probability

    def test_kind_flags(self):
        q = EffectQuery(kind=APE_PROBABILITY, index=0)
        assert q.is_average and q.is_probability
        q = EffectQuery(kind=APE_TOBIT_MEAN, index=1)
        assert q.is_average and not q.is_probability
        q = EffectQuery(kind=PE_PROBABILITY, index=0, h=np.array([1.0, 1.0]))
        assert q.is_probability and not q.is_average


class TestReducedFormFit:
    def make_fit(self):
        p = 7
        vcov = np.eye(p) * 0.01
        return ReducedFormFit(
            model_kind="tobit", method="two_step",
            theta1=2.0, theta2=np.array([1.0]),
            pi1=np.array([1.0]), pi2=np.array([0.0]),
            sigma_u2=5.0, sigma_v2=2.0, sigma_uv=-2.0,
            vcov=vcov, n_obs=100)

    def test_parameter_vector_layout(self):
        fit = self.make_fit()
        psi = fit.params
        assert psi.shape == (7,)
        assert psi[0] == 2.0
        assert psi[fit.idx_sigma_u2] == 5.0
        assert psi[fit.idx_sigma_v2] == 2.0
        assert psi[fit.idx_sigma_uv] == -2.0
        assert fit.param_names() == [
            "theta1", "theta2_0", "pi1_0", "pi2_0",
            "sigma_u2", "sigma_v2", "sigma_uv"]

    def test_derived_quantities(self):
        fit = self.make_fit()
        assert np.allclose(fit.theta, [2.0, 1.0])
        assert np.allclose(fit.pi, [1.0, 0.0])
        assert fit.rho_uv == pytest.approx(-2.0 / np.sqrt(10.0))
        assert np.allclose(fit.se(), 0.1)

    def test_replace_params_roundtrip(self):
        fit = self.make_fit()
        psi = fit.params.copy()
        psi[0] = 1.5
        psi[fit.idx_sigma_uv] = -1.0
        out = fit.replace_params(psi)
        assert out.theta1 == 1.5
        assert out.sigma_uv == -1.0
        # original untouched
        assert fit.theta1 == 2.0

    def test_rejects_invalid_moments(self):
        with pytest.raises(ValueError):
            ReducedFormFit(
                model_kind="tobit", method="two_step",
                theta1=2.0, theta2=np.array([1.0]),
                pi1=np.array([1.0]), pi2=np.array([0.0]),
                sigma_u2=1.0, sigma_v2=1.0, sigma_uv=1.5,
                vcov=np.eye(7), n_obs=100)
