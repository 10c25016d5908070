"""Estimator facade with the conventional fit / fitted-attribute API.

IVTobit and IVProbit wrap the functional estimation, bound, effect, and
inference layers behind scikit-learn-style objects: configure in the
constructor, call fit(y, x, w, z), then read trailing-underscore
attributes or ask for effect bounds and confidence intervals.  Both
classes provide get_params/set_params and integrate with sklearn clone.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import bounds as _bounds
from .data import (APE_PROBABILITY, APE_TOBIT_MEAN, Dataset, EffectQuery,
                   Interval, PE_PROBABILITY, PE_TOBIT_MEAN, ReducedFormFit,
                   StructuralParams, validate)
from .effects import EffectBounds, ape_bounds, pe_bounds
from .gaussian import fit_joint_mle, fit_two_step
from .inference import (BonferroniConfig, ci_effect, ci_sigma_ustar2,
                        naive_effect_ci)
from .mixture import MixtureParams, fit_mixture, mixture_sigma_ustar_interval
from .numeric import norm_cdf, norm_pdf

__all__ = ["IVTobit", "IVProbit"]

_TOBIT_KINDS = (PE_TOBIT_MEAN, PE_PROBABILITY, APE_TOBIT_MEAN, APE_PROBABILITY)
_PROBIT_KINDS = (PE_PROBABILITY, APE_PROBABILITY)


class _BaseIV(BaseEstimator):
    """Shared fitting and reporting logic; subclasses pin the model kind."""

    _model_kind = ""

    def __init__(self, method: str = "joint", alpha: float = 0.05,
                 alpha1: float | None = None,
                 mixture_components: int | None = None,
                 mixture_starts: int = 8, seed: int = 0):
        self.method = method
        self.alpha = alpha
        self.alpha1 = alpha1
        self.mixture_components = mixture_components
        self.mixture_starts = mixture_starts
        self.seed = seed

    # -- fitting -------------------------------------------------------------

    def fit(self, y, x, w, z):
        """Estimate from arrays: outcome, mismeasured regressor, exogenous
        covariates, instruments.  Returns self."""
        if self.method not in ("two_step", "joint"):
            raise ValueError(
                f"method must be two_step or joint, got {self.method!r}")
        if self.mixture_components is not None and self._model_kind != "tobit":
            raise ValueError(
                "the mixture error model is available for the censored "
                "outcome only")
        d = validate(Dataset(y, x, w, z), self._model_kind)
        fitter = fit_two_step if self.method == "two_step" else fit_joint_mle
        fit: ReducedFormFit = fitter(d, self._model_kind)
        self.data_ = d
        self.fit_ = fit
        self.theta_ = fit.theta
        self.pi_ = fit.pi
        self.sigma_u2_ = fit.sigma_u2
        self.sigma_v2_ = fit.sigma_v2
        self.sigma_uv_ = fit.sigma_uv
        self.n_obs_ = fit.n_obs
        self.n_dropped_ = fit.n_dropped
        self.loglik_ = fit.loglik
        self.epsilon_upper_ = _bounds.epsilon_upper(
            fit.theta1, fit.sigma_u2, fit.sigma_v2, fit.sigma_uv)
        self.mixture_ = None
        if self.mixture_components is None:
            self.interval_ = _bounds.sigma_ustar_interval(
                fit.theta1, fit.sigma_u2, fit.sigma_v2, fit.sigma_uv)
        else:
            mix: MixtureParams = fit_mixture(
                d, int(self.mixture_components),
                n_starts=self.mixture_starts, seed=self.seed)
            self.mixture_ = mix
            self.interval_ = mixture_sigma_ustar_interval(mix)
        self.bonferroni_ = BonferroniConfig(alpha=self.alpha,
                                            alpha1=self.alpha1)
        return self

    def _check_fitted(self):
        if not hasattr(self, "fit_"):
            raise NotFittedError(
                f"this {type(self).__name__} instance is not fitted yet; "
                "call fit(y, x, w, z) first")

    def _check_kind(self, kind: str):
        allowed = _TOBIT_KINDS if self._model_kind == "tobit" else _PROBIT_KINDS
        if kind not in allowed:
            raise ValueError(
                f"effect kind {kind!r} is not available for the "
                f"{self._model_kind} model; choose one of {allowed}")

    def _query(self, kind: str, index: int, at) -> EffectQuery:
        self._check_kind(kind)
        if kind in (PE_TOBIT_MEAN, PE_PROBABILITY):
            h = self.covariate_means() if at is None else np.asarray(at, float)
            return EffectQuery(kind, index=index, h=h)
        return EffectQuery(kind, index=index)

    def _check_no_mixture(self, what: str):
        if self.mixture_ is not None:
            raise ValueError(
                f"{what} is not available under the mixture error model "
                "(no inference theory is provided for it)")

    # -- fitted-state queries ------------------------------------------------

    def covariate_means(self) -> np.ndarray:
        """Sample mean of (x, w), the default effect evaluation point."""
        self._check_fitted()
        d = self.data_
        return np.concatenate([[float(d.x.mean())], d.w.mean(axis=0)])

    def sigma_ci(self) -> Interval:
        """Confidence interval for the latent heterogeneity variance."""
        self._check_fitted()
        self._check_no_mixture("the variance confidence interval")
        return ci_sigma_ustar2(self.fit_, self.bonferroni_)

    def effect_bounds(self, kind: str, index: int = 0,
                      at=None) -> EffectBounds:
        """Identified bounds for an effect; `at` is the evaluation point
        for pointwise kinds (default: sample covariate means)."""
        self._check_fitted()
        q = self._query(kind, index, at)
        if q.is_average:
            self._check_no_mixture("the averaged effect")
            return ape_bounds(q, self.fit_, self.data_, self.interval_)
        fit = self.fit_
        if self.mixture_ is not None:
            # pointwise bounds under the mixture use the mixture's own
            # coefficients and aggregate error moments
            m = self.mixture_
            psi = np.concatenate([m.theta, m.pi, m.aggregate_moments()])
            fit = fit.replace_params(psi)
        return pe_bounds(q, fit, self.interval_)

    def effect_ci(self, kind: str, index: int = 0, at=None) -> Interval:
        """Two-step confidence interval for a set-identified effect."""
        self._check_fitted()
        self._check_no_mixture("the effect confidence interval")
        q = self._query(kind, index, at)
        return ci_effect(q, self.fit_, self.data_, self.bonferroni_)

    def naive_effect(self, kind: str, index: int = 0,
                     at=None) -> tuple[float, Interval]:
        """Effect and CI when all endogeneity is treated as structural."""
        self._check_fitted()
        self._check_no_mixture("the naive effect interval")
        q = self._query(kind, index, at)
        return naive_effect_ci(q, self.fit_, self.data_, alpha=self.alpha)

    def implied_structural(self, sigma_ustar2: float) -> StructuralParams:
        """Latent parameters consistent with the fit at one point of the
        identified interval."""
        self._check_fitted()
        f = self.fit_
        return _bounds.implied_structural(
            sigma_ustar2, f.theta1, f.sigma_u2, f.sigma_v2, f.sigma_uv)

    def predict(self, x, w, z) -> np.ndarray:
        """Conditional outcome prediction given covariates and instruments.

        Uses the fitted observable-error model, conditioning on the
        first-stage residual: censored model returns E[Y | x, w, v], binary
        model returns P(Y = 1 | x, w, v).  Fully identified (no latent
        variance is involved).
        """
        self._check_fitted()
        f = self.fit_
        x = np.asarray(x, float).ravel()
        w = np.asarray(w, float)
        if w.ndim == 1:
            w = w[:, None]
        z = np.asarray(z, float)
        if z.ndim == 1:
            z = z[:, None]
        v = x - np.hstack([z, w]) @ f.pi
        mu = f.theta1 * x + w @ f.theta2 + (f.sigma_uv / f.sigma_v2) * v
        s = np.sqrt(f.sigma_u2 - f.sigma_uv ** 2 / f.sigma_v2)
        if self._model_kind == "probit":
            return norm_cdf(mu / s)
        return norm_cdf(mu / s) * mu + s * norm_pdf(mu / s)

    def summary(self) -> str:
        """Human-readable report of estimates, bounds, and diagnostics."""
        self._check_fitted()
        f = self.fit_
        se = f.se()
        lines = [
            f"{type(self).__name__} ({self.method}), n = {f.n_obs}"
            + (f", dropped = {f.n_dropped}" if f.n_dropped else ""),
            f"log-likelihood: {f.loglik:.4f}" if f.loglik is not None else "",
            "",
            f"{'parameter':<12} {'estimate':>12} {'std err':>12}",
        ]
        for name, est, s in zip(f.param_names(), f.params, se):
            se_txt = "-" if (self._model_kind == "probit"
                             and name == "sigma_u2") else f"{s:12.6f}"
            lines.append(f"{name:<12} {est:12.6f} {se_txt:>12}")
        lines += [
            "",
            f"corr(U, V) = {f.rho_uv:.6f}; "
            f"max measurement-error variance = {self.epsilon_upper_:.6f}",
            f"latent variance bounds: [{self.interval_.lo:.6f}, "
            f"{self.interval_.hi:.6f}]",
        ]
        if self.mixture_ is not None:
            m = self.mixture_
            lines.append(
                f"mixture: {m.n_components} components, "
                f"loglik = {m.loglik:.4f}, bic = {m.bic:.4f}")
        else:
            ci = self.sigma_ci()
            lines.append(
                f"latent variance CI (level {1 - self.bonferroni_.alpha1:g})"
                f": [{ci.lo:.6f}, {ci.hi:.6f}]")
        return "\n".join(line for line in lines if line != "")


class IVTobit(_BaseIV):
    """Censored-outcome model with a mismeasured endogenous regressor.

    Estimates the observable-error model, bounds the latent heterogeneity
    variance, and reports effect bounds and two-step confidence intervals.
    Set mixture_components=K for the finite-mixture error generalization
    (bounds only; no mixture inference).
    """

    _model_kind = "tobit"


class IVProbit(_BaseIV):
    """Binary-outcome counterpart of IVTobit, under the unit-variance
    normalization of the observable outcome error."""

    _model_kind = "probit"
