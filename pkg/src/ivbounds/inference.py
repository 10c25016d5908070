"""Confidence intervals for the latent variance and for effect bounds.

The target effects are functions of a point-identified parameter vector and
a set-identified variance, so inference proceeds in two steps with a
Bonferroni split of the level: step one builds a confidence interval for
the latent variance from the estimated lower-bound candidates (using the
quantile of the maximum of their two, correlated, normalized estimation
errors) and the estimated upper bound; step two extremizes, over that
interval, the pointwise confidence limits of the effect holding the
variance fixed.  The resulting interval covers the true effect with
probability at least 1 - alpha asymptotically, uniformly over the
identified set.

Standard errors of averaged effects include the sampling variability of
the empirical average itself through the fit's per-row influence
contributions, not only the parameter noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bounds as _bounds
from .data import Dataset, EffectQuery, Interval, ReducedFormFit
from .effects import _ape_domain, effect_gradient
from .numeric import (NumericalError, golden_maximize, golden_minimize,
                      max2_normal_quantile, norm_quantile, numeric_gradient)

__all__ = [
    "BonferroniConfig",
    "delta_se",
    "ci_sigma_ustar2",
    "ci_effect",
    "naive_effect_ci",
]


@dataclass(frozen=True)
class BonferroniConfig:
    """Level split for two-step inference: alpha1 of the budget goes to the
    variance interval, alpha - alpha1 to the effect given the variance.
    Default alpha1 is alpha / 10."""

    alpha: float = 0.05
    alpha1: float | None = None

    def __post_init__(self):
        a1 = self.alpha / 10.0 if self.alpha1 is None else self.alpha1
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 < a1 < self.alpha:
            raise ValueError(
                f"alpha1 must lie in (0, alpha), got alpha1={a1}, alpha={self.alpha}")
        object.__setattr__(self, "alpha1", a1)

    @property
    def alpha2(self) -> float:
        return self.alpha - self.alpha1


def delta_se(g, at, vcov) -> float:
    """Delta-method standard error of scalar g at the point `at`.

    The gradient is taken by central differences with per-coordinate step
    1e-5 * (1 + |x_i|).  A materially negative quadratic form (beyond
    round-off) raises NumericalError; round-off negatives clip to zero.
    """
    at = np.asarray(at, float)
    vcov = np.asarray(vcov, float)
    grad = numeric_gradient(g, at)
    return se_from_gradient(grad, vcov)


def se_from_gradient(grad, vcov) -> float:
    grad = np.asarray(grad, float)
    vcov = np.asarray(vcov, float)
    q = float(grad @ vcov @ grad)
    scale = float(np.max(np.abs(vcov))) * float(grad @ grad) + 1.0
    if q < -1e-12 * scale:
        raise NumericalError(f"vcov quadratic form is negative: {q}")
    return float(np.sqrt(max(q, 0.0)))


def ci_sigma_ustar2(fit: ReducedFormFit, cfg: BonferroniConfig) -> Interval:
    """Level 1 - alpha1 confidence interval for the latent variance.

    Lower limit: the larger of the two lower-bound candidates, each pushed
    down by c standard errors, where c is the 1 - alpha1/2 quantile of the
    maximum of two standard normals with the candidates' estimated error
    correlation.  Upper limit: sigma_u2 plus the usual normal quantile
    times its standard error.  The lower limit is clamped at zero (the
    parameter is a variance).
    """
    psi = fit.params
    iu2 = fit.idx_sigma_u2

    def xi1_of(p):
        return _xi_from_psi(p, fit, which=0)

    def xi2_of(p):
        return _xi_from_psi(p, fit, which=1)

    g1 = numeric_gradient(xi1_of, psi)
    g2 = numeric_gradient(xi2_of, psi)
    V = fit.vcov
    s1 = se_from_gradient(g1, V)
    s2 = se_from_gradient(g2, V)
    cov12 = float(g1 @ V @ g2)
    if s1 > 0.0 and s2 > 0.0:
        rho = float(np.clip(cov12 / (s1 * s2), -1.0, 1.0))
    else:
        rho = 1.0
    c = max2_normal_quantile(1.0 - cfg.alpha1 / 2.0, rho)
    xi1 = xi1_of(psi)
    xi2 = xi2_of(psi)
    lower = max(xi1 - c * s1, xi2 - c * s2, 0.0)
    z = float(norm_quantile(1.0 - cfg.alpha1 / 2.0))
    s_u2 = float(np.sqrt(max(V[iu2, iu2], 0.0)))
    upper = fit.sigma_u2 + z * s_u2
    return Interval(min(lower, upper), upper)


def _xi_from_psi(psi, fit: ReducedFormFit, which: int) -> float:
    theta1 = float(psi[0])
    su2 = float(psi[fit.idx_sigma_u2])
    sv2 = float(psi[fit.idx_sigma_v2])
    suv = float(psi[fit.idx_sigma_uv])
    if theta1 == 0.0:
        return su2
    xi1, xi2 = _bounds.xi_candidates(theta1, su2, sv2, suv)
    return xi1 if which == 0 else xi2


def _effect_se(query: EffectQuery, fit: ReducedFormFit, d: Dataset | None,
               sigma2: float, naive: bool = False) -> tuple[float, float]:
    """(value, standard error) of the effect at a fixed latent variance.

    Pointwise kinds use the delta method over the parameter vector.
    Averaged kinds add the variability of the sample average via the
    influence-function form sum_i ((a_i - abar)/n + grad' phi_i)^2.
    """
    val, grad, per_obs = effect_gradient(query, fit, d, sigma2, naive=naive)
    if per_obs is None or fit.influence is None:
        return val, se_from_gradient(grad, fit.vcov)
    n = per_obs.shape[0]
    contrib = (per_obs - per_obs.mean()) / n + fit.influence @ grad
    return val, float(np.sqrt(np.sum(contrib ** 2)))


def ci_effect(query: EffectQuery, fit: ReducedFormFit, d: Dataset | None,
              cfg: BonferroniConfig) -> Interval:
    """Bonferroni two-step confidence interval for a set-identified effect.

    Extremizes value -/+ z * se over the step-one variance interval with a
    grid-seeded golden-section search; z spends the alpha - alpha1 part of
    the budget.
    """
    ci1 = ci_sigma_ustar2(fit, cfg)
    if query.is_average:
        if d is None:
            raise ValueError("averaged effect kinds require a dataset")
        dom = _ape_domain(fit, ci1)
    else:
        dom = ci1
    z2 = float(norm_quantile(1.0 - cfg.alpha2 / 2.0))

    def lower_fn(s2):
        v, se = _effect_se(query, fit, d, s2)
        return v - z2 * se

    def upper_fn(s2):
        v, se = _effect_se(query, fit, d, s2)
        return v + z2 * se

    _, lo = golden_minimize(lower_fn, dom)
    _, hi = golden_maximize(upper_fn, dom)
    cands = [dom.lo, dom.hi]
    if not query.is_average:
        s2c = float(fit.theta @ np.asarray(query.h, dtype=float)) ** 2
        if dom.lo < s2c < dom.hi:
            cands.append(s2c)
    lo = min([lo] + [lower_fn(c) for c in cands])
    hi = max([hi] + [upper_fn(c) for c in cands])
    return Interval(lo, hi)


def naive_effect_ci(query: EffectQuery, fit: ReducedFormFit,
                    d: Dataset | None, alpha: float = 0.05
                    ) -> tuple[float, Interval]:
    """Point estimate and level 1 - alpha CI of the naive effect, which
    plugs the observable error variance in as if it were the latent one.
    Its delta-method gradient includes the sigma_u2 channel."""
    val, se = _effect_se(query, fit, d, fit.sigma_u2, naive=True)
    z = float(norm_quantile(1.0 - alpha / 2.0))
    return val, Interval(val - z * se, val + z * se)
