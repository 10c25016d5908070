"""Partial effects of the latent regressor and their bounds.

Pointwise effects at a covariate point h = (x, w):

    mean kind         Phi(theta'h / s) * theta_j          (censored outcome)
    probability kind  phi(theta'h / s) * theta_j / s      (either outcome)

with s = sqrt(sigma_ustar2).  Averaged effects replace the single h by the
sample and integrate the first stage out of the latent regressor, giving a
common scale sqrt(2 * sigma_ustar2 - sigma_u2 + theta1^2 * sigma_v2).
Because sigma_ustar2 is only set identified, each effect is reported as an
interval over the identified set; the mean kind is monotone in the scale so
its extrema sit at the endpoints, while the probability kind can peak
inside (at sigma_ustar2 = (theta'h)^2), so candidates are checked there too.

Effects are evaluated by continuity at sigma_ustar2 == 0, which the lower
endpoint of the identified set can reach; the scales are floored at a tiny
positive value so the limits Phi(+-inf) and phi(+-inf)/s are produced
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import (APE_PROBABILITY, APE_TOBIT_MEAN, PE_PROBABILITY,
                   PE_TOBIT_MEAN, Dataset, EffectQuery, Interval,
                   ReducedFormFit)
from .numeric import golden_maximize, golden_minimize, norm_cdf, norm_pdf

__all__ = [
    "EffectBounds",
    "pe_tobit_mean",
    "pe_probability",
    "pe_bounds",
    "ape_tobit_mean",
    "ape_probability",
    "ape_bounds",
    "effect_value",
    "effect_gradient",
    "ape_scale2",
]

_SCALE_FLOOR = 1e-280


@dataclass(frozen=True)
class EffectBounds:
    """Bounds for one effect over the identified set, plus the naive value
    obtained by treating the observable error variance as if it were the
    latent one.  argmin_sigma2/argmax_sigma2 record where the extrema are
    attained."""

    kind: str
    lower: float
    upper: float
    naive: float
    argmin_sigma2: float
    argmax_sigma2: float

    def __post_init__(self):
        if self.lower > self.upper + 1e-12 * (1.0 + abs(self.upper)):
            raise ValueError(
                f"effect bounds out of order: [{self.lower}, {self.upper}]")

    @property
    def interval(self) -> Interval:
        return Interval(min(self.lower, self.upper), self.upper)


def _check_sigma2(sigma_ustar2: float) -> float:
    if sigma_ustar2 < 0.0:
        raise ValueError(f"sigma_ustar2 must be >= 0, got {sigma_ustar2}")
    return max(float(sigma_ustar2), _SCALE_FLOOR)


def pe_tobit_mean(h, j: int, theta, sigma_ustar2: float) -> float:
    """Effect on the censored mean at covariate point h."""
    theta = np.asarray(theta, float)
    h = np.asarray(h, float)
    s = np.sqrt(_check_sigma2(sigma_ustar2))
    return float(norm_cdf(theta @ h / s) * theta[j])


def pe_probability(h, j: int, theta, sigma_ustar2: float) -> float:
    """Effect on the probability of a positive outcome at h."""
    theta = np.asarray(theta, float)
    h = np.asarray(h, float)
    s = np.sqrt(_check_sigma2(sigma_ustar2))
    return float(norm_pdf(theta @ h / s) * theta[j] / s)


def ape_scale2(fit: ReducedFormFit, sigma_ustar2: float) -> float:
    """Squared scale 2*sigma_ustar2 - sigma_u2 + theta1^2 * sigma_v2 of the
    averaged effects; equals sigma_ustar2 + theta1^2 * sigma_vstar2 at any
    latent model consistent with the observables."""
    return (2.0 * sigma_ustar2 - fit.sigma_u2
            + fit.theta1 ** 2 * fit.sigma_v2)


def _ape_index(fit: ReducedFormFit, d: Dataset) -> np.ndarray:
    q = d.zw @ fit.pi
    return fit.theta1 * q + d.w @ fit.theta2


def ape_tobit_mean(fit: ReducedFormFit, d: Dataset, j: int,
                   sigma_ustar2: float) -> float:
    """Averaged effect on the censored mean over the sample."""
    _check_sigma2(sigma_ustar2)
    D = ape_scale2(fit, sigma_ustar2)
    if D <= 0.0:
        raise ValueError(
            f"averaged-effect scale is not positive at sigma_ustar2="
            f"{sigma_ustar2} (scale^2 = {D})")
    r = max(np.sqrt(D), _SCALE_FLOOR)
    return float(np.mean(norm_cdf(_ape_index(fit, d) / r)) * fit.theta[j])


def ape_probability(fit: ReducedFormFit, d: Dataset, j: int,
                    sigma_ustar2: float) -> float:
    """Averaged effect on the probability of a positive outcome."""
    _check_sigma2(sigma_ustar2)
    D = ape_scale2(fit, sigma_ustar2)
    if D <= 0.0:
        raise ValueError(
            f"averaged-effect scale is not positive at sigma_ustar2="
            f"{sigma_ustar2} (scale^2 = {D})")
    r = max(np.sqrt(D), _SCALE_FLOOR)
    return float(np.mean(norm_pdf(_ape_index(fit, d) / r)) * fit.theta[j] / r)


def effect_value(query: EffectQuery, fit: ReducedFormFit, d: Dataset | None,
                 sigma_ustar2: float) -> float:
    """Evaluate the queried effect at one point of the identified set."""
    if query.kind == PE_TOBIT_MEAN:
        return pe_tobit_mean(query.h, query.index, fit.theta, sigma_ustar2)
    if query.kind == PE_PROBABILITY:
        return pe_probability(query.h, query.index, fit.theta, sigma_ustar2)
    if d is None:
        raise ValueError("averaged effect kinds require a dataset")
    if query.kind == APE_TOBIT_MEAN:
        return ape_tobit_mean(fit, d, query.index, sigma_ustar2)
    return ape_probability(fit, d, query.index, sigma_ustar2)


def pe_bounds(query: EffectQuery, fit: ReducedFormFit,
              interval: Interval) -> EffectBounds:
    """Bounds for a pointwise effect over an identified interval.

    The mean kind is monotone in sigma_ustar2, so only the endpoints can be
    extremal.  The probability kind additionally admits an interior
    stationary point at sigma_ustar2 = (theta'h)^2, included as a candidate
    when it falls inside the interval.  `naive` evaluates at the observable
    variance fit.sigma_u2.
    """
    if query.kind not in (PE_TOBIT_MEAN, PE_PROBABILITY):
        raise ValueError(f"pe_bounds handles pointwise kinds, got {query.kind!r}")
    candidates = [interval.lo, interval.hi]
    if query.kind == PE_PROBABILITY:
        t = float(fit.theta @ query.h)
        if interval.lo < t * t < interval.hi:
            candidates.append(t * t)
    vals = [effect_value(query, fit, None, s2) for s2 in candidates]
    i_min = int(np.argmin(vals))
    i_max = int(np.argmax(vals))
    naive = effect_value(query, fit, None, fit.sigma_u2)
    return EffectBounds(
        kind=query.kind, lower=vals[i_min], upper=vals[i_max], naive=naive,
        argmin_sigma2=candidates[i_min], argmax_sigma2=candidates[i_max])


def _ape_domain(fit: ReducedFormFit, interval: Interval) -> Interval:
    """Clip an interval to where the averaged-effect scale is positive."""
    floor = 0.5 * (fit.sigma_u2 - fit.theta1 ** 2 * fit.sigma_v2)
    lo = interval.lo
    if ape_scale2(fit, lo) <= 0.0:
        lo = floor + 1e-10 * max(1.0, fit.sigma_u2)
    if lo > interval.hi:
        raise ValueError(
            "averaged effect undefined on the whole interval: the scale "
            "2*sigma_ustar2 - sigma_u2 + theta1^2*sigma_v2 is nonpositive")
    return Interval(lo, interval.hi)


def ape_bounds(query: EffectQuery, fit: ReducedFormFit, d: Dataset,
               interval: Interval) -> EffectBounds:
    """Bounds for an averaged effect over an identified interval.

    Extremized numerically (grid-seeded golden section); interval
    endpoints are always included as candidates so monotone cases resolve
    exactly.
    """
    if query.kind not in (APE_TOBIT_MEAN, APE_PROBABILITY):
        raise ValueError(f"ape_bounds handles averaged kinds, got {query.kind!r}")
    dom = _ape_domain(fit, interval)

    def val(s2: float) -> float:
        return effect_value(query, fit, d, s2)

    x_min, f_min = golden_minimize(val, dom)
    x_max, f_max = golden_maximize(val, dom)
    candidates = [(dom.lo, val(dom.lo)), (dom.hi, val(dom.hi)),
                  (x_min, f_min), (x_max, f_max)]
    lower = min(candidates, key=lambda c: c[1])
    upper = max(candidates, key=lambda c: c[1])
    naive = val(fit.sigma_u2) if ape_scale2(fit, fit.sigma_u2) > 0 else np.nan
    return EffectBounds(
        kind=query.kind, lower=lower[1], upper=upper[1], naive=float(naive),
        argmin_sigma2=lower[0], argmax_sigma2=upper[0])


# -- analytic parameter gradients -------------------------------------------

def effect_gradient(query: EffectQuery, fit: ReducedFormFit,
                    d: Dataset | None, sigma_ustar2: float,
                    naive: bool = False):
    """Gradient of the effect with respect to the stacked parameter vector.

    Returns (value, grad, per_obs) where grad is indexed like fit.params
    and per_obs holds the individual averaged-effect terms (None for
    pointwise kinds); per_obs enters the influence-function variance of
    averaged effects.  With naive=True the evaluation point follows
    sigma_u2 (adding its derivative channel), matching the naive
    estimator; otherwise sigma_ustar2 is held fixed.
    """
    p = fit.n_params
    grad = np.zeros(p)
    j = query.index
    iu2, iv2 = fit.idx_sigma_u2, fit.idx_sigma_v2
    if query.kind in (PE_TOBIT_MEAN, PE_PROBABILITY):
        h = np.asarray(query.h, float)
        theta = fit.theta
        s2 = _check_sigma2(sigma_ustar2)
        s = np.sqrt(s2)
        t = float(theta @ h)
        u = t / s
        cdf_u, pdf_u = float(norm_cdf(u)), float(norm_pdf(u))
        k = 1 + fit.d_w
        if query.kind == PE_TOBIT_MEAN:
            val = cdf_u * theta[j]
            grad[:k] = pdf_u * (h / s) * theta[j]
            grad[j] += cdf_u
        else:
            val = pdf_u * theta[j] / s
            grad[:k] = -u * pdf_u * (h / s) * theta[j] / s
            grad[j] += pdf_u / s
        if naive:
            # evaluation point tracks sigma_u2, adding a scale channel;
            # the density's decay beats every polynomial factor, so a zero
            # density means a zero derivative even where 1/s2 overflows
            if pdf_u == 0.0:
                dval_ds2 = 0.0
            elif query.kind == PE_TOBIT_MEAN:
                dval_ds2 = -pdf_u * u * theta[j] / (2.0 * s2)
            else:
                dval_ds2 = pdf_u * (u * u - 1.0) * theta[j] / (2.0 * s2 * s)
            grad[iu2] += dval_ds2
        return float(val), grad, None

    if d is None:
        raise ValueError("averaged effect kinds require a dataset")
    theta = fit.theta
    theta1 = fit.theta1
    s2 = float(sigma_ustar2)
    D = ape_scale2(fit, s2)
    if D <= 0.0:
        raise ValueError(f"averaged-effect scale not positive (scale^2={D})")
    r = np.sqrt(D)
    q = d.zw @ fit.pi
    idx = theta1 * q + d.w @ fit.theta2
    kk = idx / r
    pdf_k = norm_pdf(kk)
    n = d.n
    k_t = 1 + fit.d_w
    k_pi = fit.d_z + fit.d_w
    # dk/dxi = didx/dxi / r - idx * dD/dxi / (2 r^3); dD entries below
    dD_theta1 = 2.0 * theta1 * fit.sigma_v2
    dD_su2 = -1.0 if not naive else 1.0  # naive: D = sigma_u2 + th1^2 sv2
    dD_sv2 = theta1 ** 2

    if query.kind == APE_TOBIT_MEAN:
        a = norm_cdf(kk) * theta[j]
        val = float(np.mean(a))
        # chain through k only: d mean Phi(k) = mean(phi(k) dk)
        c1 = pdf_k / r
        c2 = pdf_k * idx / (2.0 * D * r)  # multiplies dD
        grad[0] = float(np.mean(c1 * q - c2 * dD_theta1)) * theta[j]
        grad[1:k_t] = (c1[:, None] * d.w).mean(axis=0) * theta[j]
        grad[k_t:k_t + k_pi] = (c1[:, None] * d.zw).mean(axis=0) * theta1 * theta[j]
        grad[iu2] = float(np.mean(-c2 * dD_su2)) * theta[j]
        grad[iv2] = float(np.mean(-c2 * dD_sv2)) * theta[j]
        grad[j] += float(np.mean(norm_cdf(kk)))
    else:
        a = pdf_k * theta[j] / r
        val = float(np.mean(a))
        # a_i = phi(k_i) theta_j / r: both k and the explicit 1/r move
        g1 = -kk * pdf_k / r          # d a_i / d k_i  (without theta_j)
        c1 = g1 / r                   # multiplies didx
        c2 = g1 * idx / (2.0 * D * r) + pdf_k / (2.0 * D * r)  # multiplies dD
        grad[0] = float(np.mean(c1 * q - c2 * dD_theta1)) * theta[j]
        grad[1:k_t] = (c1[:, None] * d.w).mean(axis=0) * theta[j]
        grad[k_t:k_t + k_pi] = (c1[:, None] * d.zw).mean(axis=0) * theta1 * theta[j]
        grad[iu2] = float(np.mean(-c2 * dD_su2)) * theta[j]
        grad[iv2] = float(np.mean(-c2 * dD_sv2)) * theta[j]
        grad[j] += float(np.mean(pdf_k / r))
    return val, grad, np.asarray(a, float)
