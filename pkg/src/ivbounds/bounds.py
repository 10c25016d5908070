"""Sharp identified set for the latent heterogeneity variance.

With classical measurement error eps on the endogenous regressor, the
observable error pair (U, V) = (Ustar - theta1 * eps, Vstar + eps) has
second moments

    sigma_u2 = sigma_ustar2 + theta1^2 * sigma_eps2
    sigma_v2 = sigma_vstar2 + sigma_eps2
    sigma_uv = sigma_ustar_vstar - theta1 * sigma_eps2

which are point identified, while the latent split is not.  The set of
latent heterogeneity variances consistent with the observables is the
interval computed by `sigma_ustar_interval`; `implied_structural` maps an
interior point back to the full latent parameter triple, and
`intersect_component_intervals` combines the per-component intervals of a
finite-mixture error model.
"""

from __future__ import annotations

import numpy as np

from .data import Interval, StructuralParams

__all__ = [
    "EmptyIntersectionError",
    "xi_candidates",
    "sigma_ustar_interval",
    "epsilon_upper",
    "implied_structural",
    "reduced_form_moments",
    "intersect_component_intervals",
]


class EmptyIntersectionError(ValueError):
    """Per-component identified intervals have no common point."""


def _check_observables(sigma_u2: float, sigma_v2: float, sigma_uv: float):
    if sigma_u2 <= 0.0 or sigma_v2 <= 0.0:
        raise ValueError(
            f"variances must be positive: sigma_u2={sigma_u2}, sigma_v2={sigma_v2}")
    rho2 = sigma_uv * sigma_uv / (sigma_u2 * sigma_v2)
    if rho2 >= 1.0:
        raise ValueError(
            f"|corr(U, V)| must be < 1, got |rho| = {np.sqrt(rho2)}")


def xi_candidates(theta1: float, sigma_u2: float, sigma_v2: float,
                  sigma_uv: float) -> tuple[float, float]:
    """The two lower-bound candidates (xi1, xi2) for the latent variance.

    xi1 enforces a positive-semidefinite latent covariance matrix; xi2
    enforces a nonnegative latent first-stage error variance.  The xi1
    denominator equals Var(theta1 * V + U) and is positive whenever
    |corr(U, V)| < 1, which `_check_observables` guarantees.
    """
    _check_observables(sigma_u2, sigma_v2, sigma_uv)
    den = sigma_v2 * theta1 * theta1 + 2.0 * sigma_uv * theta1 + sigma_u2
    xi1 = (theta1 * sigma_uv + sigma_u2) ** 2 / den
    xi2 = sigma_u2 - theta1 * theta1 * sigma_v2
    return float(xi1), float(xi2)


def sigma_ustar_interval(theta1: float, sigma_u2: float, sigma_v2: float,
                         sigma_uv: float) -> Interval:
    """Sharp bounds [max(xi1, xi2), sigma_u2] for the latent variance.

    Every point of the interval is attainable by a valid latent model and
    no point outside is.  With theta1 == 0 measurement error does not
    contaminate the outcome equation and the set collapses to the
    singleton {sigma_u2}.  The lower endpoint is always >= 0.
    """
    if theta1 == 0.0:
        _check_observables(sigma_u2, sigma_v2, sigma_uv)
        return Interval(sigma_u2, sigma_u2)
    xi1, xi2 = xi_candidates(theta1, sigma_u2, sigma_v2, sigma_uv)
    lo = max(xi1, xi2, 0.0)
    return Interval(min(lo, sigma_u2), float(sigma_u2))


def epsilon_upper(theta1: float, sigma_u2: float, sigma_v2: float,
                  sigma_uv: float) -> float:
    """Largest measurement-error variance consistent with the observables.

    min of the PSD constraint on the latent covariance and the latent
    first-stage variance being nonnegative (sigma_eps2 <= sigma_v2).
    """
    _check_observables(sigma_u2, sigma_v2, sigma_uv)
    den = sigma_v2 * theta1 * theta1 + 2.0 * sigma_uv * theta1 + sigma_u2
    cap = (sigma_u2 * sigma_v2 - sigma_uv * sigma_uv) / den
    return float(min(cap, sigma_v2))


def implied_structural(sigma_ustar2: float, theta1: float, sigma_u2: float,
                       sigma_v2: float, sigma_uv: float) -> StructuralParams:
    """Latent parameters generating the observables at a given variance.

    For sigma_ustar2 in the identified interval, the construction

        sigma_eps2       = (sigma_u2 - sigma_ustar2) / theta1^2
        sigma_vstar2     = sigma_v2 - sigma_eps2
        sigma_ustar_vstar = sigma_uv + (sigma_u2 - sigma_ustar2) / theta1

    reproduces the observables exactly and yields a PSD latent covariance.
    Requires theta1 != 0 (otherwise the set is a singleton and eps is
    unidentified) and sigma_ustar2 inside the interval.
    """
    if theta1 == 0.0:
        raise ValueError(
            "latent split is undefined at theta1 == 0; the identified set "
            "is the singleton {sigma_u2}")
    iv = sigma_ustar_interval(theta1, sigma_u2, sigma_v2, sigma_uv)
    tol = 1e-9 * max(1.0, sigma_u2)
    if not iv.contains(sigma_ustar2, tol=tol):
        raise ValueError(
            f"sigma_ustar2={sigma_ustar2} lies outside the identified "
            f"interval [{iv.lo}, {iv.hi}]")
    gap = max(sigma_u2 - sigma_ustar2, 0.0)
    sigma_eps2 = gap / (theta1 * theta1)
    return StructuralParams(
        sigma_ustar2=float(sigma_ustar2),
        sigma_vstar2=float(sigma_v2 - sigma_eps2),
        sigma_ustar_vstar=float(sigma_uv + gap / theta1),
        sigma_eps2=float(sigma_eps2))


def reduced_form_moments(s: StructuralParams, theta1: float
                         ) -> tuple[float, float, float]:
    """Forward map from latent parameters to observable (U, V) moments."""
    sigma_u2 = s.sigma_ustar2 + theta1 * theta1 * s.sigma_eps2
    sigma_v2 = s.sigma_vstar2 + s.sigma_eps2
    sigma_uv = s.sigma_ustar_vstar - theta1 * s.sigma_eps2
    return float(sigma_u2), float(sigma_v2), float(sigma_uv)


def intersect_component_intervals(components, theta1: float) -> Interval:
    """Intersection of per-component identified intervals.

    `components` is an iterable of (sigma_u2, sigma_v2, sigma_uv) triples,
    one per mixture component sharing the same latent heterogeneity
    variance.  Raises ValueError when the intervals are incompatible
    (empty intersection), which indicates mixture misspecification.
    """
    lo = -np.inf
    hi = np.inf
    triples = list(components)
    if not triples:
        raise ValueError("need at least one component")
    for (su2, sv2, suv) in triples:
        iv = sigma_ustar_interval(theta1, su2, sv2, suv)
        lo = max(lo, iv.lo)
        hi = min(hi, iv.hi)
    if lo > hi:
        raise EmptyIntersectionError(
            f"component intervals do not intersect (lower {lo} > upper {hi}); "
            "the mixture components are mutually incompatible")
    return Interval(float(lo), float(hi))
