"""Shared domain model: dataset container, validation, fitted reduced-form
parameters, structural parameter triples, intervals, and effect queries.

Conventions used throughout the package
---------------------------------------
The outcome equation is  Y = max(theta1 * Xstar + theta2'W + Ustar, 0)  for
the censored model, or the indicator of the latent index being positive for
the binary model.  Xstar is observed only through X = Xstar + eps with
classical measurement error eps.  The first stage is
X = pi1'Z + pi2'W + V.  "Reduced form" refers to the observable-error
parameters (sigma_u2, sigma_v2, sigma_uv) of (U, V) where U = Ustar -
theta1 * eps and V = Vstar + eps; "structural" refers to the latent
(sigma_ustar2, sigma_vstar2, sigma_ustar_vstar, sigma_eps2).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "DataError",
    "Dataset",
    "validate",
    "Interval",
    "StructuralParams",
    "ReducedFormFit",
    "EffectQuery",
    "PE_TOBIT_MEAN",
    "PE_PROBABILITY",
    "APE_TOBIT_MEAN",
    "APE_PROBABILITY",
    "EFFECT_KINDS",
]

PE_TOBIT_MEAN = "pe_tobit_mean"
PE_PROBABILITY = "pe_probability"
APE_TOBIT_MEAN = "ape_tobit_mean"
APE_PROBABILITY = "ape_probability"
EFFECT_KINDS = (PE_TOBIT_MEAN, PE_PROBABILITY, APE_TOBIT_MEAN, APE_PROBABILITY)

_MIN_EXTRA_OBS = 3


class DataError(ValueError):
    """Invalid input data; `code` identifies the specific failure."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DataError("bad_shape", f"{name} must be 1- or 2-dimensional")
    return a


@dataclass(frozen=True)
class Dataset:
    """Observations for one model fit.

    y : outcome, shape (n,).  x : mismeasured endogenous regressor, (n,).
    w : included exogenous covariates, (n, d_w).  z : excluded instruments,
    (n, d_z).  `n_dropped` counts rows removed by validation.
    """

    y: np.ndarray
    x: np.ndarray
    w: np.ndarray
    z: np.ndarray
    n_dropped: int = 0
    validated_kind: str | None = field(default=None, compare=False)

    def __post_init__(self):
        y = np.asarray(self.y, float).ravel()
        x = np.asarray(self.x, float).ravel()
        w = _as_matrix(self.w, "w")
        z = _as_matrix(self.z, "z")
        n = y.shape[0]
        if not (x.shape[0] == n and w.shape[0] == n and z.shape[0] == n):
            raise DataError(
                "length_mismatch",
                f"y, x, w, z must share a length; got {n}, {x.shape[0]}, "
                f"{w.shape[0]}, {z.shape[0]}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d_w(self) -> int:
        return self.w.shape[1]

    @property
    def d_z(self) -> int:
        return self.z.shape[1]

    @property
    def zw(self) -> np.ndarray:
        """First-stage regressor matrix [z, w], shape (n, d_z + d_w)."""
        return np.hstack([self.z, self.w])


def validate(d: Dataset, kind: str) -> Dataset:
    """Validate and clean a dataset for the given model kind.

    Drops rows containing non-finite values, then checks: enough
    observations, outcome support (y >= 0 with both censored and uncensored
    rows for "tobit"; y in {0, 1} with both classes for "probit"), and full
    column rank of [z, w].  Idempotent: validating a validated dataset is a
    no-op.  Raises DataError with a distinct code per failure mode.
    """
    if kind not in ("tobit", "probit"):
        raise DataError("bad_kind", f"model kind must be tobit or probit, got {kind!r}")
    keep = (np.isfinite(d.y) & np.isfinite(d.x)
            & np.all(np.isfinite(d.w), axis=1)
            & np.all(np.isfinite(d.z), axis=1))
    dropped = int(d.n - keep.sum())
    if dropped:
        d = Dataset(d.y[keep], d.x[keep], d.w[keep], d.z[keep],
                    n_dropped=d.n_dropped + dropped)
    n_min = d.d_w + d.d_z + 2 + _MIN_EXTRA_OBS
    if d.n < n_min:
        raise DataError(
            "too_small", f"need at least {n_min} complete rows, have {d.n}")
    if kind == "tobit":
        if np.any(d.y < 0.0):
            raise DataError("negative_outcome",
                            "censored outcome must satisfy y >= 0")
        if not np.any(d.y == 0.0):
            raise DataError("no_censored",
                            "no censored observations (y == 0) present")
        if not np.any(d.y > 0.0):
            raise DataError("no_uncensored",
                            "no uncensored observations (y > 0) present")
    else:
        vals = np.unique(d.y)
        if not np.all(np.isin(vals, (0.0, 1.0))):
            raise DataError("not_binary", "binary outcome must lie in {0, 1}")
        if vals.size < 2:
            raise DataError("one_class",
                            "binary outcome takes a single value")
    sv = np.linalg.svd(d.zw, compute_uv=False)
    if sv.size and sv.min() <= 1e-10 * sv.max():
        raise DataError("rank_deficient",
                        "[z, w] is rank deficient; drop collinear columns")
    if d.validated_kind == kind:
        return d
    return replace(d, validated_kind=kind)


@dataclass(frozen=True)
class Interval:
    """Closed interval [lo, hi] with lo <= hi."""

    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValueError(f"interval endpoints must be finite: [{lo}, {hi}]")
        if lo > hi:
            raise ValueError(f"interval endpoints out of order: [{lo}, {hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= x <= self.hi + tol

    def is_singleton(self, tol: float = 0.0) -> bool:
        return self.width <= tol


@dataclass(frozen=True)
class StructuralParams:
    """Latent second-moment parameters implied by one point of the
    identified set: heterogeneity variance, first-stage error variance,
    their covariance, and the measurement-error variance."""

    sigma_ustar2: float
    sigma_vstar2: float
    sigma_ustar_vstar: float
    sigma_eps2: float

    def __post_init__(self):
        for name in ("sigma_ustar2", "sigma_vstar2", "sigma_eps2"):
            v = getattr(self, name)
            if v < -1e-12:
                raise ValueError(f"{name} must be >= 0, got {v}")

    def is_valid_covariance(self, tol: float = 1e-12) -> bool:
        """True when the implied (Ustar, Vstar) covariance matrix is PSD."""
        det = (self.sigma_ustar2 * self.sigma_vstar2
               - self.sigma_ustar_vstar ** 2)
        return det >= -tol * max(1.0, self.sigma_ustar2 * self.sigma_vstar2)


class EffectQuery:
    """A request for one marginal effect.

    kind : one of EFFECT_KINDS.  index : position of the covariate whose
    effect is requested, 0 for the endogenous regressor and 1 + j for
    column j of w.  h : evaluation point (x, w) for pointwise kinds;
    ignored by the averaged kinds.
    """

    def __init__(self, kind: str, index: int = 0, h=None):
        if kind not in EFFECT_KINDS:
            raise ValueError(f"unknown effect kind {kind!r}")
        if index < 0:
            raise ValueError("covariate index must be >= 0")
        self.kind = kind
        self.index = int(index)
        self.h = None if h is None else np.asarray(h, float).ravel()
        if self.kind in (PE_TOBIT_MEAN, PE_PROBABILITY) and self.h is None:
            raise ValueError(f"effect kind {kind!r} requires an evaluation point h")

    @property
    def is_average(self) -> bool:
        return self.kind in (APE_TOBIT_MEAN, APE_PROBABILITY)

    @property
    def is_probability(self) -> bool:
        return self.kind in (PE_PROBABILITY, APE_PROBABILITY)

    def __repr__(self):
        return f"EffectQuery(kind={self.kind!r}, index={self.index}, h={self.h})"


@dataclass
class ReducedFormFit:
    """Estimated observable-error model.

    Parameter vector order used by `params` and `vcov`:
    (theta1, theta2[0..d_w), pi1[0..d_z), pi2[0..d_w),
     sigma_u2, sigma_v2, sigma_uv).
    `influence` optionally holds per-row influence contributions phi_i with
    hat(psi) - psi ~ sum_i phi_i, for averaged-effect standard errors.
    """

    model_kind: str
    method: str
    theta1: float
    theta2: np.ndarray
    pi1: np.ndarray
    pi2: np.ndarray
    sigma_u2: float
    sigma_v2: float
    sigma_uv: float
    vcov: np.ndarray
    n_obs: int
    loglik: float | None = None
    influence: np.ndarray | None = None
    n_dropped: int = 0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta2 = np.asarray(self.theta2, float).ravel()
        self.pi1 = np.asarray(self.pi1, float).ravel()
        self.pi2 = np.asarray(self.pi2, float).ravel()
        self.vcov = np.asarray(self.vcov, float)
        p = self.n_params
        if self.vcov.shape != (p, p):
            raise ValueError(
                f"vcov shape {self.vcov.shape} does not match {p} parameters")
        if self.sigma_u2 <= 0.0 or self.sigma_v2 <= 0.0:
            raise ValueError("sigma_u2 and sigma_v2 must be positive")
        if abs(self.rho_uv) >= 1.0:
            raise ValueError(
                f"observable correlation must satisfy |rho| < 1, got {self.rho_uv}")
        asym = np.max(np.abs(self.vcov - self.vcov.T))
        if asym > 1e-8 * (1.0 + np.max(np.abs(self.vcov))):
            raise ValueError("vcov must be symmetric")

    @property
    def d_w(self) -> int:
        return self.theta2.shape[0]

    @property
    def d_z(self) -> int:
        return self.pi1.shape[0]

    @property
    def n_params(self) -> int:
        return 1 + self.d_w + self.d_z + self.d_w + 3

    @property
    def theta(self) -> np.ndarray:
        """Outcome coefficients (theta1, theta2)."""
        return np.concatenate([[self.theta1], self.theta2])

    @property
    def pi(self) -> np.ndarray:
        """First-stage coefficients on [z, w]."""
        return np.concatenate([self.pi1, self.pi2])

    @property
    def rho_uv(self) -> float:
        return self.sigma_uv / np.sqrt(self.sigma_u2 * self.sigma_v2)

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([
            [self.theta1], self.theta2, self.pi1, self.pi2,
            [self.sigma_u2, self.sigma_v2, self.sigma_uv]])

    # index helpers into the stacked parameter vector
    @property
    def idx_sigma_u2(self) -> int:
        return 1 + self.d_w + self.d_z + self.d_w

    @property
    def idx_sigma_v2(self) -> int:
        return self.idx_sigma_u2 + 1

    @property
    def idx_sigma_uv(self) -> int:
        return self.idx_sigma_u2 + 2

    def param_names(self) -> list[str]:
        names = ["theta1"]
        names += [f"theta2_{j}" for j in range(self.d_w)]
        names += [f"pi1_{j}" for j in range(self.d_z)]
        names += [f"pi2_{j}" for j in range(self.d_w)]
        names += ["sigma_u2", "sigma_v2", "sigma_uv"]
        return names

    def se(self) -> np.ndarray:
        """Standard errors of the stacked parameter vector."""
        var = np.clip(np.diag(self.vcov), 0.0, None)
        return np.sqrt(var)

    def replace_params(self, psi: np.ndarray) -> "ReducedFormFit":
        """Copy of this fit with the stacked parameter vector set to psi.

        Used by delta-method code paths that re-evaluate functionals at
        perturbed parameters; vcov and influence are carried over verbatim.
        """
        psi = np.asarray(psi, float)
        d_w, d_z = self.d_w, self.d_z
        out = ReducedFormFit.__new__(ReducedFormFit)
        out.__dict__.update(self.__dict__)
        out.theta1 = float(psi[0])
        out.theta2 = psi[1:1 + d_w].copy()
        out.pi1 = psi[1 + d_w:1 + d_w + d_z].copy()
        out.pi2 = psi[1 + d_w + d_z:1 + d_w + d_z + d_w].copy()
        out.sigma_u2 = float(psi[self.idx_sigma_u2])
        out.sigma_v2 = float(psi[self.idx_sigma_v2])
        out.sigma_uv = float(psi[self.idx_sigma_uv])
        return out
