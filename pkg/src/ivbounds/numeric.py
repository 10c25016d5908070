"""Numerical primitives: normal distribution helpers, quantiles of the maximum
of two correlated normals, and the two optimizers used by the estimation code.

All routines are deterministic.  Normal cdf/pdf/quantile are thin wrappers
around the erf-based implementations in :mod:`scipy.special`, which deliver
absolute error below 1e-15; the wrappers exist so every caller in the package
goes through a single, tested surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

__all__ = [
    "NumericalError",
    "ConvergenceError",
    "NormalParams",
    "BivariateNormalParams",
    "norm_pdf",
    "norm_cdf",
    "norm_logpdf",
    "norm_logcdf",
    "norm_quantile",
    "max2_normal_cdf",
    "max2_normal_quantile",
    "golden_minimize",
    "golden_maximize",
    "numeric_gradient",
    "numeric_hessian",
    "quasi_newton_maximize",
]

_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class NumericalError(ArithmeticError):
    """A numerical routine hit a non-finite value or an invalid input."""


class ConvergenceError(RuntimeError):
    """An iterative routine failed to converge; carries the last iterate."""

    def __init__(self, message: str, last_x: np.ndarray | None = None):
        super().__init__(message)
        self.last_x = None if last_x is None else np.asarray(last_x, float)


@dataclass(frozen=True)
class NormalParams:
    """Mean and variance of a univariate normal distribution."""

    mean: float
    variance: float

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.variance)):
            raise NumericalError("normal parameters must be finite")
        if self.variance < 0.0:
            raise NumericalError(f"variance must be >= 0, got {self.variance}")

    def pdf(self, x):
        s = math.sqrt(self.variance)
        return norm_pdf((np.asarray(x, float) - self.mean) / s) / s


@dataclass(frozen=True)
class BivariateNormalParams:
    """Mean vector and 2x2 covariance of a bivariate normal distribution.

    The covariance must be symmetric with eigenvalues >= -1e-12 (tiny negative
    values from floating-point round-off are tolerated, anything worse raises).
    """

    mean: tuple[float, float]
    cov: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.cov, float)
        if cov.shape != (2, 2):
            raise NumericalError(f"cov must be 2x2, got shape {cov.shape}")
        if not np.all(np.isfinite(cov)) or not np.all(np.isfinite(self.mean)):
            raise NumericalError("bivariate normal parameters must be finite")
        if abs(cov[0, 1] - cov[1, 0]) > 1e-12 * (1.0 + abs(cov[0, 1])):
            raise NumericalError("cov must be symmetric")
        eigs = np.linalg.eigvalsh(cov)
        if eigs.min() < -1e-12 * max(1.0, eigs.max()):
            raise NumericalError(f"cov must be PSD, eigenvalues {eigs}")
        object.__setattr__(self, "cov", cov)

    def logpdf(self, u, v):
        """Log density at points (u, v); broadcasts over arrays."""
        u = np.asarray(u, float) - self.mean[0]
        v = np.asarray(v, float) - self.mean[1]
        a, b, c = self.cov[0, 0], self.cov[0, 1], self.cov[1, 1]
        det = a * c - b * b
        if det <= 0.0:
            raise NumericalError("cov is singular; logpdf undefined")
        quad = (c * u * u - 2.0 * b * u * v + a * v * v) / det
        return -math.log(2.0 * math.pi) - 0.5 * math.log(det) - 0.5 * quad

    def pdf(self, u, v):
        return np.exp(self.logpdf(u, v))


def norm_pdf(x):
    x = np.asarray(x, float)
    return np.exp(-0.5 * x * x - _LOG_SQRT_2PI)


def norm_logpdf(x):
    x = np.asarray(x, float)
    return -0.5 * x * x - _LOG_SQRT_2PI


def norm_cdf(x):
    return special.ndtr(np.asarray(x, float))


def norm_logcdf(x):
    return special.log_ndtr(np.asarray(x, float))


def norm_quantile(p):
    """Inverse standard normal cdf; p must lie strictly inside (0, 1)."""
    p = np.asarray(p, float)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise NumericalError(f"quantile requires 0 < p < 1, got {p}")
    return special.ndtri(p)


def _mills_ratio(x):
    """phi(x)/Phi(x), computed in log space so the lower tail stays finite."""
    x = np.asarray(x, float)
    return np.exp(norm_logpdf(x) - norm_logcdf(x))


# -- maximum of two standard normals ---------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(96)


def max2_normal_cdf(c: float, rho: float) -> float:
    """P(max(A, B) <= c) for standard normal (A, B) with correlation rho.

    Uses the one-dimensional reduction
    P = Phi(c)^2 + (1/2pi) * int_0^{asin(rho)} exp(-c^2 / (1 + sin u)) du,
    whose integrand is smooth and bounded for every rho in [-1, 1]; the
    integral is evaluated by fixed 96-point Gauss-Legendre quadrature.
    """
    if not -1.0 <= rho <= 1.0:
        raise NumericalError(f"correlation must lie in [-1, 1], got {rho}")
    base = float(norm_cdf(c)) ** 2
    upper = math.asin(rho)
    if upper == 0.0:
        return base
    # map nodes from [-1, 1] to [0, upper]
    half = 0.5 * upper
    u = half * (_GL_NODES + 1.0)
    vals = np.exp(-c * c / (1.0 + np.sin(u)))
    integral = half * float(np.dot(_GL_WEIGHTS, vals))
    return base + integral / (2.0 * math.pi)


def max2_normal_quantile(p: float, rho: float) -> float:
    """Quantile c with P(max(A, B) <= c) = p for correlated standard normals.

    Root-finds the deterministic cdf above; absolute error is far below 1e-8.
    Requires 0 < p < 1 and -1 <= rho <= 1.
    """
    if not 0.0 < p < 1.0:
        raise NumericalError(f"quantile requires 0 < p < 1, got {p}")
    if not -1.0 <= rho <= 1.0:
        raise NumericalError(f"correlation must lie in [-1, 1], got {rho}")
    # max(A, B) >= A, so c >= ndtri(p); Frechet lower bound gives the cap
    lo = float(norm_quantile(p))
    hi = float(norm_quantile(0.5 + 0.5 * p))
    if rho >= 1.0:
        return lo
    lo, hi = lo - 1e-9, hi + 1e-9
    return float(optimize.brentq(
        lambda c: max2_normal_cdf(c, rho) - p, lo, hi, xtol=1e-12, rtol=1e-14))


# -- univariate minimization ------------------------------------------------

_INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def golden_minimize(f, interval, tol: float = 1e-8, grid: int = 200):
    """Minimize a scalar function on a closed interval.

    Seeds with a uniform grid of `grid` points, then refines the best
    bracket by golden-section search until its width is below `tol`.
    `interval` is either an object with .lo/.hi attributes or a (lo, hi)
    pair.  Returns (argmin, fmin).  Degenerate intervals (lo == hi) return
    the single point.  A non-finite function value raises NumericalError
    carrying the offending abscissa.
    """
    lo, hi = _interval_pair(interval)
    if hi < lo:
        raise NumericalError(f"interval endpoints out of order: [{lo}, {hi}]")

    def feval(x):
        v = float(f(x))
        if not math.isfinite(v):
            raise NumericalError(f"non-finite objective value at x={x!r}")
        return v

    if hi == lo:
        return lo, feval(lo)

    xs = np.linspace(lo, hi, grid)
    fs = np.array([feval(x) for x in xs])
    i = int(np.argmin(fs))
    a = xs[max(i - 1, 0)]
    b = xs[min(i + 1, grid - 1)]

    # golden-section refinement on [a, b]
    x1 = b - _INV_GOLDEN * (b - a)
    x2 = a + _INV_GOLDEN * (b - a)
    f1, f2 = feval(x1), feval(x2)
    while b - a > tol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _INV_GOLDEN * (b - a)
            f1 = feval(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _INV_GOLDEN * (b - a)
            f2 = feval(x2)
    xbest = 0.5 * (a + b)
    fbest = feval(xbest)
    # the grid best is kept if refinement did not improve on it
    if fs[i] < fbest:
        return float(xs[i]), float(fs[i])
    return float(xbest), fbest


def golden_maximize(f, interval, tol: float = 1e-8, grid: int = 200):
    """Maximize f on the interval; see golden_minimize."""
    x, fneg = golden_minimize(lambda t: -f(t), interval, tol=tol, grid=grid)
    return x, -fneg


def _interval_pair(interval):
    if hasattr(interval, "lo") and hasattr(interval, "hi"):
        return float(interval.lo), float(interval.hi)
    lo, hi = interval
    return float(lo), float(hi)


# -- derivatives and quasi-Newton maximization ------------------------------

_CBRT_EPS = float(np.finfo(float).eps) ** (1.0 / 3.0)


def numeric_gradient(f, x, step: float | None = None) -> np.ndarray:
    """Central-difference gradient of scalar f at x.

    Default step is 1e-5 * (1 + |x_i|) per coordinate, which balances
    truncation against round-off for the delta-method uses in this package.
    """
    x = np.asarray(x, float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = step if step is not None else 1e-5 * (1.0 + abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def numeric_hessian(f, x) -> np.ndarray:
    """Central-difference Hessian with steps eps^(1/3) * max(1, |x_i|)."""
    x = np.asarray(x, float)
    n = x.size
    h = _CBRT_EPS * np.maximum(1.0, np.abs(x))
    H = np.empty((n, n))
    f0 = f(x)
    for i in range(n):
        xp = x.copy(); xp[i] += h[i]
        xm = x.copy(); xm[i] -= h[i]
        H[i, i] = (f(xp) - 2.0 * f0 + f(xm)) / (h[i] * h[i])
        for j in range(i + 1, n):
            xpp = x.copy(); xpp[i] += h[i]; xpp[j] += h[j]
            xpm = x.copy(); xpm[i] += h[i]; xpm[j] -= h[j]
            xmp = x.copy(); xmp[i] -= h[i]; xmp[j] += h[j]
            xmm = x.copy(); xmm[i] -= h[i]; xmm[j] -= h[j]
            H[i, j] = H[j, i] = (
                f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (4.0 * h[i] * h[j])
    return H


def quasi_newton_maximize(f, x0, grad=None, max_iter: int = 500,
                          gtol: float = 1e-8, callback=None):
    """Maximize a smooth function with BFGS plus a Newton polish step.

    Parameters
    ----------
    f : callable
        Objective, mapping a parameter vector to a float.
    x0 : array_like
        Starting point.
    grad : callable, optional
        Gradient of f; central differences are used when absent.
    max_iter : int
        Iteration cap for the BFGS stage.
    gtol : float
        Gradient sup-norm target passed to the BFGS stage.
    callback : callable, optional
        Called as callback(x, fval) at every accepted BFGS iterate.

    Returns
    -------
    (x, hess) : argmax and the central-difference Hessian of f there.

    Raises
    ------
    ConvergenceError
        If the gradient sup-norm at the solution exceeds 1e-6 * (1 + |f|)
        or the Hessian estimate is not negative definite (a flat objective
        lands here).  The error carries the last iterate.
    """
    x0 = np.asarray(x0, float)

    def fneg(x):
        v = f(x)
        if not np.isfinite(v):
            return np.inf
        return -v

    cb = None
    if callback is not None:
        cb = lambda xk: callback(np.asarray(xk, float), f(xk))
    jac = (lambda x: -np.asarray(grad(x), float)) if grad is not None else None
    res = optimize.minimize(
        fneg, x0, jac=jac if jac is not None else "3-point", method="BFGS",
        callback=cb, options={"gtol": gtol, "maxiter": max_iter})
    x = np.asarray(res.x, float)

    def gradient_at(y):
        if grad is not None:
            return np.asarray(grad(y), float)
        return numeric_gradient(f, y, step=None)

    H = numeric_hessian(f, x)
    g = gradient_at(x)
    # Newton polish: cheap extra accuracy once BFGS has brought us close
    for _ in range(5):
        if not np.all(np.isfinite(H)) or not np.all(np.isfinite(g)):
            break
        try:
            dx = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            break
        x_new = x + dx
        f_new = f(x_new)
        if not np.isfinite(f_new) or f_new < f(x) - 1e-12 * (1.0 + abs(f_new)):
            break
        g_new = gradient_at(x_new)
        if np.max(np.abs(g_new)) >= np.max(np.abs(g)):
            break
        x, g = x_new, g_new
        H = numeric_hessian(f, x)

    fval = f(x)
    if np.max(np.abs(g)) > 1e-6 * (1.0 + abs(fval)):
        raise ConvergenceError(
            f"gradient sup-norm {np.max(np.abs(g)):.3e} above tolerance "
            f"after {res.nit} iterations", last_x=x)
    eigs = np.linalg.eigvalsh(0.5 * (H + H.T))
    if eigs.max() > -1e-10 * max(1.0, abs(eigs.min())):
        raise ConvergenceError(
            f"Hessian at solution is not negative definite (max eigenvalue "
            f"{eigs.max():.3e}); objective may be flat", last_x=x)
    return x, H
