"""Two-step and joint maximum-likelihood estimation of the observable-error
model with jointly normal errors.

Two-step: OLS of x on [z, w] gives first-stage residuals vhat; the second
stage runs a censored (or binary) MLE of y on [x, w, vhat].  Including the
residual as a regressor absorbs the endogenous part of the error, so the
second-stage disturbance is independent of the regressors.  The covariance
of the full parameter vector stacks the first-stage moment conditions with
the second-stage score and applies the sandwich formula for sequential
estimators, which accounts for vhat being estimated.

Joint MLE: maximizes the likelihood of (y, x) given (z, w), factored as the
conditional outcome density times the normal first-stage density.  The
covariance is the inverse negative numerical Hessian mapped to the reported
parameterization.

The binary model normalizes Var(U) = 1; reported coefficients and moments
are on that scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, DataError, ReducedFormFit, validate
from .numeric import (ConvergenceError, NumericalError, norm_logcdf,
                      norm_logpdf, numeric_gradient, quasi_newton_maximize)

__all__ = [
    "FirstStageFit",
    "first_stage",
    "tobit_loglik",
    "tobit_score",
    "probit_loglik",
    "probit_score",
    "joint_loglik",
    "joint_score",
    "fit_two_step",
    "fit_joint_mle",
]

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
_RHO_CAP = 1.0 - 1e-6


@dataclass
class FirstStageFit:
    """OLS fit of the endogenous regressor on [z, w]."""

    pi: np.ndarray
    resid: np.ndarray
    fitted: np.ndarray
    sigma_v2: float


def first_stage(d: Dataset) -> FirstStageFit:
    """First-stage OLS; sigma_v2 is the mean squared residual."""
    zw = d.zw
    pi, *_ = np.linalg.lstsq(zw, d.x, rcond=None)
    fitted = zw @ pi
    resid = d.x - fitted
    return FirstStageFit(pi=pi, resid=resid, fitted=fitted,
                         sigma_v2=float(np.mean(resid ** 2)))


def _check_rows(vals: np.ndarray, what: str):
    bad = ~np.isfinite(vals)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise NumericalError(f"non-finite {what} at row {i}")


def _mills(x):
    return np.exp(norm_logpdf(x) - norm_logcdf(x))


# -- second-stage likelihoods ------------------------------------------------

def _design(d: Dataset, vhat: np.ndarray) -> np.ndarray:
    return np.column_stack([d.x, d.w, vhat])


def tobit_loglik(params, d: Dataset, vhat) -> float:
    """Censored-normal log likelihood of y on [x, w, vhat].

    params = (coefficients on x, each w column, vhat, then sigma_e > 0).
    """
    params = np.asarray(params, float)
    coef, sigma_e = params[:-1], params[-1]
    if sigma_e <= 0.0:
        raise NumericalError(f"sigma_e must be positive, got {sigma_e}")
    mu = _design(d, np.asarray(vhat, float)) @ coef
    cens = d.y == 0.0
    ll = np.empty(d.n)
    ll[cens] = norm_logcdf(-mu[cens] / sigma_e)
    resid = (d.y[~cens] - mu[~cens]) / sigma_e
    ll[~cens] = norm_logpdf(resid) - np.log(sigma_e)
    _check_rows(ll, "censored log-likelihood term")
    return float(ll.sum())


def _tobit_score_obs(params, d: Dataset, vhat) -> np.ndarray:
    """Per-row score of tobit_loglik, shape (n, len(params))."""
    params = np.asarray(params, float)
    coef, sigma_e = params[:-1], params[-1]
    X = _design(d, np.asarray(vhat, float))
    mu = X @ coef
    cens = d.y == 0.0
    dmu = np.empty(d.n)
    dsig = np.empty(d.n)
    lam = _mills(-mu[cens] / sigma_e)
    dmu[cens] = -lam / sigma_e
    dsig[cens] = lam * mu[cens] / sigma_e ** 2
    r = (d.y[~cens] - mu[~cens]) / sigma_e
    dmu[~cens] = r / sigma_e
    dsig[~cens] = (r * r - 1.0) / sigma_e
    return np.column_stack([dmu[:, None] * X, dsig])


def tobit_score(params, d: Dataset, vhat) -> np.ndarray:
    """Analytic gradient of tobit_loglik in its parameters."""
    return _tobit_score_obs(params, d, vhat).sum(axis=0)


def probit_loglik(params, d: Dataset, vhat) -> float:
    """Binary-outcome log likelihood of y on [x, w, vhat], unit latent scale."""
    coef = np.asarray(params, float)
    m = _design(d, np.asarray(vhat, float)) @ coef
    sgn = 2.0 * d.y - 1.0
    ll = norm_logcdf(sgn * m)
    _check_rows(ll, "binary log-likelihood term")
    return float(ll.sum())


def _probit_score_obs(params, d: Dataset, vhat) -> np.ndarray:
    coef = np.asarray(params, float)
    X = _design(d, np.asarray(vhat, float))
    m = X @ coef
    sgn = 2.0 * d.y - 1.0
    g = sgn * _mills(sgn * m)
    return g[:, None] * X


def probit_score(params, d: Dataset, vhat) -> np.ndarray:
    """Analytic gradient of probit_loglik in its parameters."""
    return _probit_score_obs(params, d, vhat).sum(axis=0)


# -- joint likelihood --------------------------------------------------------
#
# Unconstrained parameterization eta:
#   tobit : (theta, pi, log sigma_u, log sigma_v, atanh rho)
#   probit: (theta, pi, log sigma_v, atanh rho), sigma_u = 1

def _unpack_eta(eta, d: Dataset, kind: str):
    eta = np.asarray(eta, float)
    k_t = 1 + d.d_w
    k_p = d.d_z + d.d_w
    theta = eta[:k_t]
    pi = eta[k_t:k_t + k_p]
    if kind == "tobit":
        sigma_u = np.exp(eta[k_t + k_p])
        sigma_v = np.exp(eta[k_t + k_p + 1])
        rho = np.tanh(eta[k_t + k_p + 2])
    else:
        sigma_u = 1.0
        sigma_v = np.exp(eta[k_t + k_p])
        rho = np.tanh(eta[k_t + k_p + 1])
    return theta, pi, sigma_u, sigma_v, rho


def joint_loglik(eta, d: Dataset, kind: str) -> float:
    """Log likelihood of (y, x) given (z, w) under joint normality.

    Factored as the outcome density conditional on x times the normal
    first-stage density of x.
    """
    theta, pi, sigma_u, sigma_v, rho = _unpack_eta(eta, d, kind)
    v = d.x - d.zw @ pi
    h_index = theta[0] * d.x + d.w @ theta[1:]
    mu = h_index + rho * sigma_u / sigma_v * v
    marg = norm_logpdf(v / sigma_v) - np.log(sigma_v)
    if kind == "tobit":
        s = sigma_u * np.sqrt(1.0 - rho * rho)
        cens = d.y == 0.0
        cond = np.empty(d.n)
        cond[cens] = norm_logcdf(-mu[cens] / s)
        cond[~cens] = norm_logpdf((d.y[~cens] - mu[~cens]) / s) - np.log(s)
    else:
        s = np.sqrt(1.0 - rho * rho)
        sgn = 2.0 * d.y - 1.0
        cond = norm_logcdf(sgn * mu / s)
    ll = cond + marg
    _check_rows(ll, "joint log-likelihood term")
    return float(ll.sum())


def _joint_score_obs(eta, d: Dataset, kind: str) -> np.ndarray:
    """Per-row analytic score of joint_loglik in eta, shape (n, len(eta))."""
    theta, pi, sigma_u, sigma_v, rho = _unpack_eta(eta, d, kind)
    v = d.x - d.zw @ pi
    h = np.column_stack([d.x, d.w])
    mu = h @ theta + rho * sigma_u / sigma_v * v
    one_m_r2 = 1.0 - rho * rho
    n = d.n
    cols = []
    if kind == "tobit":
        s = sigma_u * np.sqrt(one_m_r2)
        cens = d.y == 0.0
        g1 = np.empty(n)
        g2 = np.empty(n)
        lam = _mills(-mu[cens] / s)
        g1[cens] = -lam / s
        g2[cens] = lam * mu[cens] / s ** 2
        r = (d.y[~cens] - mu[~cens]) / s
        g1[~cens] = r / s
        g2[~cens] = (r * r - 1.0) / s
        d_theta = g1[:, None] * h
        d_pi = d.zw * (v / sigma_v ** 2 - g1 * rho * sigma_u / sigma_v)[:, None]
        d_au = (g1 * rho * v / sigma_v + g2 * np.sqrt(one_m_r2)) * sigma_u
        d_av = -g1 * rho * sigma_u * v / sigma_v + v * v / sigma_v ** 2 - 1.0
        d_r = one_m_r2 * (g1 * sigma_u * v / sigma_v
                          - g2 * sigma_u * rho / np.sqrt(one_m_r2))
        cols = [d_theta, d_pi, d_au[:, None], d_av[:, None], d_r[:, None]]
    else:
        s = np.sqrt(one_m_r2)
        m = mu / s
        sgn = 2.0 * d.y - 1.0
        gb = sgn * _mills(sgn * m)
        d_theta = gb[:, None] * h / s
        d_pi = d.zw * (v / sigma_v ** 2 - gb * rho / (sigma_v * s))[:, None]
        d_av = -gb * rho * v / (sigma_v * s) + v * v / sigma_v ** 2 - 1.0
        d_r = gb * (s * v / sigma_v + mu * rho / s)
        cols = [d_theta, d_pi, d_av[:, None], d_r[:, None]]
    return np.hstack(cols)


def joint_score(eta, d: Dataset, kind: str) -> np.ndarray:
    """Analytic gradient of joint_loglik in eta."""
    return _joint_score_obs(eta, d, kind).sum(axis=0)


# -- fitting -----------------------------------------------------------------

def _maximize_with_restarts(f, grad, start, seed: int = 0, restarts: int = 3):
    rng = np.random.default_rng(seed)
    start = np.asarray(start, float)
    last_err = None
    for attempt in range(restarts + 1):
        x0 = start if attempt == 0 else start + rng.normal(
            scale=0.1 * (1.0 + np.abs(start)))
        try:
            return quasi_newton_maximize(f, x0, grad=grad)
        except ConvergenceError as err:
            last_err = err
    raise ConvergenceError(
        f"maximization failed after {restarts} restarts: {last_err}",
        last_x=getattr(last_err, "last_x", None))


def _check_degenerate(sigma_u2, sigma_v2, sigma_uv):
    rho = sigma_uv / np.sqrt(sigma_u2 * sigma_v2)
    if abs(rho) >= _RHO_CAP:
        raise ConvergenceError(
            f"degenerate endogeneity: |corr(U, V)| = {abs(rho):.8f} is "
            "numerically 1; the control-function variance vanishes")


def fit_two_step(d: Dataset, kind: str) -> ReducedFormFit:
    """Sequential estimator: first-stage OLS, then control-function MLE.

    Returns the fit on the reporting parameterization
    (theta1, theta2, pi1, pi2, sigma_u2, sigma_v2, sigma_uv) with a
    sandwich covariance that stacks both stages' moment conditions, so the
    standard errors account for the estimated first-stage residual.
    """
    d = validate(d, kind)
    fs = first_stage(d)
    if fs.sigma_v2 <= 1e-12 * max(1.0, float(np.var(d.x))):
        raise DataError(
            "degenerate_first_stage",
            "first-stage residual variance is numerically zero; x is an "
            "exact function of [z, w]")
    k_b = 2 + d.d_w  # coefficients on x, w, vhat

    if kind == "tobit":
        X = _design(d, fs.resid)
        b0, *_ = np.linalg.lstsq(X, d.y, rcond=None)
        s0 = float(np.std(d.y - X @ b0)) or 1.0

        def f(p):  # p = (b, log sigma_e)
            return tobit_loglik(np.append(p[:-1], np.exp(p[-1])), d, fs.resid)

        def g(p):
            full = np.append(p[:-1], np.exp(p[-1]))
            sc = tobit_score(full, d, fs.resid)
            sc[-1] *= full[-1]
            return sc

        eta, _ = _maximize_with_restarts(_safe_objective_wrap(f), g,
                                         np.append(b0, np.log(s0)))
        b, log_se = eta[:-1], eta[-1]
        sigma_e2 = float(np.exp(2.0 * log_se))
        b_v = float(b[-1])
        sigma_uv = b_v * fs.sigma_v2
        sigma_u2 = sigma_e2 + b_v ** 2 * fs.sigma_v2
        theta = b[:-1]
        loglik_val = f(eta)
        raw = np.concatenate([fs.pi, [fs.sigma_v2], b, [log_se]])
    else:
        X = _design(d, fs.resid)
        b0, *_ = np.linalg.lstsq(X, 2.0 * d.y - 1.0, rcond=None)

        def f(p):
            return probit_loglik(p, d, fs.resid)

        def g(p):
            return probit_score(p, d, fs.resid)

        eta, _ = _maximize_with_restarts(_safe_objective_wrap(f), g, b0)
        b = eta
        b_v = float(b[-1])
        sigma_e2 = 1.0 / (1.0 + b_v ** 2 * fs.sigma_v2)
        sigma_e = np.sqrt(sigma_e2)
        theta = b[:-1] * sigma_e
        sigma_uv = b_v * sigma_e * fs.sigma_v2
        sigma_u2 = 1.0
        loglik_val = f(eta)
        raw = np.concatenate([fs.pi, [fs.sigma_v2], b])

    _check_degenerate(sigma_u2, fs.sigma_v2, sigma_uv)
    vcov, infl = _two_step_vcov(raw, d, kind)
    fit = ReducedFormFit(
        model_kind=kind, method="two-step",
        theta1=float(theta[0]), theta2=theta[1:],
        pi1=fs.pi[:d.d_z], pi2=fs.pi[d.d_z:],
        sigma_u2=float(sigma_u2), sigma_v2=float(fs.sigma_v2),
        sigma_uv=float(sigma_uv),
        vcov=vcov, n_obs=d.n, loglik=float(loglik_val), influence=infl,
        n_dropped=d.n_dropped,
        diagnostics={"second_stage_coef": np.asarray(b, float),
                     "sigma_e2": sigma_e2})
    return fit


def _safe_objective_wrap(f):
    def wrapped(p):
        try:
            v = f(p)
        except (NumericalError, FloatingPointError, OverflowError):
            return -np.inf
        return v
    return wrapped


def _two_step_moments(raw, d: Dataset, kind: str) -> np.ndarray:
    """Stacked per-row moment conditions of both stages, shape (n, p)."""
    raw = np.asarray(raw, float)
    k_pi = d.d_z + d.d_w
    pi = raw[:k_pi]
    sigma_v2 = raw[k_pi]
    resid = d.x - d.zw @ pi
    m1 = d.zw * resid[:, None]
    m2 = (resid ** 2 - sigma_v2)[:, None]
    if kind == "tobit":
        b = raw[k_pi + 1:-1]
        sigma_e = np.exp(raw[-1])
        sc = _tobit_score_obs(np.append(b, sigma_e), d, resid)
        sc[:, -1] *= sigma_e  # chain to log sigma_e
        m3 = sc
    else:
        b = raw[k_pi + 1:]
        m3 = _probit_score_obs(b, d, resid)
    return np.hstack([m1, m2, m3])


def _two_step_map(raw, d: Dataset, kind: str) -> np.ndarray:
    """Map the raw two-step parameters to the reporting vector psi."""
    raw = np.asarray(raw, float)
    k_pi = d.d_z + d.d_w
    pi = raw[:k_pi]
    sigma_v2 = raw[k_pi]
    if kind == "tobit":
        b = raw[k_pi + 1:-1]
        sigma_e2 = np.exp(2.0 * raw[-1])
        b_v = b[-1]
        theta = b[:-1]
        sigma_uv = b_v * sigma_v2
        sigma_u2 = sigma_e2 + b_v ** 2 * sigma_v2
    else:
        b = raw[k_pi + 1:]
        b_v = b[-1]
        sigma_e = 1.0 / np.sqrt(1.0 + b_v ** 2 * sigma_v2)
        theta = b[:-1] * sigma_e
        sigma_uv = b_v * sigma_e * sigma_v2
        sigma_u2 = 1.0
    return np.concatenate([theta, pi, [sigma_u2, sigma_v2, sigma_uv]])


def _two_step_vcov(raw, d: Dataset, kind: str):
    m = _two_step_moments(raw, d, kind)
    p = m.shape[1]
    G = np.empty((p, p))
    for i in range(p):
        h = 1e-6 * (1.0 + abs(raw[i]))
        rp = raw.copy(); rp[i] += h
        rm = raw.copy(); rm[i] -= h
        G[:, i] = (_two_step_moments(rp, d, kind).sum(axis=0)
                   - _two_step_moments(rm, d, kind).sum(axis=0)) / (2.0 * h)
    omega = m.T @ m
    Ginv = np.linalg.inv(G)
    vcov_raw = Ginv @ omega @ Ginv.T
    J = _numeric_jacobian(lambda r: _two_step_map(r, d, kind), raw)
    vcov = J @ vcov_raw @ J.T
    infl = -(m @ Ginv.T) @ J.T
    return _symmetrize(vcov), infl


def _numeric_jacobian(fun, x, step: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, float)
    f0 = np.asarray(fun(x), float)
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = step * (1.0 + abs(x[i]))
        xp = x.copy(); xp[i] += h
        xm = x.copy(); xm[i] -= h
        J[:, i] = (np.asarray(fun(xp), float)
                   - np.asarray(fun(xm), float)) / (2.0 * h)
    return J


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _eta_to_psi(eta, d: Dataset, kind: str) -> np.ndarray:
    theta, pi, sigma_u, sigma_v, rho = _unpack_eta(eta, d, kind)
    return np.concatenate([
        theta, pi,
        [sigma_u ** 2, sigma_v ** 2, rho * sigma_u * sigma_v]])


def fit_joint_mle(d: Dataset, kind: str) -> ReducedFormFit:
    """One-shot MLE of the outcome and first stage, started at the two-step
    estimates.  vcov is the inverse negative numerical Hessian, mapped to
    the reporting parameterization."""
    d = validate(d, kind)
    ts = fit_two_step(d, kind)
    rho0 = np.clip(ts.rho_uv, -0.999999, 0.999999)
    if kind == "tobit":
        eta0 = np.concatenate([
            ts.theta, ts.pi,
            [0.5 * np.log(ts.sigma_u2), 0.5 * np.log(ts.sigma_v2),
             np.arctanh(rho0)]])
    else:
        eta0 = np.concatenate([
            ts.theta, ts.pi,
            [0.5 * np.log(ts.sigma_v2), np.arctanh(rho0)]])

    f = _safe_objective_wrap(lambda e: joint_loglik(e, d, kind))
    g = lambda e: joint_score(e, d, kind)
    eta, H = _maximize_with_restarts(f, g, eta0)

    psi = _eta_to_psi(eta, d, kind)
    J = _numeric_jacobian(lambda e: _eta_to_psi(e, d, kind), eta)
    neg_H_inv = np.linalg.inv(-H)
    vcov = _symmetrize(J @ neg_H_inv @ J.T)
    if kind == "probit":
        iu2 = ts.idx_sigma_u2
        vcov[iu2, :] = 0.0
        vcov[:, iu2] = 0.0
    scores = _joint_score_obs(eta, d, kind)
    infl = (scores @ neg_H_inv) @ J.T
    k_t = 1 + d.d_w
    k_p = d.d_z + d.d_w
    sigma_u2, sigma_v2, sigma_uv = psi[k_t + k_p:]
    _check_degenerate(sigma_u2, sigma_v2, sigma_uv)
    return ReducedFormFit(
        model_kind=kind, method="mle",
        theta1=float(psi[0]), theta2=psi[1:k_t],
        pi1=psi[k_t:k_t + d.d_z], pi2=psi[k_t + d.d_z:k_t + k_p],
        sigma_u2=float(sigma_u2), sigma_v2=float(sigma_v2),
        sigma_uv=float(sigma_uv),
        vcov=vcov, n_obs=d.n, loglik=float(f(eta)), influence=infl,
        n_dropped=d.n_dropped,
        diagnostics={"eta": eta})
