"""Finite Gaussian-mixture error model for the censored outcome.

The observable error pair (U, V) follows a K-component bivariate normal
mixture with weights summing to one and mixture mean fixed at (0, 0).  A
mixture arises naturally when the latent heterogeneity and/or the
measurement error are themselves mixtures; each component then shares the
same latent heterogeneity variance, so every component's identified
interval must contain it and the identified set is the intersection.

Estimation maximizes the likelihood directly by quasi-Newton in an
unconstrained parameterization: softmax weights (last logit pinned at 0),
free means for the first K-1 components with the last mean solved from the
mean-zero constraint, and Cholesky factors with log diagonals for the
covariances.  Multiple seeded starts guard against local optima.

Censored rows contribute  sum_k p_k N(v; mu_vk, s_vk^2) Phi(c_k)  where
c_k standardizes the censoring threshold under component k's conditional
U | V distribution; both the log likelihood and its gradient are available
in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .bounds import intersect_component_intervals
from .data import Dataset, DataError, Interval, validate
from .gaussian import _mills, fit_joint_mle, fit_two_step
from .numeric import (ConvergenceError, NumericalError, norm_logcdf,
                      quasi_newton_maximize)

__all__ = [
    "MixtureParams",
    "mixed_tobit_loglik",
    "mixed_tobit_score",
    "fit_mixture",
    "mixture_sigma_ustar_interval",
]

_MIN_WEIGHT = 1e-6


@dataclass
class MixtureParams:
    """Parameters of the K-component mixture model.

    means[k] and covs[k] describe component k of the (U, V) error
    distribution; theta1/theta2 are the outcome coefficients and pi1/pi2
    the first-stage coefficients, shared across components.
    """

    weights: np.ndarray
    means: np.ndarray            # (K, 2)
    covs: np.ndarray             # (K, 2, 2)
    theta1: float
    theta2: np.ndarray
    pi1: np.ndarray
    pi2: np.ndarray
    loglik: float | None = None
    bic: float | None = None
    n_obs: int | None = None
    vcov_natural: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, float).ravel()
        self.means = np.asarray(self.means, float).reshape(-1, 2)
        self.covs = np.asarray(self.covs, float).reshape(-1, 2, 2)
        self.theta2 = np.asarray(self.theta2, float).ravel()
        self.pi1 = np.asarray(self.pi1, float).ravel()
        self.pi2 = np.asarray(self.pi2, float).ravel()
        K = self.weights.shape[0]
        if self.means.shape[0] != K or self.covs.shape[0] != K:
            raise ValueError("weights, means, covs must agree on K")
        if np.any(self.weights <= 0.0):
            raise ValueError(f"weights must be positive, got {self.weights}")
        if abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValueError(f"weights must sum to 1, sum {self.weights.sum()}")
        mean = self.weights @ self.means
        if np.max(np.abs(mean)) > 1e-8:
            raise ValueError(f"mixture mean must be (0, 0), got {mean}")
        for k in range(K):
            c = self.covs[k]
            if c[0, 0] <= 0 or c[1, 1] <= 0 or np.linalg.det(c) <= 0:
                raise ValueError(f"component {k} covariance is not PD: {c}")

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([[self.theta1], self.theta2])

    @property
    def pi(self) -> np.ndarray:
        return np.concatenate([self.pi1, self.pi2])

    def component_moments(self) -> list[tuple[float, float, float]]:
        """Per-component (sigma_u2, sigma_v2, sigma_uv) triples."""
        return [(float(c[0, 0]), float(c[1, 1]), float(c[0, 1]))
                for c in self.covs]

    def aggregate_moments(self) -> tuple[float, float, float]:
        """Total (Var U, Var V, Cov) including between-component spread."""
        su2 = float(self.weights @ (self.covs[:, 0, 0] + self.means[:, 0] ** 2))
        sv2 = float(self.weights @ (self.covs[:, 1, 1] + self.means[:, 1] ** 2))
        suv = float(self.weights @ (self.covs[:, 0, 1]
                                    + self.means[:, 0] * self.means[:, 1]))
        return su2, sv2, suv


def mixture_sigma_ustar_interval(params: MixtureParams) -> Interval:
    """Identified interval for the latent variance: the intersection of the
    per-component intervals (every component carries the same latent
    heterogeneity variance)."""
    return intersect_component_intervals(
        params.component_moments(), params.theta1)


# -- likelihood in natural parameters ---------------------------------------

def _component_logdens(theta, pi, weights, means, covs, d: Dataset):
    """(n, K) matrix of log p_k + log g_ik and intermediates for scores."""
    K = weights.shape[0]
    n = d.n
    h = np.column_stack([d.x, d.w])
    v = d.x - d.zw @ pi
    cens = d.y == 0.0
    A = -(h @ theta)          # censoring threshold for U
    u = d.y - h @ theta       # only meaningful on uncensored rows
    lg = np.empty((n, K))
    logw = np.log(weights)
    for k in range(K):
        mu_u, mu_v = means[k]
        su2, suv, sv2 = covs[k][0, 0], covs[k][0, 1], covs[k][1, 1]
        det = su2 * sv2 - suv * suv
        wv = v - mu_v
        # censored branch: marginal density of V times conditional tail
        s2 = det / sv2
        s = np.sqrt(s2)
        beta = suv / sv2
        m = mu_u + beta * wv
        c = (A - m) / s
        lg_c = (-0.5 * np.log(2.0 * np.pi * sv2) - 0.5 * wv * wv / sv2
                + norm_logcdf(c))
        # uncensored branch: full bivariate density at (u, v)
        du = u - mu_u
        quad = (sv2 * du * du - 2.0 * suv * du * wv + su2 * wv * wv) / det
        lg_u = -np.log(2.0 * np.pi) - 0.5 * np.log(det) - 0.5 * quad
        lg[:, k] = logw[k] + np.where(cens, lg_c, lg_u)
    return lg, (h, v, cens, A, u)


def _natural_loglik(theta, pi, weights, means, covs, d: Dataset) -> float:
    lg, _ = _component_logdens(theta, pi, weights, means, covs, d)
    ll = logsumexp(lg, axis=1)
    bad = ~np.isfinite(ll)
    if np.any(bad):
        raise NumericalError(
            f"non-finite mixture log-likelihood at row {int(np.argmax(bad))}")
    return float(ll.sum())


def mixed_tobit_loglik(params: MixtureParams, d: Dataset) -> float:
    """Log likelihood of the censored outcome under the mixture model."""
    return _natural_loglik(params.theta, params.pi, params.weights,
                           params.means, params.covs, d)


def _natural_score_obs(theta, pi, weights, means, covs, d: Dataset):
    """Per-row score in the natural parameter vector.

    Layout: [theta (1+d_w), pi (d_z+d_w), p (K), mu (2K), cov triples
    (sigma_u2, sigma_uv, sigma_v2) x K].  Returns (loglik, scores (n, dim)).
    """
    K = weights.shape[0]
    n = d.n
    lg, (h, v, cens, A, u) = _component_logdens(
        theta, pi, weights, means, covs, d)
    ll = logsumexp(lg, axis=1)
    resp = np.exp(lg - ll[:, None])   # responsibilities, rows sum to 1
    k_t = h.shape[1]
    k_p = d.zw.shape[1]
    dim = k_t + k_p + K + 2 * K + 3 * K
    sc = np.zeros((n, dim))
    d_theta = np.zeros((n, k_t))
    d_v = np.zeros(n)
    unc = ~cens
    for k in range(K):
        r = resp[:, k]
        mu_u, mu_v = means[k]
        su2, suv, sv2 = covs[k][0, 0], covs[k][0, 1], covs[k][1, 1]
        det = su2 * sv2 - suv * suv
        wv = v - mu_v
        inv00, inv01, inv11 = sv2 / det, -suv / det, su2 / det
        dmu_u = np.empty(n); dmu_v = np.empty(n)
        dsu2 = np.empty(n); dsuv = np.empty(n); dsv2 = np.empty(n)
        dth = np.zeros((n, k_t))
        dv_k = np.empty(n)
        # uncensored rows
        du = u[unc] - mu_u
        wvu = wv[unc]
        e0 = inv00 * du + inv01 * wvu
        e1 = inv01 * du + inv11 * wvu
        dmu_u[unc] = e0
        dmu_v[unc] = e1
        dsu2[unc] = 0.5 * (e0 * e0 - inv00)
        dsuv[unc] = e0 * e1 - inv01
        dsv2[unc] = 0.5 * (e1 * e1 - inv11)
        dth[unc] = e0[:, None] * h[unc]
        dv_k[unc] = -e1
        # censored rows
        s2 = det / sv2
        s = np.sqrt(s2)
        beta = suv / sv2
        wvc = wv[cens]
        m = mu_u + beta * wvc
        c = (A[cens] - m) / s
        lam = _mills(c)
        dmu_u[cens] = -lam / s
        dmu_v[cens] = wvc / sv2 + lam * beta / s
        dsu2[cens] = -lam * c / (2.0 * s2)
        dsuv[cens] = lam * (-wvc / (sv2 * s) + c * suv / (sv2 * s2))
        dsv2[cens] = (-0.5 / sv2 + 0.5 * wvc * wvc / sv2 ** 2
                      + lam * (suv * wvc / (sv2 ** 2 * s)
                               - c * suv * suv / (2.0 * sv2 ** 2 * s2)))
        dth[cens] = (-lam / s)[:, None] * h[cens]
        dv_k[cens] = -wvc / sv2 - lam * beta / s
        # accumulate responsibilities-weighted contributions
        d_theta += r[:, None] * dth
        d_v += r * dv_k
        sc[:, k_t + k_p + k] = r / weights[k]
        sc[:, k_t + k_p + K + 2 * k] = r * dmu_u
        sc[:, k_t + k_p + K + 2 * k + 1] = r * dmu_v
        base = k_t + k_p + 3 * K + 3 * k
        sc[:, base] = r * dsu2
        sc[:, base + 1] = r * dsuv
        sc[:, base + 2] = r * dsv2
    sc[:, :k_t] = d_theta
    sc[:, k_t:k_t + k_p] = -d_v[:, None] * d.zw
    return float(ll.sum()), sc


def mixed_tobit_score(params: MixtureParams, d: Dataset) -> np.ndarray:
    """Analytic gradient of mixed_tobit_loglik in the natural parameters
    [theta, pi, weights, means, covariance triples]."""
    _, sc = _natural_score_obs(params.theta, params.pi, params.weights,
                               params.means, params.covs, d)
    return sc.sum(axis=0)


# -- unconstrained parameterization -----------------------------------------

def _eta_split(K: int, k_t: int, k_p: int):
    n_lam = K - 1
    n_muf = 2 * (K - 1)
    i0 = k_t + k_p
    return i0, i0 + n_lam, i0 + n_lam + n_muf


def _eta_to_natural(eta, K: int, k_t: int, k_p: int):
    eta = np.asarray(eta, float)
    theta = eta[:k_t]
    pi = eta[k_t:k_t + k_p]
    i0, i1, i2 = _eta_split(K, k_t, k_p)
    lam_full = np.append(eta[i0:i1], 0.0)
    lam_full = lam_full - lam_full.max()
    p = np.exp(lam_full)
    p = p / p.sum()
    mu = np.zeros((K, 2))
    if K > 1:
        mu[:K - 1] = eta[i1:i2].reshape(K - 1, 2)
        mu[K - 1] = -(p[:K - 1] @ mu[:K - 1]) / p[K - 1]
    covs = np.empty((K, 2, 2))
    ch = eta[i2:].reshape(K, 3)
    for k in range(K):
        l00 = np.exp(ch[k, 0]); l10 = ch[k, 1]; l11 = np.exp(ch[k, 2])
        covs[k, 0, 0] = l00 * l00
        covs[k, 0, 1] = covs[k, 1, 0] = l10 * l00
        covs[k, 1, 1] = l10 * l10 + l11 * l11
    return theta, pi, p, mu, covs


def _natural_to_flat(p, mu, covs) -> np.ndarray:
    K = p.shape[0]
    tri = np.column_stack([covs[:, 0, 0], covs[:, 0, 1], covs[:, 1, 1]])
    return np.concatenate([p, mu.ravel(), tri.ravel()])


def _mix_block_jacobian(eta, K: int, k_t: int, k_p: int) -> np.ndarray:
    """Numeric Jacobian of (p, mu, cov-triples) wrt the mixture block of
    eta; cheap because no data is involved."""
    i0 = k_t + k_p
    block = np.asarray(eta[i0:], float)

    def fun(b):
        e = np.concatenate([eta[:i0], b])
        _, _, p, mu, covs = _eta_to_natural(e, K, k_t, k_p)
        return _natural_to_flat(p, mu, covs)

    f0 = fun(block)
    J = np.empty((f0.size, block.size))
    for i in range(block.size):
        h = 1e-6 * (1.0 + abs(block[i]))
        bp = block.copy(); bp[i] += h
        bm = block.copy(); bm[i] -= h
        J[:, i] = (fun(bp) - fun(bm)) / (2.0 * h)
    return J


def _loglik_eta(eta, d: Dataset, K: int, k_t: int, k_p: int) -> float:
    theta, pi, p, mu, covs = _eta_to_natural(eta, K, k_t, k_p)
    return _natural_loglik(theta, pi, p, mu, covs, d)


def _score_eta(eta, d: Dataset, K: int, k_t: int, k_p: int) -> np.ndarray:
    theta, pi, p, mu, covs = _eta_to_natural(eta, K, k_t, k_p)
    _, sc = _natural_score_obs(theta, pi, p, mu, covs, d)
    g_nat = sc.sum(axis=0)
    i0 = k_t + k_p
    J = _mix_block_jacobian(eta, K, k_t, k_p)
    out = np.empty(eta.shape[0])
    out[:i0] = g_nat[:i0]
    out[i0:] = J.T @ g_nat[i0:]
    return out


# -- fitting -----------------------------------------------------------------

def _lloyd_kmeans(points: np.ndarray, K: int, rng, iters: int = 60):
    """Tiny seeded k-means; returns labels.  Re-seeds empty clusters."""
    n = points.shape[0]
    centers = points[rng.choice(n, size=K, replace=False)]
    labels = np.zeros(n, dtype=int)
    for _ in range(iters):
        dist = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = dist.argmin(axis=1)
        for k in range(K):
            sel = new_labels == k
            if not np.any(sel):
                centers[k] = points[rng.integers(n)]
            else:
                centers[k] = points[sel].mean(axis=0)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels


def _gaussian_residuals(d: Dataset):
    """(uhat, vhat, theta, pi) from a Gaussian fit; censored rows impute
    the conditional truncated mean of U."""
    try:
        g = fit_joint_mle(d, "tobit")
    except ConvergenceError:
        g = fit_two_step(d, "tobit")
    vhat = d.x - d.zw @ g.pi
    h = np.column_stack([d.x, d.w])
    idx = h @ g.theta
    beta = g.sigma_uv / g.sigma_v2
    s = np.sqrt(max(g.sigma_u2 - g.sigma_uv ** 2 / g.sigma_v2, 1e-12))
    uhat = d.y - idx
    cens = d.y == 0.0
    m = beta * vhat[cens]
    alpha = (-idx[cens] - m) / s
    uhat[cens] = m - s * _mills(alpha)
    return uhat, vhat, g


def _start_from_clusters(uhat, vhat, g, K: int, rng, jitter: bool):
    pts = np.column_stack([uhat, vhat])
    labels = _lloyd_kmeans(pts, K, rng)
    lam = np.empty(K)
    mu = np.empty((K, 2))
    chol = np.empty((K, 3))
    scale = np.std(pts, axis=0).mean() + 1e-8
    for k in range(K):
        sel = labels == k
        share = max(sel.mean(), 1.0 / (10.0 * K))
        lam[k] = np.log(share)
        mu[k] = pts[sel].mean(axis=0) if np.any(sel) else np.zeros(2)
        if sel.sum() > 5:
            cov = np.cov(pts[sel].T) + 1e-3 * scale ** 2 * np.eye(2)
        else:
            cov = np.diag([g.sigma_u2, g.sigma_v2])
        L = np.linalg.cholesky(cov)
        chol[k] = (np.log(L[0, 0]), L[1, 0], np.log(L[1, 1]))
    lam = lam - lam[-1]
    if jitter:
        lam += rng.normal(scale=0.5, size=K)
        mu += rng.normal(scale=0.5 * scale, size=(K, 2))
        chol[:, 0] += rng.normal(scale=0.3, size=K)
        chol[:, 2] += rng.normal(scale=0.3, size=K)
        chol[:, 1] += rng.normal(scale=0.3 * scale, size=K)
    eta = np.concatenate([g.theta, g.pi, lam[:-1], mu[:-1].ravel(),
                          chol.ravel()])
    return eta


def fit_mixture(d: Dataset, K: int, n_starts: int = 8,
                seed: int = 0) -> MixtureParams:
    """Fit the K-component mixture by direct MLE with multiple starts.

    Starts are seeded from a k-means split of Gaussian-fit residuals
    (censored rows use the conditional truncated mean), with jittered
    variants.  The winner is the start with the highest log likelihood
    (ties broken by start index).  Raises ConvergenceError when every
    start fails or a fitted component weight collapses below 1e-6
    (reduce K in that case).
    """
    d = validate(d, "tobit")
    k_t = 1 + d.d_w
    k_p = d.d_z + d.d_w
    n_free = 6 * K + k_t + k_p + 1
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if n_free >= d.n / 10.0:
        raise DataError(
            "too_small",
            f"mixture with K={K} needs n > {10 * n_free} rows, have {d.n}")
    uhat, vhat, g = _gaussian_residuals(d)

    def objective(eta):
        try:
            return _loglik_eta(eta, d, K, k_t, k_p)
        except (NumericalError, FloatingPointError):
            return -np.inf

    grad = lambda eta: _score_eta(eta, d, K, k_t, k_p)
    best = None
    failures = []
    for s_idx in range(max(n_starts, 1)):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(s_idx,)))
        eta0 = _start_from_clusters(uhat, vhat, g, K, rng, jitter=s_idx > 0)
        history = []
        try:
            eta_hat, H = quasi_newton_maximize(
                objective, eta0, grad=grad,
                callback=lambda x, fv: history.append(fv))
        except ConvergenceError as err:
            failures.append(str(err))
            continue
        ll = objective(eta_hat)
        if best is None or ll > best[0]:
            best = (ll, s_idx, eta_hat, H, history)
    if best is None:
        raise ConvergenceError(
            f"all {n_starts} mixture starts failed; last: {failures[-1] if failures else 'n/a'}")
    ll, s_idx, eta_hat, H, history = best
    theta, pi, p, mu, covs = _eta_to_natural(eta_hat, K, k_t, k_p)
    if np.any(p < _MIN_WEIGHT):
        raise ConvergenceError(
            f"component weight collapsed to {p.min():.2e}; the data do not "
            f"support K={K} components, refit with a smaller K")
    # covariance of the natural parameters, for reporting and tests
    i0 = k_t + k_p
    J_mix = _mix_block_jacobian(eta_hat, K, k_t, k_p)
    dim_nat = i0 + J_mix.shape[0]
    J = np.zeros((dim_nat, eta_hat.shape[0]))
    J[:i0, :i0] = np.eye(i0)
    J[i0:, i0:] = J_mix
    try:
        neg_H_inv = np.linalg.inv(-H)
        vcov_nat = J @ neg_H_inv @ J.T
    except np.linalg.LinAlgError:
        vcov_nat = None
    n_params = 6 * K - 3 + k_t + k_p
    bic = -2.0 * ll + n_params * np.log(d.n)
    return MixtureParams(
        weights=p, means=mu, covs=covs,
        theta1=float(theta[0]), theta2=theta[1:],
        pi1=pi[:d.d_z], pi2=pi[d.d_z:],
        loglik=float(ll), bic=float(bic), n_obs=d.n,
        vcov_natural=vcov_nat,
        diagnostics={"start_index": s_idx, "loglik_history": history,
                     "n_failed_starts": len(failures)})
