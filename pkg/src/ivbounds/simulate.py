"""Data-generating processes and the Monte Carlo replication harness.

The sampler draws from the structural model: instruments and any
non-intercept exogenous covariates are independent standard normals, the
latent error pair is bivariate normal (or a finite mixture on the
first-stage / measurement-error side), the measurement error is classical,
and the outcome is censored at zero or binarized.  All draws are
reproducible: each replication's generator is derived from
(base_seed, grid_index, replication_index) so runs are deterministic under
any execution order.

Population quantities (observable moments, identified intervals, effect
truths and effect bounds) are available in closed form through the
Gaussian identities  E Phi(a + bZ) = Phi(a / sqrt(1 + b^2))  and
E phi(a + bZ) = phi(a / sqrt(1 + b^2)) / sqrt(1 + b^2);  a Monte Carlo
route is provided as an independent cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .bounds import (EmptyIntersectionError, intersect_component_intervals,
                     reduced_form_moments, sigma_ustar_interval)
from .data import (APE_PROBABILITY, APE_TOBIT_MEAN, DataError, Dataset,
                   EffectQuery, Interval, PE_PROBABILITY, PE_TOBIT_MEAN,
                   StructuralParams)
from .effects import _SCALE_FLOOR, ape_bounds, pe_bounds
from .gaussian import fit_joint_mle, fit_two_step
from .inference import (BonferroniConfig, ci_effect, ci_sigma_ustar2,
                        naive_effect_ci)
from .numeric import (ConvergenceError, NumericalError, norm_cdf, norm_pdf)

__all__ = [
    "MixtureSpec",
    "DgpConfig",
    "sample",
    "population_covariate_means",
    "true_reduced_moments",
    "true_mixture_components",
    "true_sigma_ustar2",
    "true_sigma_interval",
    "true_effects",
    "true_effect_bounds",
    "McResult",
    "run_mc",
]


@dataclass(frozen=True)
class MixtureSpec:
    """Finite-mixture structure of the latent errors.

    The first-stage error Vstar mixes over `weights` components with the
    given means, scales, and covariances with the (Gaussian, shared-scale)
    heterogeneity Ustar; the measurement error independently mixes over
    `eps_weights` components.  The observable error pair then follows a
    mixture with one component per (first-stage, measurement) pair.
    """

    weights: tuple
    mu_vstar: tuple
    sigma_vstar: tuple
    cov_ustar_vstar: tuple
    eps_weights: tuple = (1.0,)
    eps_mu: tuple = (0.0,)
    eps_sigma: tuple | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, float)
        if np.any(w <= 0.0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("mixture weights must be positive and sum to 1")
        J = w.size
        for name in ("mu_vstar", "sigma_vstar", "cov_ustar_vstar"):
            if len(getattr(self, name)) != J:
                raise ValueError(f"{name} must have one entry per component")
        if abs(float(w @ np.asarray(self.mu_vstar, float))) > 1e-10:
            raise ValueError("first-stage mixture means must average to 0")
        if np.any(np.asarray(self.sigma_vstar, float) <= 0.0):
            raise ValueError("component scales must be positive")
        ew = np.asarray(self.eps_weights, float)
        if np.any(ew <= 0.0) or abs(ew.sum() - 1.0) > 1e-10:
            raise ValueError("eps_weights must be positive and sum to 1")
        L = ew.size
        if len(self.eps_mu) != L:
            raise ValueError("eps_mu must have one entry per eps component")
        if abs(float(ew @ np.asarray(self.eps_mu, float))) > 1e-10:
            raise ValueError("measurement-error mixture means must average to 0")
        if self.eps_sigma is not None:
            if len(self.eps_sigma) != L:
                raise ValueError("eps_sigma must have one entry per component")
            if np.any(np.asarray(self.eps_sigma, float) < 0.0):
                raise ValueError("eps_sigma entries must be >= 0")

    @property
    def n_components(self) -> int:
        return len(self.weights) * len(self.eps_weights)


@dataclass(frozen=True)
class DgpConfig:
    """One data-generating design.

    Defaults are the benchmark design used throughout the tests:
    coefficients (2, (1,)), first stage (1, (0,)), unit latent scales,
    unit measurement-error scale, uncorrelated latent errors, n = 1000,
    censored outcome, W equal to an intercept only.
    """

    theta1: float = 2.0
    theta2: tuple = (1.0,)
    pi1: tuple = (1.0,)
    pi2: tuple = (0.0,)
    sigma_vstar: float = 1.0
    sigma_ustar: float = 1.0
    sigma_eps: float = 1.0
    rho_star: float = 0.0
    n: int = 1000
    kind: str = "tobit"
    mixture: MixtureSpec | None = None

    def __post_init__(self):
        if self.kind not in ("tobit", "probit"):
            raise ValueError(f"kind must be tobit or probit, got {self.kind!r}")
        if self.sigma_ustar <= 0.0 or self.sigma_vstar <= 0.0:
            raise ValueError("latent scales must be positive")
        if self.sigma_eps < 0.0:
            raise ValueError("measurement-error scale must be >= 0")
        if not -1.0 < self.rho_star < 1.0:
            raise ValueError(f"rho_star must lie in (-1, 1), got {self.rho_star}")
        if self.n < 0:
            raise ValueError("n must be >= 0")
        if len(self.pi2) != len(self.theta2):
            raise ValueError("pi2 and theta2 must have one entry per w column")
        if self.mixture is not None:
            su2 = self.sigma_ustar ** 2
            for sv, c in zip(self.mixture.sigma_vstar,
                             self.mixture.cov_ustar_vstar):
                if c * c > su2 * sv * sv + 1e-12:
                    raise ValueError(
                        "component covariance violates Cauchy-Schwarz against "
                        "the shared heterogeneity scale")

    @property
    def d_w(self) -> int:
        return len(self.theta2)

    @property
    def d_z(self) -> int:
        return len(self.pi1)

    @property
    def structural(self) -> StructuralParams:
        """Latent second moments; only defined for the Gaussian design."""
        if self.mixture is not None:
            raise ValueError("structural moments are per-component under a mixture")
        return StructuralParams(
            sigma_ustar2=self.sigma_ustar ** 2,
            sigma_vstar2=self.sigma_vstar ** 2,
            sigma_ustar_vstar=self.rho_star * self.sigma_ustar * self.sigma_vstar,
            sigma_eps2=self.sigma_eps ** 2)


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample(cfg: DgpConfig, seed) -> Dataset:
    """Draw one dataset; deterministic given (cfg, seed).

    `seed` may be an integer, a SeedSequence, or a Generator.  W's first
    column is an intercept; remaining W columns and all Z columns are
    independent standard normals.
    """
    rng = _as_rng(seed)
    n = cfg.n
    z = rng.standard_normal((n, cfg.d_z))
    w = np.ones((n, cfg.d_w))
    if cfg.d_w > 1:
        w[:, 1:] = rng.standard_normal((n, cfg.d_w - 1))
    if cfg.mixture is None:
        n_v = rng.standard_normal(n)
        n_u = rng.standard_normal(n)
        n_e = rng.standard_normal(n)
        vstar = cfg.sigma_vstar * n_v
        r = cfg.rho_star
        ustar = cfg.sigma_ustar * (r * n_v + np.sqrt(1.0 - r * r) * n_u)
        eps = cfg.sigma_eps * n_e
    else:
        m = cfg.mixture
        j = rng.choice(len(m.weights), size=n, p=np.asarray(m.weights, float))
        l = rng.choice(len(m.eps_weights), size=n,
                       p=np.asarray(m.eps_weights, float))
        n_v = rng.standard_normal(n)
        n_u = rng.standard_normal(n)
        n_e = rng.standard_normal(n)
        sv = np.asarray(m.sigma_vstar, float)[j]
        mv = np.asarray(m.mu_vstar, float)[j]
        cj = np.asarray(m.cov_ustar_vstar, float)[j]
        vstar = mv + sv * n_v
        su2 = cfg.sigma_ustar ** 2
        cond_sd = np.sqrt(np.clip(su2 - cj * cj / (sv * sv), 0.0, None))
        ustar = (cj / (sv * sv)) * (vstar - mv) + cond_sd * n_u
        es = (np.full(len(m.eps_weights), cfg.sigma_eps)
              if m.eps_sigma is None else np.asarray(m.eps_sigma, float))
        eps = np.asarray(m.eps_mu, float)[l] + es[l] * n_e
    xstar = z @ np.asarray(cfg.pi1, float) + w @ np.asarray(cfg.pi2, float) + vstar
    x = xstar + eps
    ystar = cfg.theta1 * xstar + w @ np.asarray(cfg.theta2, float) + ustar
    if cfg.kind == "tobit":
        y = np.maximum(ystar, 0.0)
    else:
        y = (ystar > 0.0).astype(float)
    return Dataset(y, x, w, z)


# -- population quantities ---------------------------------------------------

def _norm_scale(cfg: DgpConfig) -> float:
    """Latent-index scale divided out under the binary-outcome
    normalization; 1 for the censored model."""
    if cfg.kind != "probit":
        return 1.0
    if cfg.mixture is not None:
        raise ValueError("mixture designs are supported for the censored model only")
    su2, _, _ = reduced_form_moments(cfg.structural, cfg.theta1)
    return float(np.sqrt(su2))


def population_covariate_means(cfg: DgpConfig) -> np.ndarray:
    """Population mean of (x, w): the regressor mean equals the intercept
    coefficient of the first stage since Z and extra W columns are centered."""
    h = np.zeros(1 + cfg.d_w)
    h[0] = float(cfg.pi2[0])
    h[1] = 1.0
    return h


def true_reduced_moments(cfg: DgpConfig) -> tuple[float, float, float]:
    """Population observable-error moments (var U, var V, cov), on the
    estimation scale (unit U variance for the binary model)."""
    su2, sv2, suv = reduced_form_moments(cfg.structural, cfg.theta1)
    s = _norm_scale(cfg)
    return su2 / s ** 2, sv2, suv / s


def true_theta(cfg: DgpConfig) -> np.ndarray:
    return np.concatenate([[cfg.theta1], np.asarray(cfg.theta2, float)]) / _norm_scale(cfg)


def true_psi(cfg: DgpConfig) -> np.ndarray:
    """Population value of the stacked estimand (coefficients, first stage,
    error moments), on the estimation scale."""
    su2, sv2, suv = true_reduced_moments(cfg)
    return np.concatenate([
        true_theta(cfg),
        np.asarray(cfg.pi1, float), np.asarray(cfg.pi2, float),
        [su2, sv2, suv]])


def true_sigma_ustar2(cfg: DgpConfig) -> float:
    """Latent heterogeneity variance on the estimation scale."""
    return cfg.sigma_ustar ** 2 / _norm_scale(cfg) ** 2


def true_mixture_components(cfg: DgpConfig):
    """Observable mixture components implied by a mixture design:
    (weights, means, covs) with one entry per (first-stage, measurement)
    component pair, in the layout used by the mixture estimator."""
    m = cfg.mixture
    if m is None:
        raise ValueError("config has no mixture specification")
    es = (np.full(len(m.eps_weights), cfg.sigma_eps)
          if m.eps_sigma is None else np.asarray(m.eps_sigma, float))
    su2 = cfg.sigma_ustar ** 2
    t1 = cfg.theta1
    weights, means, covs = [], [], []
    for wj, mv, sv, cj in zip(m.weights, m.mu_vstar, m.sigma_vstar,
                              m.cov_ustar_vstar):
        for wl, me, se in zip(m.eps_weights, m.eps_mu, es):
            weights.append(wj * wl)
            means.append((-t1 * me, mv + me))
            covs.append(np.array([
                [su2 + t1 * t1 * se ** 2, cj - t1 * se ** 2],
                [cj - t1 * se ** 2, sv ** 2 + se ** 2]]))
    return np.asarray(weights), np.asarray(means), np.asarray(covs)


def true_sigma_interval(cfg: DgpConfig) -> Interval:
    """Population identified interval for the latent variance, on the
    estimation scale."""
    if cfg.mixture is not None:
        w, mu, covs = true_mixture_components(cfg)
        triples = [(c[0, 0], c[1, 1], c[0, 1]) for c in covs]
        return intersect_component_intervals(triples, cfg.theta1)
    su2, sv2, suv = true_reduced_moments(cfg)
    t1 = cfg.theta1 / _norm_scale(cfg)
    return sigma_ustar_interval(t1, su2, sv2, suv)


def _population_index(cfg: DgpConfig) -> tuple[float, float]:
    """(mean, variance) of the averaged-effect index
    theta1 * (first-stage fit) + theta2'W over the covariate distribution."""
    th = true_theta(cfg)
    pi1 = np.asarray(cfg.pi1, float)
    pi2 = np.asarray(cfg.pi2, float)
    const = th[0] * pi2[0] + th[1]
    coef = np.concatenate([th[0] * pi1, th[0] * pi2[1:] + th[2:]])
    return float(const), float(coef @ coef)


def _population_effect(cfg: DgpConfig, query: EffectQuery,
                       sigma_ustar2: float) -> float:
    """Closed-form population effect at one candidate latent variance."""
    th = true_theta(cfg)
    tj = th[query.index]
    if query.kind in (PE_TOBIT_MEAN, PE_PROBABILITY):
        if query.h is None:
            raise ValueError("pointwise effect truth requires an evaluation point")
        idx = float(th @ query.h)
        # floored like the sample-effect evaluators: the interval's lower
        # endpoint can be exactly zero, where the limit value is still defined
        s = max(np.sqrt(sigma_ustar2), _SCALE_FLOOR)
        if query.kind == PE_TOBIT_MEAN:
            return float(norm_cdf(idx / s) * tj)
        return float(norm_pdf(idx / s) * tj / s)
    su2, sv2, _ = true_reduced_moments(cfg)
    t1 = th[0]
    D = 2.0 * sigma_ustar2 - su2 + t1 * t1 * sv2
    if D <= 0.0:
        raise ValueError("averaged-effect scale is not positive here")
    const, b2 = _population_index(cfg)
    T = D + b2
    if query.kind == APE_TOBIT_MEAN:
        return float(norm_cdf(const / np.sqrt(T)) * tj)
    return float(norm_pdf(const / np.sqrt(T)) * tj / np.sqrt(T))


def true_effects(cfg: DgpConfig, query: EffectQuery,
                 mc_size: int | None = None, seed: int = 0) -> float:
    """Population value of the queried effect at the true latent variance.

    Closed form by default; pass mc_size for an independent Monte Carlo
    evaluation over a fresh covariate draw (used as a cross-check).
    """
    s2 = true_sigma_ustar2(cfg)
    if mc_size is None:
        return _population_effect(cfg, query, s2)
    big = sample(replace(cfg, n=int(mc_size)), seed)
    th = true_theta(cfg)
    tj = th[query.index]
    if query.kind in (PE_TOBIT_MEAN, PE_PROBABILITY):
        return _population_effect(cfg, query, s2)
    su2, sv2, _ = true_reduced_moments(cfg)
    D = 2.0 * s2 - su2 + th[0] ** 2 * sv2
    q = big.zw @ np.concatenate([np.asarray(cfg.pi1, float),
                                 np.asarray(cfg.pi2, float)])
    idx = th[0] * q + big.w @ th[1:]
    if query.kind == APE_TOBIT_MEAN:
        return float(np.mean(norm_cdf(idx / np.sqrt(D))) * tj)
    return float(np.mean(norm_pdf(idx / np.sqrt(D))) * tj / np.sqrt(D))


def true_effect_bounds(cfg: DgpConfig, query: EffectQuery) -> Interval:
    """Population bounds of the queried effect over the population
    identified interval.

    Pointwise kinds use the exact candidate rule (endpoints, plus for the
    probability kind the interior stationary point); averaged kinds reduce
    to the same rule through the combined scale, since the population
    average collapses to a single normal evaluation.
    """
    iv = true_sigma_interval(cfg)
    cands = [iv.lo, iv.hi]
    th = true_theta(cfg)
    if query.kind == PE_PROBABILITY:
        if query.h is None:
            raise ValueError("pointwise effect truth requires an evaluation point")
        s2_star = float(th @ query.h) ** 2
        if iv.lo < s2_star < iv.hi:
            cands.append(s2_star)
    elif query.kind == APE_PROBABILITY:
        su2, sv2, _ = true_reduced_moments(cfg)
        const, b2 = _population_index(cfg)
        # T(s2) = 2 s2 - su2 + t1^2 sv2 + b2 is stationary where T = const^2
        s2_star = 0.5 * (const ** 2 - b2 + su2 - th[0] ** 2 * sv2)
        if iv.lo < s2_star < iv.hi:
            cands.append(s2_star)
    vals = [_population_effect(cfg, query, s2) for s2 in cands]
    return Interval(min(vals), max(vals))


# -- Monte Carlo harness -----------------------------------------------------

@dataclass
class McResult:
    """Replication-level records and per-design aggregates.

    records : one row per (rho_star, replication) with estimates, bounds,
    and confidence limits; failed replications keep the row with ok=False
    and the error message.  aggregates : one row per rho_star with medians,
    coverage rates, and the population truths.
    """

    records: pd.DataFrame
    aggregates: pd.DataFrame
    query_kind: str
    n_reps: int
    base_seed: int

    def failures(self) -> int:
        return int((~self.records["ok"]).sum())


def default_effect_query(cfg: DgpConfig) -> EffectQuery:
    """Effect tracked by the harness when none is given: the pointwise
    effect of the mismeasured regressor at the population covariate means
    (censored model: effect on the mean; binary: on the probability)."""
    kind = PE_TOBIT_MEAN if cfg.kind == "tobit" else PE_PROBABILITY
    return EffectQuery(kind, index=0, h=population_covariate_means(cfg))


def _mc_replication(cfg: DgpConfig, query: EffectQuery, method: str,
                    bonf: BonferroniConfig, base_seed: int, rho_idx: int,
                    rep: int) -> dict:
    rec = {"rho": cfg.rho_star, "rep": rep, "ok": True, "error": ""}
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(rho_idx, rep))
    try:
        d = sample(cfg, ss)
        fit = (fit_two_step(d, cfg.kind) if method == "two_step"
               else fit_joint_mle(d, cfg.kind))
        iv = sigma_ustar_interval(fit.theta1, fit.sigma_u2, fit.sigma_v2,
                                  fit.sigma_uv)
        eb = (ape_bounds(query, fit, d, iv) if query.is_average
              else pe_bounds(query, fit, iv))
        sci = ci_sigma_ustar2(fit, bonf)
        eci = ci_effect(query, fit, d, bonf)
        naive, nci = naive_effect_ci(query, fit, d, alpha=bonf.alpha)
        rec.update(
            theta1_hat=fit.theta1, sigma_u2_hat=fit.sigma_u2,
            sigma_v2_hat=fit.sigma_v2, sigma_uv_hat=fit.sigma_uv,
            sigma_lo=iv.lo, sigma_hi=iv.hi,
            effect_lb=eb.lower, effect_ub=eb.upper, naive=naive,
            sigma_ci_lo=sci.lo, sigma_ci_hi=sci.hi,
            effect_ci_lo=eci.lo, effect_ci_hi=eci.hi,
            naive_ci_lo=nci.lo, naive_ci_hi=nci.hi)
    except (DataError, ConvergenceError, NumericalError,
            EmptyIntersectionError, np.linalg.LinAlgError) as err:
        rec["ok"] = False
        rec["error"] = f"{type(err).__name__}: {err}"
    return rec


_RECORD_COLUMNS = [
    "rho", "rep", "ok", "error", "theta1_hat", "sigma_u2_hat",
    "sigma_v2_hat", "sigma_uv_hat", "sigma_lo", "sigma_hi", "effect_lb",
    "effect_ub", "naive", "sigma_ci_lo", "sigma_ci_hi", "effect_ci_lo",
    "effect_ci_hi", "naive_ci_lo", "naive_ci_hi",
]


def run_mc(cfg: DgpConfig, rho_grid, reps: int, base_seed: int = 0,
           query: EffectQuery | None = None, method: str = "two_step",
           bonferroni: BonferroniConfig | None = None,
           n_jobs: int = 1) -> McResult:
    """Replicate fit + bounds + intervals across a grid of latent
    correlations.

    For each rho in `rho_grid` and each replication: draw a sample, fit,
    compute the identified interval, the effect bounds, the two-step
    confidence intervals, and the naive effect with its conventional
    interval.  Failed replications are recorded, not fatal.  Aggregates
    report medians over successful replications, coverage of the
    population truths, and the truths themselves.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if method not in ("two_step", "joint"):
        raise ValueError(f"method must be two_step or joint, got {method!r}")
    rho_grid = [float(r) for r in rho_grid]
    if query is None:
        query = default_effect_query(cfg)
    bonf = BonferroniConfig() if bonferroni is None else bonferroni
    tasks = [(replace(cfg, rho_star=rho), query, method, bonf, base_seed,
              ri, rep)
             for ri, rho in enumerate(rho_grid) for rep in range(reps)]
    if n_jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            rows = list(ex.map(_mc_replication_star, tasks,
                               chunksize=max(1, len(tasks) // (8 * n_jobs))))
    else:
        rows = [_mc_replication(*t) for t in tasks]
    records = pd.DataFrame(rows).reindex(columns=_RECORD_COLUMNS)
    agg_rows = []
    for ri, rho in enumerate(rho_grid):
        cfg_r = replace(cfg, rho_star=rho)
        truth = true_effects(cfg_r, query)
        tb = true_effect_bounds(cfg_r, query)
        tsi = true_sigma_interval(cfg_r)
        ts2 = true_sigma_ustar2(cfg_r)
        sub = records[(records["rho"] == rho) & records["ok"]]
        n_ok = len(sub)
        med = (lambda c: float(sub[c].median()) if n_ok else np.nan)
        cover = (lambda lo_c, hi_c, tv:
                 float(((sub[lo_c] <= tv) & (tv <= sub[hi_c])).mean())
                 if n_ok else np.nan)
        agg_rows.append({
            "rho": rho, "n_reps": reps, "n_ok": n_ok,
            "n_failed": reps - n_ok,
            "true_effect": truth, "true_lb": tb.lo, "true_ub": tb.hi,
            "true_sigma_lo": tsi.lo, "true_sigma_hi": tsi.hi,
            "true_sigma_ustar2": ts2,
            "median_lb": med("effect_lb"), "median_ub": med("effect_ub"),
            "median_naive": med("naive"),
            "median_ci_lo": med("effect_ci_lo"),
            "median_ci_hi": med("effect_ci_hi"),
            "median_naive_ci_lo": med("naive_ci_lo"),
            "median_naive_ci_hi": med("naive_ci_hi"),
            "median_sigma_lo": med("sigma_lo"),
            "median_sigma_hi": med("sigma_hi"),
            "median_effect_width": (float((sub["effect_ub"]
                                           - sub["effect_lb"]).median())
                                    if n_ok else np.nan),
            "median_sigma_width": (float((sub["sigma_hi"]
                                          - sub["sigma_lo"]).median())
                                   if n_ok else np.nan),
            "cover_effect": cover("effect_ci_lo", "effect_ci_hi", truth),
            "cover_sigma": cover("sigma_ci_lo", "sigma_ci_hi", ts2),
            "cover_naive": cover("naive_ci_lo", "naive_ci_hi", truth),
            "bracket_truth": cover("effect_lb", "effect_ub", truth),
        })
    aggregates = pd.DataFrame(agg_rows)
    return McResult(records=records, aggregates=aggregates,
                    query_kind=query.kind, n_reps=reps, base_seed=base_seed)


def _mc_replication_star(t):
    return _mc_replication(*t)
