"""Censored and binary-outcome IV estimation with a mismeasured endogenous
regressor: sharp bounds on the latent heterogeneity variance, partial and
average partial effect bounds, and Bonferroni two-step confidence
intervals, with a finite-mixture error generalization and a Monte Carlo
harness.

Typical use::

    from ivbounds import IVTobit
    est = IVTobit().fit(y, x, w, z)
    est.interval_                     # bounds on the latent variance
    est.effect_bounds("ape_tobit_mean")
    est.effect_ci("ape_tobit_mean")
"""

from .bounds import (EmptyIntersectionError, epsilon_upper,
                     implied_structural, intersect_component_intervals,
                     reduced_form_moments, sigma_ustar_interval,
                     xi_candidates)
from .data import (APE_PROBABILITY, APE_TOBIT_MEAN, DataError, Dataset,
                   EFFECT_KINDS, EffectQuery, Interval, PE_PROBABILITY,
                   PE_TOBIT_MEAN, ReducedFormFit, StructuralParams, validate)
from .effects import (EffectBounds, ape_bounds, ape_probability,
                      ape_tobit_mean, effect_value, pe_bounds,
                      pe_probability, pe_tobit_mean)
from .estimator import IVProbit, IVTobit
from .gaussian import (FirstStageFit, first_stage, fit_joint_mle,
                       fit_two_step, joint_loglik, probit_loglik,
                       tobit_loglik)
from .inference import (BonferroniConfig, ci_effect, ci_sigma_ustar2,
                        delta_se, naive_effect_ci)
from .mixture import (MixtureParams, fit_mixture, mixed_tobit_loglik,
                      mixture_sigma_ustar_interval)
from .numeric import (ConvergenceError, NumericalError, golden_maximize,
                      golden_minimize, max2_normal_quantile, norm_cdf,
                      norm_pdf, norm_quantile, quasi_newton_maximize)
from .simulate import (DgpConfig, McResult, MixtureSpec, run_mc, sample,
                       true_effect_bounds, true_effects,
                       true_sigma_interval)

__version__ = "0.1.0"

__all__ = [
    "APE_PROBABILITY", "APE_TOBIT_MEAN", "BonferroniConfig",
    "ConvergenceError", "DataError", "Dataset", "DgpConfig",
    "EFFECT_KINDS", "EffectBounds", "EffectQuery",
    "EmptyIntersectionError", "FirstStageFit", "IVProbit", "IVTobit",
    "Interval", "McResult", "MixtureParams", "MixtureSpec",
    "NumericalError", "PE_PROBABILITY", "PE_TOBIT_MEAN", "ReducedFormFit",
    "StructuralParams", "ape_bounds", "ape_probability", "ape_tobit_mean",
    "ci_effect", "ci_sigma_ustar2", "delta_se", "effect_value",
    "epsilon_upper", "first_stage", "fit_joint_mle", "fit_mixture",
    "fit_two_step", "golden_maximize", "golden_minimize",
    "implied_structural", "intersect_component_intervals", "joint_loglik",
    "max2_normal_quantile", "mixed_tobit_loglik",
    "mixture_sigma_ustar_interval", "naive_effect_ci", "norm_cdf",
    "norm_pdf", "norm_quantile", "pe_bounds", "pe_probability",
    "pe_tobit_mean", "probit_loglik", "quasi_newton_maximize",
    "reduced_form_moments", "run_mc", "sample", "sigma_ustar_interval",
    "tobit_loglik", "true_effect_bounds", "true_effects",
    "true_sigma_interval", "validate", "xi_candidates",
]
