"""Command-line interface: CSV ingestion, fitting, bound and interval
reporting, and Monte Carlo runs.

Two subcommands.  `fit` reads a CSV (RFC-4180, header row required, '.'
decimal), estimates the requested model, and writes a human-readable
report to stdout plus an optional machine report (JSON or CSV, chosen by
the output file extension).  `simulate` runs the Monte Carlo harness and
writes per-replication, aggregate, and plot-ready long-format CSVs.

Exit codes: 0 success, 2 input or validation error, 3 convergence or
numerical error, 4 empty mixture intersection.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np
import pandas as pd

from .bounds import EmptyIntersectionError
from .data import (APE_PROBABILITY, APE_TOBIT_MEAN, DataError, EffectQuery,
                   PE_PROBABILITY, PE_TOBIT_MEAN)
from .estimator import IVProbit, IVTobit
from .inference import BonferroniConfig
from .numeric import ConvergenceError, NumericalError
from .simulate import (DgpConfig, population_covariate_means, run_mc, sample)

__all__ = ["main", "build_parser"]

FORMAT_VERSION = "1"

_EFFECT_TOKENS = {
    "pe_mean": PE_TOBIT_MEAN,
    "pe_prob": PE_PROBABILITY,
    "ape_mean": APE_TOBIT_MEAN,
    "ape_prob": APE_PROBABILITY,
}

_LONG_SERIES = [
    ("true", "true_effect"), ("true_lb", "true_lb"), ("true_ub", "true_ub"),
    ("median_lb", "median_lb"), ("median_ub", "median_ub"),
    ("naive", "median_naive"), ("ci_lo", "median_ci_lo"),
    ("ci_hi", "median_ci_hi"), ("naive_ci_lo", "median_naive_ci_lo"),
    ("naive_ci_hi", "median_naive_ci_hi"),
]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ivbounds",
        description="Censored/binary-outcome IV estimation with a "
                    "mismeasured endogenous regressor: bounds on the latent "
                    "heterogeneity variance, effect bounds, and two-step "
                    "confidence intervals.")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="estimate a model from a CSV file")
    f.add_argument("csv", help="input CSV path (header row required)")
    f.add_argument("--kind", choices=("tobit", "probit"), required=True)
    f.add_argument("--y", required=True, help="outcome column")
    f.add_argument("--x", required=True, help="mismeasured regressor column")
    f.add_argument("--w", required=True,
                   help="comma-separated exogenous covariate columns "
                        "(include the intercept column explicitly)")
    f.add_argument("--z", required=True,
                   help="comma-separated instrument columns")
    f.add_argument("--effects", default=None,
                   help="comma-separated effect kinds from "
                        "{pe_mean,pe_prob,ape_mean,ape_prob} "
                        "(default: ape_mean for tobit, ape_prob for probit)")
    f.add_argument("--at", default="means",
                   help="evaluation point for pointwise effects: 'means', "
                        "'row:IDX', or comma-separated values for (x, w...)")
    f.add_argument("--index", type=int, default=0,
                   help="covariate whose effect is reported: 0 for the "
                        "mismeasured regressor, 1+j for w column j")
    f.add_argument("--alpha", type=float, default=0.05)
    f.add_argument("--alpha1", type=float, default=None,
                   help="budget share of alpha spent on the variance "
                        "interval (default alpha/10)")
    f.add_argument("--estimator", choices=("two-step", "mle"), default="mle")
    f.add_argument("--mixture-k", type=int, default=None,
                   help="number of mixture components for the error pair "
                        "(tobit only; pointwise effects only)")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", default=None,
                   help="machine-readable report path (.json or .csv)")
    f.add_argument("--format", default=FORMAT_VERSION,
                   help="report format version (only '1' is defined)")

    s = sub.add_parser("simulate", help="run the Monte Carlo harness")
    s.add_argument("--design", choices=("default", "custom"),
                   default="default",
                   help="'default' is the benchmark design; 'custom' reads "
                        "the design flags below")
    s.add_argument("--theta1", type=float, default=2.0)
    s.add_argument("--theta2", default="1")
    s.add_argument("--pi1", default="1")
    s.add_argument("--pi2", default="0")
    s.add_argument("--sigma-vstar", type=float, default=1.0)
    s.add_argument("--sigma-ustar", type=float, default=1.0)
    s.add_argument("--sigma-eps", type=float, default=1.0)
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--kind", choices=("tobit", "probit"), default="tobit")
    s.add_argument("--rho-grid", default="-0.9,-0.6,-0.3,0,0.3,0.6,0.9")
    s.add_argument("--reps", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--method", choices=("two-step", "mle"),
                   default="two-step")
    s.add_argument("--effect", default=None,
                   help="tracked effect kind token (default: pe_mean for "
                        "tobit, pe_prob for probit)")
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--alpha1", type=float, default=None)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--outdir", required=True)
    s.add_argument("--export-data", default=None,
                   help="also write the first replication's dataset to this "
                        "CSV (full precision, refittable with 'fit')")
    return p


def _floats(text: str) -> tuple:
    return tuple(float(t) for t in text.split(",") if t.strip() != "")


def _pick_columns(df: pd.DataFrame, names: list[str], path: str) -> np.ndarray:
    for name in names:
        if name not in df.columns:
            raise DataError(
                "missing_column",
                f"column {name!r} not found in {path}; available columns: "
                f"{', '.join(map(str, df.columns))}")
    return df[names].to_numpy(float)


def _parse_at(text: str, est) -> np.ndarray | None:
    if text == "means":
        return None  # estimator default: sample covariate means
    if text.startswith("row:"):
        idx = int(text[4:])
        d = est.data_
        if not 0 <= idx < d.n:
            raise DataError("bad_row",
                            f"row index {idx} outside 0..{d.n - 1}")
        return np.concatenate([[d.x[idx]], d.w[idx]])
    return np.asarray(_floats(text), float)


def _interval_dict(iv) -> dict:
    return {"lower": _num(iv.lo), "upper": _num(iv.hi)}


def _num(v):
    v = float(v)
    return None if not np.isfinite(v) else v


def cmd_fit(args) -> int:
    if str(args.format) != FORMAT_VERSION:
        raise DataError("bad_format",
                        f"unknown report format version {args.format!r}")
    df = pd.read_csv(args.csv)
    y = _pick_columns(df, [args.y], args.csv).ravel()
    x = _pick_columns(df, [args.x], args.csv).ravel()
    w = _pick_columns(df, [c.strip() for c in args.w.split(",")], args.csv)
    z = _pick_columns(df, [c.strip() for c in args.z.split(",")], args.csv)

    cls = IVTobit if args.kind == "tobit" else IVProbit
    est = cls(method="two_step" if args.estimator == "two-step" else "joint",
              alpha=args.alpha, alpha1=args.alpha1,
              mixture_components=args.mixture_k, seed=args.seed)
    est.fit(y, x, w, z)

    tokens = (args.effects.split(",") if args.effects
              else ["ape_mean" if args.kind == "tobit" else "ape_prob"])
    notes = []
    effect_rows = []
    at = _parse_at(args.at, est)
    for token in tokens:
        token = token.strip()
        if token not in _EFFECT_TOKENS:
            raise DataError(
                "bad_effect",
                f"unknown effect kind {token!r}; choose from "
                f"{', '.join(_EFFECT_TOKENS)}")
        kind = _EFFECT_TOKENS[token]
        eb = est.effect_bounds(kind, index=args.index, at=at)
        row = {
            "kind": token, "index": args.index,
            "at": (None if kind in (APE_TOBIT_MEAN, APE_PROBABILITY)
                   else [float(v) for v in (at if at is not None
                                            else est.covariate_means())]),
            "bounds": {"lower": _num(eb.lower), "upper": _num(eb.upper)},
            "argmin_sigma2": _num(eb.argmin_sigma2),
            "argmax_sigma2": _num(eb.argmax_sigma2),
        }
        if est.mixture_ is None:
            naive, nci = est.naive_effect(kind, index=args.index, at=at)
            ci = est.effect_ci(kind, index=args.index, at=at)
            row["naive"] = _num(naive)
            row["naive_ci"] = _interval_dict(nci)
            row["ci"] = _interval_dict(ci)
        else:
            row["naive"] = _num(eb.naive)
            row["naive_ci"] = None
            row["ci"] = None
        effect_rows.append(row)
    if est.mixture_ is not None:
        notes.append("mixture model: intervals are identification bounds "
                     "only; no sampling inference is attached")

    f = est.fit_
    se = f.se()
    params = []
    for name, val, s in zip(f.param_names(), f.params, se):
        fixed = args.kind == "probit" and name == "sigma_u2"
        params.append({"name": name, "estimate": _num(val),
                       "se": None if fixed else _num(s)})
    report = {
        "format_version": FORMAT_VERSION,
        "model": {
            "kind": args.kind,
            "estimator": args.estimator,
            "n_obs": f.n_obs,
            "n_dropped": f.n_dropped,
            "loglik": _num(f.loglik) if f.loglik is not None else None,
            "seed": args.seed,
        },
        "parameters": params,
        "variance_bounds": _interval_dict(est.interval_),
        "epsilon_upper": _num(est.epsilon_upper_),
        "rho_uv": _num(f.rho_uv),
        "effects": effect_rows,
        "mixture": None,
        "notes": notes,
    }
    if est.mixture_ is None:
        sci = est.sigma_ci()
        if sci.lo == 0.0:
            notes.append("variance CI lower limit clamped at zero")
        report["variance_ci"] = {**_interval_dict(sci),
                                 "level": 1.0 - est.bonferroni_.alpha1}
    else:
        report["variance_ci"] = None
        m = est.mixture_
        report["mixture"] = {
            "components": m.n_components,
            "weights": [_num(v) for v in m.weights],
            "means": [[_num(v) for v in row] for row in m.means],
            "covs": [[[_num(v) for v in r] for r in c] for c in m.covs],
            "loglik": _num(m.loglik),
            "bic": _num(m.bic),
        }

    print(est.summary())
    print()
    print(f"{'effect':<10} {'naive':>12} {'lower':>12} {'upper':>12} "
          f"{'ci lower':>12} {'ci upper':>12}")
    def cell(v) -> str:
        return f"{v:12.6f}" if v is not None and np.isfinite(v) else f"{'-':>12}"

    for row in effect_rows:
        ci = row["ci"] or {"lower": None, "upper": None}
        print(f"{row['kind']:<10} {cell(row['naive'])} "
              f"{cell(row['bounds']['lower'])} {cell(row['bounds']['upper'])} "
              f"{cell(ci['lower'])} {cell(ci['upper'])}")
    for note in notes:
        print(f"note: {note}")

    if args.out:
        _write_report(report, args.out)
        print(f"report written to {args.out}")
    return 0


def _write_report(report: dict, path: str):
    if path.endswith(".csv"):
        rows = []

        def emit(section, item, field, value):
            rows.append({"section": section, "item": item, "field": field,
                         "value": value})

        for key, val in report["model"].items():
            emit("model", key, "", val)
        for prm in report["parameters"]:
            emit("parameter", prm["name"], "estimate", prm["estimate"])
            emit("parameter", prm["name"], "se", prm["se"])
        for field in ("lower", "upper"):
            emit("variance_bounds", "", field,
                 report["variance_bounds"][field])
            if report["variance_ci"] is not None:
                emit("variance_ci", "", field, report["variance_ci"][field])
        emit("diagnostics", "epsilon_upper", "", report["epsilon_upper"])
        emit("diagnostics", "rho_uv", "", report["rho_uv"])
        for row in report["effects"]:
            item = f"{row['kind']}[{row['index']}]"
            emit("effect", item, "naive", row["naive"])
            emit("effect", item, "lower", row["bounds"]["lower"])
            emit("effect", item, "upper", row["bounds"]["upper"])
            if row["ci"] is not None:
                emit("effect", item, "ci_lower", row["ci"]["lower"])
                emit("effect", item, "ci_upper", row["ci"]["upper"])
            if row["naive_ci"] is not None:
                emit("effect", item, "naive_ci_lower",
                     row["naive_ci"]["lower"])
                emit("effect", item, "naive_ci_upper",
                     row["naive_ci"]["upper"])
        for i, note in enumerate(report["notes"]):
            emit("note", str(i), "", note)
        pd.DataFrame(rows).to_csv(path, index=False)
    else:
        with open(path, "w") as fh:
            json.dump(report, fh, indent=2, allow_nan=False)
            fh.write("\n")


def cmd_simulate(args) -> int:
    if args.design == "default":
        cfg = DgpConfig(kind=args.kind, n=args.n)
    else:
        cfg = DgpConfig(
            theta1=args.theta1, theta2=_floats(args.theta2),
            pi1=_floats(args.pi1), pi2=_floats(args.pi2),
            sigma_vstar=args.sigma_vstar, sigma_ustar=args.sigma_ustar,
            sigma_eps=args.sigma_eps, n=args.n, kind=args.kind)
    rho_grid = _floats(args.rho_grid)
    query = None
    if args.effect is not None:
        if args.effect not in _EFFECT_TOKENS:
            raise DataError(
                "bad_effect",
                f"unknown effect kind {args.effect!r}; choose from "
                f"{', '.join(_EFFECT_TOKENS)}")
        kind = _EFFECT_TOKENS[args.effect]
        h = (population_covariate_means(cfg)
             if kind in (PE_TOBIT_MEAN, PE_PROBABILITY) else None)
        query = EffectQuery(kind, index=0, h=h)
    bonf = BonferroniConfig(alpha=args.alpha, alpha1=args.alpha1)
    result = run_mc(cfg, rho_grid, reps=args.reps, base_seed=args.seed,
                    query=query,
                    method="two_step" if args.method == "two-step" else "joint",
                    bonferroni=bonf, n_jobs=args.jobs)
    os.makedirs(args.outdir, exist_ok=True)
    rec_path = os.path.join(args.outdir, "records.csv")
    agg_path = os.path.join(args.outdir, "aggregates.csv")
    long_path = os.path.join(args.outdir, "long.csv")
    result.records.to_csv(rec_path, index=False)
    result.aggregates.to_csv(agg_path, index=False)
    long_rows = []
    for _, arow in result.aggregates.iterrows():
        for series, col in _LONG_SERIES:
            long_rows.append({"rho": arow["rho"], "series": series,
                              "value": arow[col]})
    pd.DataFrame(long_rows).to_csv(long_path, index=False)
    if args.export_data:
        d = sample(replace(cfg, rho_star=rho_grid[0]),
                   np.random.SeedSequence(entropy=args.seed,
                                          spawn_key=(0, 0)))
        cols = {"y": d.y, "x": d.x}
        for j in range(d.d_w):
            cols[f"w{j + 1}"] = d.w[:, j]
        for j in range(d.d_z):
            cols[f"z{j + 1}"] = d.z[:, j]
        pd.DataFrame(cols).to_csv(args.export_data, index=False)
        print(f"dataset written to {args.export_data}")
    n_fail = result.failures()
    print(f"{len(result.records)} replications across {len(rho_grid)} "
          f"designs written to {args.outdir}"
          + (f" ({n_fail} failed)" if n_fail else ""))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "fit":
            return cmd_fit(args)
        return cmd_simulate(args)
    except EmptyIntersectionError as err:
        print(f"error: {err}", file=sys.stderr)
        return 4
    except (ConvergenceError, NumericalError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except (DataError, ValueError, KeyError, OSError,
            pd.errors.ParserError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
