"""Command-line front end: simulate, fit, mc-study, compare, ingest.

Every command is deterministic given its inputs and the seed; the
RANDSUM_SEED environment variable overrides the seed in any config file.
Reports are written as delimited tables with a PNG figure rendered next to
each one (suppress with --no-figures).

Exit codes: 0 success, 2 input error, 3 non-convergence, 4 replication
study exceeded the failure threshold.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import dataio, streams
from .estimate import FitOptions, FitResult, fit
from .mcstudy import run_mc_study
from .model import PanelSeries
from .simulate import (
    ResolvedSimulation,
    SimulationConfig,
    UnitDistribution,
    resolve,
    simulate_panel_detailed,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3
EXIT_STUDY_FAILED = 4

_CRASH_LIMIT = 0.20


class InputError(Exception):
    """User-facing input problem; mapped to exit code 2."""


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as handle:
            return json.load(handle)
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None


def _env_seed() -> int | None:
    raw = os.environ.get("RANDSUM_SEED")
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"RANDSUM_SEED must be an integer, got {raw!r}") from None


_UNIT_FIELDS = {"family", "gamma_shape", "sigma"}
_CONFIG_FIELDS = {
    "scenario",
    "K",
    "T",
    "delta",
    "alpha",
    "beta",
    "omega",
    "unit_dist",
    "covariate_means",
    "size_means",
    "size_constant",
    "custom_covariates",
    "burn_in",
    "seed",
}
_REQUIRED_CONFIG_FIELDS = ("scenario", "K", "T", "delta")


def _parse_unit_dist(obj) -> UnitDistribution:
    if obj is None:
        return UnitDistribution()
    if isinstance(obj, str):
        return UnitDistribution(family=obj)
    if isinstance(obj, dict):
        unknown = sorted(set(obj) - _UNIT_FIELDS)
        if unknown:
            raise InputError(f"unknown unit_dist field(s): {', '.join(unknown)}")
        return UnitDistribution(**obj)
    raise InputError("unit_dist must be a family name or an object")


def parse_sim_config(doc, seed_override: int | None = None) -> SimulationConfig:
    """Validate a JSON simulation config document field by field."""
    if not isinstance(doc, dict):
        raise InputError("config must be a JSON object")
    unknown = sorted(set(doc) - _CONFIG_FIELDS)
    if unknown:
        raise InputError(f"unknown config field(s): {', '.join(unknown)}")
    missing = [f for f in _REQUIRED_CONFIG_FIELDS if f not in doc]
    if missing:
        raise InputError(f"missing config field(s): {', '.join(missing)}")
    kwargs = dict(doc)
    kwargs["unit_dist"] = _parse_unit_dist(doc.get("unit_dist"))
    if seed_override is not None:
        kwargs["seed"] = seed_override
    try:
        return SimulationConfig(**kwargs)
    except (ValueError, TypeError) as exc:
        raise InputError(str(exc)) from None


def _figure_path(table_path) -> Path:
    return Path(table_path).with_suffix(".png")


def _fmt(value) -> str:
    """One CSV cell: floats through repr for exact round-trips."""
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _json_float(value):
    value = float(value)
    return value if math.isfinite(value) else None


# ---------------------------------------------------------------------------
# simulate


def _manifest_for(res: ResolvedSimulation, seed_source: str, stats) -> dict:
    cfg = res.config
    base = res.covariate_means
    if cfg.scenario == "scenario1":
        site_means = [list(base) for _ in range(cfg.K)]
    elif cfg.scenario == "scenario2":
        site_means = [list(0.4 * (k + 1) * base) for k in range(cfg.K)]
    else:
        site_means = None
    return {
        "scenario": cfg.scenario,
        "K": cfg.K,
        "T": cfg.T,
        "p": cfg.p,
        "delta": cfg.delta,
        "alpha": list(cfg.alpha),
        "beta": list(cfg.beta),
        "omega": [float(w) for w in res.theta_true.omega],
        "covariate_means": [float(v) for v in base],
        "site_covariate_means": site_means,
        "size_means": None if res.size_means is None else [float(t) for t in res.size_means],
        "size_constant": cfg.size_constant,
        "unit_dist": {
            "family": cfg.unit_dist.family,
            "gamma_shape": cfg.unit_dist.gamma_shape,
            "sigma": cfg.unit_dist.sigma,
        },
        "burn_in": cfg.burn_in,
        "seed": cfg.seed,
        "seed_source": seed_source,
        "truncated_size_draws": stats.truncated_steps,
        "total_size_draws": stats.total_steps,
        "truncation_rate": stats.truncation_rate,
        "substreams": {
            "omega": [cfg.seed, streams.OMEGA, "site_index"],
            "size_mean": [cfg.seed, streams.TAU, "site_index"],
            "size": [cfg.seed, streams.SIZE, "replicate", "site_index", "step_index"],
            "units": [cfg.seed, streams.UNITS, "replicate", "site_index", "step_index"],
            "covariate": [cfg.seed, streams.COVARIATE, "replicate", "site_code", "step_index"],
            "site_code": "0 for the shared scenario1 path, site_index + 1 per-site",
        },
    }


def _write_json(doc, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(doc, handle, indent=2)
        handle.write("\n")


def cmd_simulate(args) -> int:
    seed_override = _env_seed()
    cfg = parse_sim_config(_load_json(args.config), seed_override)
    res = resolve(cfg)
    panel, stats = simulate_panel_detailed(res, replicate=0)
    dataio.write_panel_csv(panel, args.out)
    manifest_path = args.manifest or Path(args.out).with_suffix(".manifest.json")
    seed_source = "env" if seed_override is not None else "config"
    _write_json(_manifest_for(res, seed_source, stats), manifest_path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit


@dataclass(frozen=True)
class ModelSpec:
    """Parsed model specification for the fit and compare commands."""

    name: str
    p: int
    covariates: tuple | None
    window: tuple | None
    options: FitOptions


_SPEC_FIELDS = {"name", "p", "covariates", "window", "delta_floor", "gtol", "maxiter", "restarts"}


def parse_model_spec(doc, path) -> ModelSpec:
    if not isinstance(doc, dict):
        raise InputError(f"{path}: model spec must be a JSON object")
    unknown = sorted(set(doc) - _SPEC_FIELDS)
    if unknown:
        raise InputError(f"{path}: unknown model spec field(s): {', '.join(unknown)}")
    p = doc.get("p", 1)
    if not (isinstance(p, int) and p >= 0):
        raise InputError(f"{path}: p must be a nonnegative integer, got {p!r}")
    covariates = doc.get("covariates")
    if covariates is not None:
        if not isinstance(covariates, list) or not all(isinstance(c, str) for c in covariates):
            raise InputError(f"{path}: covariates must be a list of column names")
        covariates = tuple(covariates)
    window = doc.get("window")
    if window is not None:
        if not (isinstance(window, list) and len(window) == 2):
            raise InputError(f"{path}: window must be [first_year, last_year]")
        window = (int(window[0]), int(window[1]))
    try:
        options = FitOptions(
            delta_floor=doc.get("delta_floor", FitOptions().delta_floor),
            gtol=doc.get("gtol", FitOptions().gtol),
            maxiter=doc.get("maxiter", FitOptions().maxiter),
            restarts=doc.get("restarts", FitOptions().restarts),
        )
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    name = doc.get("name") or Path(path).stem
    return ModelSpec(name=name, p=p, covariates=covariates, window=window, options=options)


def _check_one_family(columns) -> None:
    families = {str(c).split("_")[0].lower() for c in columns}
    if {"precip", "precipitation"} & families and "cmi" in families:
        raise InputError(
            "covariates mix precipitation and the climate moisture index; "
            "choose one of the two families"
        )


def _select_columns(panel: PanelSeries, names) -> PanelSeries:
    index = {name: i for i, name in enumerate(panel.covariate_names)}
    missing = [n for n in names if n not in index]
    if missing:
        raise InputError(f"unknown covariate column(s): {', '.join(missing)}")
    cols = [index[n] for n in names]
    return PanelSeries(
        site_ids=panel.site_ids,
        years=panel.years,
        p=panel.p,
        y=panel.y,
        n=panel.n,
        x=panel.x[:, :, cols],
        covariate_names=tuple(names),
    )


def _restrict_window(panel: PanelSeries, window) -> PanelSeries:
    lo, hi = window
    years = [int(v) for v in panel.years]
    if lo not in years or hi not in years:
        raise InputError(f"window [{lo}, {hi}] is outside the panel years {years[0]}..{years[-1]}")
    i_lo, i_hi = years.index(lo), years.index(hi)
    if i_hi < i_lo:
        raise InputError(f"window [{lo}, {hi}] is empty")
    if i_lo < panel.p:
        raise InputError(
            f"window start {lo} leaves no room for {panel.p} presample year(s) in the panel"
        )
    sl = slice(i_lo - panel.p, i_hi + 1)
    return PanelSeries(
        site_ids=panel.site_ids,
        years=panel.years[sl],
        p=panel.p,
        y=panel.y[:, sl],
        n=panel.n[:, sl],
        x=panel.x[:, i_lo - panel.p : i_hi + 1 - panel.p],
        covariate_names=panel.covariate_names,
    )


def _panel_for_spec(panel_path, spec: ModelSpec) -> PanelSeries:
    try:
        panel = dataio.read_panel_csv(panel_path, spec.p)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    names = spec.covariates if spec.covariates is not None else panel.covariate_names
    _check_one_family(names)
    if spec.covariates is not None:
        panel = _select_columns(panel, spec.covariates)
    if spec.window is not None:
        panel = _restrict_window(panel, spec.window)
    return panel


def _fit_json(result: FitResult, spec: ModelSpec, panel_path) -> dict:
    return {
        "model": spec.name,
        "panel": str(panel_path),
        "p": spec.p,
        "window": None if spec.window is None else list(spec.window),
        "converged": result.converged,
        "iterations": result.iterations,
        "restarts_used": result.restarts_used,
        "gradient_norm": _json_float(result.gradient_norm),
        "loss": result.loss_value,
        "qaic": result.qaic,
        "qaic_definition": "qaic = 2 * n_obs * loss + 2 * n_parameters",
        "n_obs": result.n_obs,
        "n_parameters": result.dim,
        "parameter_names": list(result.parameter_names),
        "estimates": [float(v) for v in result.theta_hat.to_array()],
        "tse": None if result.tse is None else [float(v) for v in result.tse],
        "covariance_available": result.covariance_available,
        "condition_number": _json_float(result.condition_number),
        "covariance": None
        if result.covariance is None
        else [[float(v) for v in row] for row in result.covariance],
    }


def effects_rows(result: FitResult) -> list:
    """Effects table: one row per parameter, Wald interval at 95 percent."""
    rows = []
    estimates = result.theta_hat.to_array()
    for i, name in enumerate(result.parameter_names):
        est = float(estimates[i])
        if result.tse is not None:
            tse = float(result.tse[i])
            row = {
                "parameter": name,
                "estimate": est,
                "tse": tse,
                "z": est / tse,
                "ci_lo": est - 1.96 * tse,
                "ci_hi": est + 1.96 * tse,
            }
        else:
            row = {
                "parameter": name,
                "estimate": est,
                "tse": None,
                "z": None,
                "ci_lo": None,
                "ci_hi": None,
            }
        rows.append(row)
    return rows


_EFFECTS_COLUMNS = ("parameter", "estimate", "tse", "z", "ci_lo", "ci_hi")


def _write_rows(rows, columns, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def cmd_fit(args) -> int:
    spec = parse_model_spec(_load_json(args.spec), args.spec)
    panel = _panel_for_spec(args.panel, spec)
    result = fit(panel, options=spec.options)
    _write_json(_fit_json(result, spec, args.panel), args.out)
    if args.effects:
        rows = effects_rows(result)
        _write_rows(rows, _EFFECTS_COLUMNS, args.effects)
        if not args.no_figures:
            from . import figures

            figures.effects_figure(rows, _figure_path(args.effects), title=spec.name)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


# ---------------------------------------------------------------------------
# mc-study


_MC_COLUMNS = (
    "scenario",
    "K",
    "T",
    "parameter",
    "true_value",
    "eqml_mean",
    "tse_mean",
    "empirical_sd",
    "coverage",
    "n_replicates",
    "n_converged",
    "n_failed",
)


def cmd_mc_study(args) -> int:
    if args.reps < 1:
        raise InputError("--reps must be at least 1")
    if args.jobs < 1:
        raise InputError("--jobs must be at least 1")
    cfg = parse_sim_config(_load_json(args.config), _env_seed())
    result = run_mc_study(cfg, args.reps, jobs=args.jobs)
    _write_rows(result.rows, _MC_COLUMNS, args.out)
    if not args.no_figures:
        from . import figures

        figures.mc_summary_figure(result.rows, _figure_path(args.out))
    if result.crash_fraction > _CRASH_LIMIT:
        print(
            f"error: {result.n_crashed} of {result.n_replicates} replicates crashed "
            f"(limit {_CRASH_LIMIT:.0%}); see the table for the converged subset",
            file=sys.stderr,
        )
        return EXIT_STUDY_FAILED
    return EXIT_OK


# ---------------------------------------------------------------------------
# compare


_COMPARE_COLUMNS = ("model", "qaic", "delta_qaic", "converged", "loss", "n_parameters")


def cmd_compare(args) -> int:
    if len(args.specs) < 2:
        raise InputError("compare needs at least two model specs")
    specs = [parse_model_spec(_load_json(p), p) for p in args.specs]
    fits = []
    windows = []
    for spec in specs:
        panel = _panel_for_spec(args.panel, spec)
        windows.append(tuple(int(v) for v in panel.obs_years))
        fits.append((spec, fit(panel, options=spec.options)))
    if len(set(windows)) > 1:
        spans = sorted({f"{w[0]}..{w[-1]}" for w in windows})
        raise InputError(
            f"model specs cover different panel windows ({', '.join(spans)}); "
            "QAIC is only comparable on the identical window"
        )
    ranked = sorted(fits, key=lambda sf: (not sf[1].converged, sf[1].qaic, sf[0].name))
    best = ranked[0][1].qaic
    rows = [
        {
            "model": spec.name,
            "qaic": res.qaic,
            "delta_qaic": res.qaic - best,
            "converged": res.converged,
            "loss": res.loss_value,
            "n_parameters": res.dim,
        }
        for spec, res in ranked
    ]
    _write_rows(rows, _COMPARE_COLUMNS, args.out)
    if not args.no_figures:
        from . import figures

        figures.qaic_figure(
            [(r["model"], r["qaic"], r["converged"]) for r in rows], _figure_path(args.out)
        )
    return EXIT_OK if any(res.converged for _, res in ranked) else EXIT_NOT_CONVERGED


# ---------------------------------------------------------------------------
# ingest


def cmd_ingest(args) -> int:
    try:
        trees = dataio.read_rings_csv(args.rings)
        covariates = dataio.read_covariates_csv(args.covariates)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if not trees:
        raise InputError(f"{args.rings}: no tree series found")

    age_class_counts = None
    if args.age_class is not None:
        n_classes = len(dataio.AGE_BREAKS) + 1
        if not 1 <= args.age_class <= n_classes:
            raise InputError(f"--age-class must be between 1 and {n_classes}")
        reference = args.reference_year
        if reference is None:
            reference = args.window[0] if args.window else min(int(t.years[0]) for t in trees)
        classes = dataio.split_age_classes(trees, reference_year=reference)
        age_class_counts = [len(c) for c in classes]
        trees = classes[args.age_class - 1]
        if not trees:
            raise InputError(f"age class {args.age_class} holds no trees at year {reference}")

    span = (
        min(int(t.years[0]) for t in trees),
        max(int(t.years[-1]) for t in trees),
    )
    try:
        panel_raw, empty_site_years = dataio.aggregate_panel(trees, span)
        spec = dataio.DesignSpec(
            climate=tuple(args.climate or ()),
            defol_lags=args.defol_lags,
            interactions=args.interactions,
            p=args.p,
            window=tuple(args.window) if args.window else None,
        )
        panel, manifest = dataio.build_design(panel_raw, covariates, spec)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    dataio.write_panel_csv(panel, args.out)
    manifest = dict(manifest)
    manifest["empty_site_years"] = [[site, year] for site, year in empty_site_years]
    manifest["age_class"] = args.age_class
    manifest["age_class_counts"] = age_class_counts
    manifest["trees_used"] = len(trees)
    manifest_path = args.manifest or Path(args.out).with_suffix(".manifest.json")
    _write_json(manifest, manifest_path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="randsum",
        description="Autoregressive panels of random sums: simulate, fit, replicate, compare.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate one panel from a JSON config")
    sim.add_argument("--config", required=True, help="simulation config JSON")
    sim.add_argument("--out", required=True, help="panel CSV to write")
    sim.add_argument("--manifest", help="manifest JSON path (default: alongside --out)")
    sim.set_defaults(handler=cmd_simulate)

    fit_p = sub.add_parser("fit", help="fit the model to a panel CSV")
    fit_p.add_argument("--panel", required=True, help="panel CSV")
    fit_p.add_argument("--spec", required=True, help="model spec JSON")
    fit_p.add_argument("--out", required=True, help="fit result JSON to write")
    fit_p.add_argument("--effects", help="effects table CSV to write")
    fit_p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    fit_p.set_defaults(handler=cmd_fit)

    mc = sub.add_parser("mc-study", help="simulate-and-fit replication study")
    mc.add_argument("--config", required=True, help="simulation config JSON")
    mc.add_argument("--reps", required=True, type=int, help="number of replicates")
    mc.add_argument("--out", required=True, help="summary table CSV to write")
    mc.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    mc.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    mc.set_defaults(handler=cmd_mc_study)

    cmp_p = sub.add_parser("compare", help="rank model specs by QAIC on one panel")
    cmp_p.add_argument("--panel", required=True, help="panel CSV")
    cmp_p.add_argument("--specs", required=True, nargs="+", help="two or more model spec JSONs")
    cmp_p.add_argument("--out", required=True, help="ranking CSV to write")
    cmp_p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    cmp_p.set_defaults(handler=cmd_compare)

    ing = sub.add_parser("ingest", help="build a panel CSV from ring and covariate tables")
    ing.add_argument("--rings", required=True, help="ring width CSV")
    ing.add_argument("--covariates", required=True, help="covariate CSV")
    ing.add_argument("--age-class", type=int, dest="age_class", help="1-based age class to keep")
    ing.add_argument("--reference-year", type=int, help="year at which ages are classified")
    ing.add_argument("--window", type=int, nargs=2, metavar=("FIRST", "LAST"), help="observed years")
    ing.add_argument("--climate", nargs="*", help="climate variable families to include")
    ing.add_argument("--defol-lags", type=int, default=5, help="defoliation lags (default 5)")
    ing.add_argument("--interactions", action="store_true", help="defoliation-by-climate products")
    ing.add_argument("--p", type=int, default=1, help="autoregressive order (default 1)")
    ing.add_argument("--out", required=True, help="panel CSV to write")
    ing.add_argument("--manifest", help="manifest JSON path (default: alongside --out)")
    ing.set_defaults(handler=cmd_ingest)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
