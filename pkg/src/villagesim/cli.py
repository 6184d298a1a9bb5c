"""Command-line surface: synth-census, fit-baseline, simulate, report, evalue."""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy.stats

from .allocation import AcceptanceRule
from .census import (
    CensusSpec,
    StudyGroup,
    default_census_spec,
    filter_eligible,
    impute_populations,
    read_census,
    summarize,
    synthesize_census,
    write_census,
)
from .errors import ConfigurationError, SchemaError, VillagesimError
from .glm import (
    ModelFrame,
    fit_binomial_logistic,
    fit_glmm_random_intercept,
    icc_from_tau2,
    standardize,
)
from .harness import Grid, read_results, run_grid
from .estimators import Method
from .sensitivity import bias_adjusted_estimate, evalue_from_or
from .svgfig import write_power_figure, write_rate_histogram

DEFAULT_SEED = 11

_GROUP_KEYS = {
    "village_count": int,
    "distance_mean": float,
    "distance_sd": float,
    "population_mean": float,
    "population_sd": float,
    "children_mean": float,
    "children_sd": float,
    "penta0_mean": float,
    "penta0_dispersion": float,
    "rate_slope_population": float,
    "rate_slope_distance": float,
}

_GRID_KEYS = {
    "delta_r": lambda s: tuple(float(v) for v in s.split(",")),
    "pi0": lambda s: tuple(float(v) for v in s.split(",")),
    "n_per_arm": lambda s: tuple(int(v) for v in s.split(",")),
    "coef_sets": lambda s: tuple(int(v) for v in s.split(",")),
    "icc": lambda s: tuple(float(v) for v in s.split(",")),
    "reps_null": int,
    "reps_power": int,
    "methods": lambda s: tuple(Method(v.strip()) for v in s.split(",")),
    "acceptance_rule": AcceptanceRule,
    "smd_threshold": float,
    "max_draws": int,
    "pool_cap": int,
}


def _parse_section(parser: configparser.ConfigParser, section: str, known: dict) -> dict:
    if not parser.has_section(section):
        return {}
    out = {}
    for key, raw in parser.items(section):
        if key not in known:
            raise ConfigurationError(f"unknown key '{key}' in section [{section}]")
        try:
            out[key] = known[key](raw)
        except (ValueError, KeyError) as exc:
            raise ConfigurationError(f"bad value for '{key}' in [{section}]: {raw}") from exc
    return out


def load_census_spec(path: str | Path, seed: int | None = None) -> CensusSpec:
    """Census synthesis spec from INI sections [group1], [group2], [generation]."""
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigurationError(f"cannot read census spec file {path}")
    for section in parser.sections():
        if section not in ("group1", "group2", "generation"):
            raise ConfigurationError(f"unknown section [{section}] in census spec")
    default = default_census_spec()
    gen = _parse_section(
        parser, "generation", {"seed": int, "moment_tolerance": float, "max_redraws": int}
    )
    groups = {}
    for name, base in (("group1", default.group1), ("group2", default.group2)):
        overrides = _parse_section(parser, name, _GROUP_KEYS)
        groups[name] = replace(base, **overrides) if overrides else base
    spec = CensusSpec(
        group1=groups["group1"],
        group2=groups["group2"],
        seed=gen.get("seed", default.seed),
        moment_tolerance=gen.get("moment_tolerance", default.moment_tolerance),
        max_redraws=gen.get("max_redraws", default.max_redraws),
    )
    if seed is not None:
        spec = replace(spec, seed=seed)
    return spec


def load_grid_config(path: str | Path) -> dict:
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigurationError(f"cannot read config file {path}")
    for section in parser.sections():
        if section != "grid":
            raise ConfigurationError(f"unknown section [{section}] in run config")
    return _parse_section(parser, "grid", _GRID_KEYS)


def _print_summary_table(villages) -> None:
    s = summarize(villages)
    labels = {
        StudyGroup.GROUP1_CONTROL: "group 1 (control)",
        StudyGroup.GROUP2_INTERVENTION: "group 2 (intervention)",
    }
    print(f"{'characteristic':<42}" + "".join(f"{labels[g]:>24}" for g in s.per_group))
    rows = [
        ("villages", lambda g: f"{g.village_count}"),
        ("distance to health center, mean (SD)", lambda g: f"{g.distance_mean:.1f} ({g.distance_sd:.1f})"),
        ("village population, mean (SD)", lambda g: f"{g.population_mean:.1f} ({g.population_sd:.1f})"),
        ("children 12-24m, mean (SD)", lambda g: f"{g.children_mean:.1f} ({g.children_sd:.1f})"),
        ("total children 12-24m", lambda g: f"{g.total_children}"),
        ("total unvaccinated (proportion)", lambda g: f"{g.total_penta0} ({g.penta0_proportion:.2f})"),
        ("village rate, mean (SD)", lambda g: f"{g.penta0_rate_mean:.2f} ({g.penta0_rate_sd:.2f})"),
        ("village rate, median (Q1, Q3)", lambda g: f"{g.penta0_rate_median:.2f} ({g.penta0_rate_q1:.2f}, {g.penta0_rate_q3:.2f})"),
    ]
    for label, fmt in rows:
        print(f"{label:<42}" + "".join(f"{fmt(g):>24}" for g in s.per_group.values()))


def cmd_synth_census(args) -> int:
    if args.spec:
        spec = load_census_spec(args.spec, seed=args.seed)
    else:
        spec = default_census_spec(args.seed if args.seed is not None else 2024)
    villages = synthesize_census(spec)
    write_census(villages, args.out)
    print(f"wrote {len(villages)} villages to {args.out}")
    _print_summary_table(villages)
    return 0


def cmd_fit_baseline(args) -> int:
    villages = filter_eligible(impute_populations(read_census(args.census)))
    y = np.array([v.penta0_count for v in villages], dtype=float)
    m = np.array([v.children_12_24 for v in villages], dtype=float)
    pop = np.array([float(v.population) for v in villages])
    dist = np.array([v.distance_km for v in villages])
    design = np.column_stack([np.ones(len(villages)), standardize(pop), dist])
    names = ("intercept", "population_std", "distance")
    frame = ModelFrame(response=y, trials=m, design=design, column_names=names)

    failures = 0
    z = scipy.stats.norm.ppf(0.975)
    try:
        fit = fit_binomial_logistic(frame)
        se = fit.standard_errors()
        # Per-person population coefficient, mapped back from the standardized scale.
        pop_sd = float(np.std(pop, ddof=1))
        print("baseline logistic regression (lower 95% CI, estimate, upper 95% CI):")
        for j, name in enumerate(names):
            scale = pop_sd if name == "population_std" else 1.0
            lo = (fit.coefficients[j] - z * se[j]) / scale
            hi = (fit.coefficients[j] + z * se[j]) / scale
            est = fit.coefficients[j] / scale
            label = "population (per person)" if name == "population_std" else name
            print(f"  {label:<24} {lo:+.8f}  {est:+.8f}  {hi:+.8f}")
        if not fit.converged:
            print("  warning: logistic fit did not converge")
    except VillagesimError as exc:
        failures += 1
        print(f"baseline logistic regression failed: {exc}")

    try:
        glmm = fit_glmm_random_intercept(frame)
        icc = icc_from_tau2(glmm.tau2)
        flag = " (boundary)" if glmm.tau2_boundary else ""
        print(f"random-intercept model: tau2 = {glmm.tau2:.4f}{flag}, ICC = {icc:.4f}")
    except VillagesimError as exc:
        failures += 1
        print(f"random-intercept model failed: {exc}")
    return 1 if failures else 0


def _grid_from_args(args) -> Grid:
    overrides = load_grid_config(args.config) if args.config else {}
    grid = Grid(**overrides) if overrides else Grid()
    if args.scenario == "base":
        grid = replace(grid, pi0=(0.2,), coef_sets=(1,), icc=(0.22,))
    if args.delta is not None:
        grid = replace(grid, delta_r=tuple(args.delta))
    if args.pi0 is not None:
        grid = replace(grid, pi0=tuple(args.pi0))
    if args.n is not None:
        grid = replace(grid, n_per_arm=tuple(args.n))
    if args.coef_set is not None:
        grid = replace(grid, coef_sets=tuple(args.coef_set))
    if args.icc is not None:
        grid = replace(grid, icc=tuple(args.icc))
    if args.methods is not None:
        grid = replace(grid, methods=tuple(Method(v) for v in args.methods.split(",")))
    if args.reps is not None:
        grid = replace(grid, reps_null=args.reps, reps_power=args.reps)
    if args.reps_null is not None:
        grid = replace(grid, reps_null=args.reps_null)
    if args.reps_power is not None:
        grid = replace(grid, reps_power=args.reps_power)
    if args.acceptance_rule is not None:
        grid = replace(grid, acceptance_rule=AcceptanceRule(args.acceptance_rule))
    if args.smd_threshold is not None:
        grid = replace(grid, smd_threshold=args.smd_threshold)
    if args.max_draws is not None:
        grid = replace(grid, max_draws=args.max_draws)
    if args.pool_cap is not None:
        grid = replace(grid, pool_cap=args.pool_cap)
    return grid


def cmd_simulate(args) -> int:
    if args.census:
        census = filter_eligible(impute_populations(read_census(args.census)))
    else:
        census = filter_eligible(synthesize_census(default_census_spec()))
    grid = _grid_from_args(args)
    workers = args.workers or int(os.environ.get("VILLAGESIM_WORKERS", "1"))
    try:
        result = run_grid(
            grid,
            census,
            base_seed=args.seed,
            out_dir=args.out,
            workers=workers,
            resume=not args.no_resume,
            keep_indicators=args.indicators,
        )
    except VillagesimError as exc:
        # nothing ran at all: a total failure, reported like a config problem
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(
        f"ran {len(result.cells)} cells ({result.skipped} reloaded), "
        f"{len(result.failures)} failed; results in {args.out}"
    )
    for sid, method, err in result.failures:
        print(f"  FAILED {sid} {method}: {err}")
    null_cells = [c for c in result.cells if c.scenario.delta_r == 0.0]
    if null_cells:
        print("type I error (null cells):")
        for c in sorted(null_cells, key=lambda c: (c.scenario.scenario_id, c.method.value)):
            lo, hi = c.ci
            print(
                f"  {c.scenario.scenario_id:<28} {c.method.value:<14}"
                f" {c.rejection_rate:.3f} ({lo:.3f}, {hi:.3f})"
            )
    if result.failures:
        return 1 if result.cells else 2
    return 0


def cmd_report(args) -> int:
    rows = read_results(args.results)
    if not rows:
        raise SchemaError("results file has no data rows")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    header = (
        "scenario_id,delta_r,pi0,n,coef_set,icc,method,n_rep,"
        "rejection_rate,mcse,ci_low,ci_high,nonconverged\n"
    )

    def dump(name: str, subset: list[dict]) -> None:
        with open(out / name, "w") as fh:
            fh.write(header)
            for r in sorted(subset, key=lambda r: (r["scenario_id"], r["method"])):
                fh.write(
                    f"{r['scenario_id']},{r['delta_r']!r},{r['pi0']!r},{r['n']},"
                    f"{r['coef_set']},{r['icc']!r},{r['method']},{r['n_rep']},"
                    f"{r['rejection_rate']!r},{r['mcse']!r},{r['ci_low']!r},"
                    f"{r['ci_high']!r},{r['nonconverged']}\n"
                )

    dump("type1_error.csv", [r for r in rows if r["delta_r"] == 0.0])
    dump("power.csv", [r for r in rows if r["delta_r"] > 0.0])

    figures = 0
    for method in sorted({r["method"] for r in rows}):
        for icc in sorted({r["icc"] for r in rows}):
            subset = [
                r for r in rows if r["method"] == method and r["icc"] == icc and r["delta_r"] > 0
            ]
            if not subset:
                continue
            name = f"power_{method}_icc{icc:.6g}.svg".replace("/", "-")
            write_power_figure(rows, method, icc, out / name)
            figures += 1

    if args.census:
        census = filter_eligible(read_census(args.census))
        write_rate_histogram(census, out / "baseline_rates.svg")
        figures += 1
    print(f"wrote tables and {figures} figure(s) to {out}")
    return 0


def cmd_evalue(args) -> int:
    report = evalue_from_or(args.odds_ratio)
    print(f"odds ratio {report.input_or:g} -> b = {report.b:.6f}, E-value = {report.evalue:.6f}")
    if (args.rct is None) != (args.rco is None):
        raise ConfigurationError("--rct and --rco must be supplied together")
    if args.rct is not None:
        adj = bias_adjusted_estimate(
            args.odds_ratio, args.rct, args.rco, squared=not args.unsquared
        )
        variant = "squared (as published)" if adj.squared else "unsquared (conventional)"
        print(
            f"bias-adjusted estimate with R_CT={adj.r_ct:g}, R_CO={adj.r_co:g}: "
            f"{adj.adjusted:.6f} [{variant}]"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="villagesim",
        description="Cluster-trial planning simulations for village vaccination campaigns.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-census", help="generate a synthetic baseline census")
    p.add_argument("--spec", help="INI spec file overriding the built-in targets")
    p.add_argument("--out", required=True, help="output census CSV path")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth_census)

    p = sub.add_parser("fit-baseline", help="fit the baseline regression and ICC models")
    p.add_argument("census", help="census CSV file")
    p.set_defaults(func=cmd_fit_baseline)

    p = sub.add_parser("simulate", help="run the scenario grid")
    p.add_argument("--census", help="census CSV (default: built-in synthetic census)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="INI file with a [grid] section")
    p.add_argument("--scenario", choices=["base"], help="named scenario preset")
    p.add_argument("--delta", type=float, nargs="+", help="relative reductions")
    p.add_argument("--pi0", type=float, nargs="+", help="control-arm rates")
    p.add_argument("--n", type=int, nargs="+", help="villages per arm")
    p.add_argument("--coef-set", type=int, nargs="+", choices=[1, 2, 3])
    p.add_argument("--icc", type=float, nargs="+")
    p.add_argument("--methods", help="comma list: quasibinomial,beta,iptw,naive")
    p.add_argument("--reps", type=int, help="replicates for all cells")
    p.add_argument("--reps-null", type=int)
    p.add_argument("--reps-power", type=int)
    p.add_argument("--workers", type=int, default=None, help="default $VILLAGESIM_WORKERS or 1")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--acceptance-rule", choices=[r.value for r in AcceptanceRule])
    p.add_argument("--smd-threshold", type=float)
    p.add_argument("--max-draws", type=int)
    p.add_argument("--pool-cap", type=int)
    p.add_argument("--no-resume", action="store_true")
    p.add_argument("--indicators", action="store_true", help="persist per-replicate indicator log")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="emit tables and SVG figures from a results file")
    p.add_argument("--results", required=True)
    p.add_argument("--census", help="census CSV for the baseline histogram")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("evalue", help="E-value and bias-adjusted estimate")
    p.add_argument("--or", dest="odds_ratio", type=float, required=True)
    p.add_argument("--rct", type=float)
    p.add_argument("--rco", type=float)
    p.add_argument("--unsquared", action="store_true", help="use the conventional unsquared bound")
    p.set_defaults(func=cmd_evalue)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigurationError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VillagesimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
