"""Experiment runner: parse a config, run solvers, emit traces and reports.

Config files are flat INI ([section] with key=value lines). An experiment
has one [problem] section, one or more [solver:<name>] sections, and an
optional [output] section. The output directory can be overridden with the
AFKRYLOV_OUTDIR environment variable.

Exit codes: 0 success, 1 configuration error, 2 solver failure.
"""

import argparse
import configparser
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import problems as problems_mod
from .operators import MaternSpec
from .regparam import RegParams, SelectionConfig
from .reporting import (read_trace_csv, render_figures, write_pgm,
                        write_summary_csv, write_trace_csv, write_vector_csv)
from .solvers import METHODS, SolverConfig, solve

ENV_OUTDIR = "AFKRYLOV_OUTDIR"


class ConfigError(Exception):
    pass


def _parse_ini(path):
    parser = configparser.ConfigParser()
    if not Path(path).is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parser


def _get(section, key, cast, default=None):
    if key not in section:
        return default
    raw = section[key]
    try:
        if cast is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def _problem_from_config(parser):
    if "problem" not in parser:
        raise ConfigError("config needs a [problem] section")
    sec = parser["problem"]
    if "path" in sec:
        return problems_mod.load_problem(sec["path"])
    gen = _get(sec, "generator", str)
    if gen not in problems_mod.GENERATORS:
        raise ConfigError(f"unknown problem generator {gen!r} "
                          f"(choose from {sorted(problems_mod.GENERATORS)})")
    common = dict(
        noise_level=_get(sec, "noise_level", float, 1e-5),
        seed=_get(sec, "seed", int, 0),
        n_speckles=_get(sec, "n_speckles", int),
        speckle_scale=_get(sec, "speckle_scale", float, 1.0),
        truth_matern=MaternSpec(_get(sec, "truth_nu", float, 2.5),
                                _get(sec, "truth_ell", float, 0.05)),
        solver_matern=MaternSpec(_get(sec, "solver_nu", float, 1.0),
                                 _get(sec, "solver_ell", float, 0.5)),
    )
    side = _get(sec, "side", int)
    if side is None:
        raise ConfigError("[problem] needs side=")
    if gen == "deblur":
        return problems_mod.deblur_problem(
            side, psf_sigma=_get(sec, "psf_sigma", float, 1.0),
            boundary=_get(sec, "boundary", str, "zero"),
            psf_radius=_get(sec, "psf_radius", int), **common)
    return problems_mod.projection_problem(
        side, m_factor=_get(sec, "m_factor", float, 2.0), **common)


def _solver_from_config(name, sec, problem):
    method = _get(sec, "method", str)
    if method is None:
        raise ConfigError(f"[solver:{name}] needs method=")
    if method not in METHODS:
        raise ConfigError(f"[solver:{name}]: unknown method {method!r} "
                          f"(choose from {METHODS})")
    sel_method = _get(sec, "selection", str, "wgcv")
    sigma = _get(sec, "noise_sigma", float)
    if sigma is None and problem is not None:
        sigma = problem.noise_sigma
    selection = SelectionConfig(
        method=sel_method,
        noise_sigma=sigma,
        tau_dp=_get(sec, "tau_dp", float, 1.1),
        max_evals=_get(sec, "max_evals", int, 400),
        log_bounds=(_get(sec, "log_lambda_min", float, -10.0),
                    _get(sec, "log_lambda_max", float, 2.0)),
        presearch=_get(sec, "presearch", int, 7),
    )
    fixed = None
    if sel_method == "fixed":
        lx = _get(sec, "lambda_x", float)
        lxi = _get(sec, "lambda_xi", float)
        if lx is None and lxi is None:
            raise ConfigError(f"[solver:{name}]: fixed selection needs lambda_x/lambda_xi")
        fixed = RegParams(lambda_x=lx if lx is not None else np.nan,
                          lambda_xi=lxi if lxi is not None else np.nan)
    return SolverConfig(
        method=method,
        maxit=_get(sec, "maxit", int, 100),
        tau=_get(sec, "tau", float),
        selection=selection,
        stop_tol=_get(sec, "stop_tol", float),
        fixed_params=fixed,
        reorthogonalize=_get(sec, "reorthogonalize", bool, True),
        breakdown_tol=_get(sec, "breakdown_tol", float, 1e-12),
    )


def _load_experiment(config_path):
    parser = _parse_ini(config_path)
    problem = _problem_from_config(parser)
    solvers = {}
    for section in parser.sections():
        if section.startswith("solver:"):
            name = section.split(":", 1)[1]
            solvers[name] = _solver_from_config(name, parser[section], problem)
    if not solvers:
        raise ConfigError("config needs at least one [solver:<name>] section")
    out = parser["output"] if "output" in parser else {}
    outdir = os.environ.get(ENV_OUTDIR) or out.get("dir", "afkrylov_out")
    figures = str(out.get("figures", "true")).strip().lower() in ("1", "true", "yes", "on")
    pgm = str(out.get("pgm", "true")).strip().lower() in ("1", "true", "yes", "on")
    return problem, solvers, Path(outdir), figures, pgm


def _image_side(n):
    s = int(round(np.sqrt(n)))
    return s if s * s == n else None


def cmd_run(args):
    try:
        problem, solvers, outdir, figures, pgm = _load_experiment(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    outdir.mkdir(parents=True, exist_ok=True)
    summary_rows = []
    results = {}
    failures = []
    for name, cfg in solvers.items():
        t0 = time.perf_counter()
        try:
            res = solve(problem.A, problem.Q, problem.Rinv, problem.b, cfg,
                        truth=problem)
        except Exception as exc:  # isolate per solver
            failures.append(name)
            print(f"solver {name} failed: {exc}", file=sys.stderr)
            summary_rows.append({"solver": name, "iterations": 0,
                                 "stop_reason": "error", "rel_err_u": np.nan,
                                 "rel_err_x": np.nan, "rel_err_xi": np.nan,
                                 "wall_time_s": time.perf_counter() - t0})
            continue
        wall = time.perf_counter() - t0
        results[name] = res
        sdir = outdir / name
        sdir.mkdir(parents=True, exist_ok=True)
        write_trace_csv(sdir / "trace.csv", res.trace)
        side = _image_side(len(res.u))
        for label, vec in (("u", res.u), ("x", res.x), ("xi", res.xi)):
            write_vector_csv(sdir / f"{label}.csv", vec)
            if pgm and side:
                write_pgm(sdir / f"{label}.pgm", vec.reshape(side, side))
        last = res.trace[-1] if res.trace else None
        summary_rows.append({
            "solver": name, "iterations": res.iterations,
            "stop_reason": res.stop_reason,
            "rel_err_u": last.rel_error_u if last else np.nan,
            "rel_err_x": last.rel_error_x if last else np.nan,
            "rel_err_xi": last.rel_error_xi if last else np.nan,
            "wall_time_s": wall})
        print(f"{name}: {res.iterations} iterations, stop={res.stop_reason}, "
              f"rel_err_u={summary_rows[-1]['rel_err_u']:.4g}, {wall:.2f}s")
    write_summary_csv(outdir / "summary.csv", summary_rows)
    if figures and results:
        render_figures(results, outdir / "figures", problem=problem)
    return 2 if failures else 0


def cmd_compare(args):
    traces = {}
    for path in args.traces:
        try:
            traces[Path(path)] = read_trace_csv(path)
        except (OSError, ValueError) as exc:
            print(f"error reading {path}: {exc}", file=sys.stderr)
            return 1
    names = [p.parent.name or p.stem for p in traces]
    # disambiguate duplicates
    seen = {}
    for i, nm in enumerate(names):
        seen[nm] = seen.get(nm, 0) + 1
        if seen[nm] > 1:
            names[i] = f"{nm}#{seen[nm]}"
    cols = list(traces.values())
    lengths = [len(c["k"]) for c in cols]
    kmax = max(lengths)
    padded = len(set(lengths)) > 1
    finals = [c["rel_err_u"][-1] for c in cols]
    finite = [f for f in finals if np.isfinite(f)]
    best = min(finite) if finite else np.nan

    if args.csv:
        print("k," + ",".join(f"{nm}_rel_err_u" for nm in names))
        for k in range(1, kmax + 1):
            row = [str(k)]
            for c in cols:
                row.append(format(c["rel_err_u"][k - 1], ".17g")
                           if k <= len(c["k"]) else "nan")
            print(",".join(row))
        return 0

    width = max(12, max(len(nm) for nm in names) + 2)
    print("k".rjust(4) + "".join(nm.rjust(width) for nm in names))
    for k in range(1, kmax + 1):
        row = [str(k).rjust(4)]
        for c in cols:
            row.append((format(c["rel_err_u"][k - 1], ".4e")
                        if k <= len(c["k"]) else "-").rjust(width))
        print("".join(row))
    if padded:
        print("note: traces have different lengths; shorter ones padded with '-'")
    print()
    print("solver".ljust(width) + "stop_it".rjust(9) + "final_rel_err_u".rjust(18))
    for nm, c, fin in zip(names, cols, finals):
        mark = " *" if np.isfinite(fin) and fin == best else ""
        print(nm.ljust(width) + str(int(c["k"][-1])).rjust(9)
              + format(fin, ".6e").rjust(18) + mark)
    return 0


def cmd_gen_problem(args):
    try:
        parser = _parse_ini(args.config)
        problem = _problem_from_config(parser)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    problems_mod.save_problem(problem, args.out)
    print(f"wrote problem ({problem.m}x{problem.n}) to {args.out}")
    return 0


def main(argv=None):
    ap = argparse.ArgumentParser(prog="afkrylov",
                                 description="Augmented flexible Krylov experiment runner")
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the solvers of an experiment config")
    p_run.add_argument("config")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="tabulate one or more trace.csv files")
    p_cmp.add_argument("traces", nargs="+")
    p_cmp.add_argument("--csv", action="store_true", help="machine-readable output")
    p_cmp.set_defaults(func=cmd_compare)

    p_gen = sub.add_parser("gen-problem", help="generate and serialize a problem")
    p_gen.add_argument("config")
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen_problem)

    args = ap.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
