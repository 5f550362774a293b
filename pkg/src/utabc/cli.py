"""Command-line front end: single runs, benchmark suites, curve prediction.

Configuration is a flat ``key = value`` text file (one pair per line, ``#``
comments allowed).  Parse problems are reported with the file name and line
number.  Exit codes: 0 success, 2 configuration error, 3 simulation budget
exhausted, 4 stuck (threshold converged above the target).
"""

from __future__ import annotations

import argparse
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import benchmarks, io
from .errors import ConfigError, NumericalError
from .models import build_problem, model_names
from .scheduler import (
    AdaptiveScheduler,
    QuantileScheduler,
    curve_prediction_error,
    predict_curve,
    predict_curve_from_prior,
)
from .smc import Population, adapt_kernel, run_abc_smc

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_STUCK = 4


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse flat key=value lines into {key: (raw value, line number)}."""
    entries: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        # inline comments: a # or ; preceded by whitespace
        line = re.split(r"\s[#;]", line, maxsplit=1)[0].rstrip()
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: missing key before '='")
        if not value:
            raise ConfigError(f"{source}:{lineno}: missing value for key {key!r}")
        if key in entries:
            first = entries[key][1]
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first set on line {first})")
        entries[key] = (value, lineno)
    return entries


# Recognised keys and their types.  "schema" in the README mirrors this table.
_KEYS = {
    "model": str,
    "n_points": int,
    "n_particles": int,
    "budget": int,
    "seed": int,
    "target_epsilon": float,
    "scheduler": str,
    "alpha": float,
    "delta": float,
    "mixture_samples": int,
    "grid_size": int,
    "k_steep": float,
    "components": str,  # integer or "bic"
    "k_max": int,
    "ut_alpha": float,
    "ut_beta": float,
    "ut_kappa": float,
    "prior_draws": int,
    "population": str,
    "prev_epsilon": float,
    "out": str,
}


def _typed(entries: dict, source: str) -> dict:
    cfg = {}
    for key, (raw, lineno) in entries.items():
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        caster = _KEYS[key]
        try:
            cfg[key] = caster(raw)
        except ValueError:
            raise ConfigError(
                f"{source}:{lineno}: value for {key!r} must be {caster.__name__}, got {raw!r}")
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}")
    return _typed(parse_config_text(text, str(path)), str(path))


def _components_value(cfg: dict, source: str = "config"):
    raw = cfg.get("components")
    if raw is None:
        return None
    if raw == "bic":
        return "bic"
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{source}: components must be an integer or 'bic', got {raw!r}")


def _build_problem_from(cfg: dict):
    if "model" not in cfg:
        raise ConfigError("config: required key 'model' is missing")
    name = cfg["model"]
    if name not in model_names():
        raise ConfigError(f"config: unknown model {name!r}; choose from {model_names()}")
    opts = {}
    if "n_points" in cfg:
        opts["n_points"] = cfg["n_points"]
    try:
        problem = build_problem(name, **opts)
    except TypeError:
        raise ConfigError(f"config: model {name!r} does not take n_points")
    return problem


def _build_scheduler(cfg: dict):
    kind = cfg.get("scheduler", "adaptive")
    if kind == "quantile":
        return QuantileScheduler(cfg.get("alpha", 0.5))
    if kind != "adaptive":
        raise ConfigError(f"config: scheduler must be 'adaptive' or 'quantile', got {kind!r}")
    kwargs = {}
    for key in ("delta", "mixture_samples", "grid_size", "k_steep", "k_max",
                "ut_alpha", "ut_beta", "ut_kappa"):
        if key in cfg:
            kwargs[key] = cfg[key]
    comp = _components_value(cfg)
    if comp is not None:
        kwargs["components"] = comp
    return AdaptiveScheduler(**kwargs)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    problem = _build_problem_from(cfg)
    scheduler = _build_scheduler(cfg)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    n_particles = cfg.get("n_particles", 500)
    budget = cfg.get("budget", 1_000_000)
    target = cfg.get("target_epsilon", problem.target_epsilon)
    out = Path(args.out or cfg.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)

    start = time.perf_counter()
    result = run_abc_smc(
        problem.model, problem.prior, problem.observed, scheduler,
        n_particles=n_particles, target_epsilon=target, budget=budget,
        seed=seed)
    wall = time.perf_counter() - start

    for t, pop in enumerate(result.populations, 1):
        io.write_population_csv(out / f"pop_{t}.csv", pop)
    for t, curve in enumerate(result.curves, 1):
        if curve is not None:
            io.write_curve_csv(out / f"curve_{t}.csv", curve)
    io.write_decisions(out / "decisions.jsonl", result.decisions)
    io.write_summary(out / "summary.json", result, model_name=cfg["model"],
                     seed=seed, n_particles=n_particles, target_epsilon=target,
                     budget=budget, wall_time=wall)

    print(f"{result.terminated} after {len(result.populations)} rounds, "
          f"{result.total_simulations} simulations -> {out}")
    if result.terminated == "budget-exhausted":
        return EXIT_BUDGET
    if result.terminated == "epsilon-converged" and (
        result.final is None or result.final.epsilon > target
    ):
        return EXIT_STUCK
    return EXIT_OK


def cmd_benchmark(args) -> int:
    kwargs = {}
    if args.suite == "hopf" and args.ci:
        kwargs["t_grid"] = benchmarks.HOPF_T_CI
    records = benchmarks.run_suite(args.suite, repeats=args.repeats,
                                   seed=args.seed, **kwargs)
    out = Path(args.out or f"{args.suite}_report.csv")
    benchmarks.write_report_csv(out, records)
    failed = sum(r.failed for r in records)
    print(f"{len(records)} runs ({failed} failed) -> {out}")
    return EXIT_OK


def cmd_curve(args) -> int:
    cfg = load_config(args.config)
    problem = _build_problem_from(cfg)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    rng = np.random.default_rng(seed)
    comp = _components_value(cfg)

    kwargs = dict(
        mixture_samples=cfg.get("mixture_samples", 5000),
        grid_size=cfg.get("grid_size", 200),
        k_steep=cfg.get("k_steep", 50.0),
        seed=seed,
    )
    if comp is not None:
        kwargs["components"] = comp
    if "k_max" in cfg:
        kwargs["k_max"] = cfg["k_max"]

    prev = kernel = None
    if "population" in cfg:
        pop_path = Path(cfg["population"])
        if not pop_path.exists():
            print(f"error: population file not found: {pop_path}", file=sys.stderr)
            return EXIT_CONFIG
        thetas, weights, distances = io.read_population_csv(pop_path)
        prev_eps = cfg.get("prev_epsilon", float(np.max(distances)))
        prev = Population(thetas, weights, distances, 1, prev_eps)
        kernel = adapt_kernel(prev)
        curve = predict_curve(prev, kernel, problem.model, problem.observed,
                              problem.prior, prev_epsilon=prev_eps, **kwargs)
    else:
        curve = predict_curve_from_prior(
            problem.prior, cfg.get("prior_draws", 500), problem.model,
            problem.observed, **kwargs)

    out = Path(args.out or "curve.csv")
    io.write_curve_csv(out, curve)
    print(f"curve on {len(curve.grid)} grid points -> {out}")

    if args.mc_check:
        mse, eps_values, predicted, mc = curve_prediction_error(
            curve, problem.model, problem.observed, problem.prior,
            prev=prev, kernel=kernel, seed=seed)
        with out.open("a") as fh:
            fh.write("# mc-check: epsilon,predicted,mc\n")
            for e, p, m in zip(eps_values, predicted, mc):
                fh.write(f"# {float(e)!r},{float(p)!r},{float(m)!r}\n")
        print(f"mc-check mse: {mse:.6g}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="utabc",
        description="ABC SMC with adaptive threshold selection")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one inference from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.set_defaults(fn=cmd_run)

    p_bench = sub.add_parser("benchmark", help="run a benchmark suite")
    p_bench.add_argument("--suite", required=True,
                         choices=["toy-quantile-sweep", "repressilator", "hopf"])
    p_bench.add_argument("--repeats", type=int, default=None)
    p_bench.add_argument("--seed", type=int, default=None)
    p_bench.add_argument("--out", default=None, help="report CSV path")
    p_bench.add_argument("--ci", action="store_true",
                         help="reduced hopf grid (T=100,300)")
    p_bench.set_defaults(fn=cmd_benchmark)

    p_curve = sub.add_parser("curve", help="predict an acceptance-rate curve")
    p_curve.add_argument("--config", required=True)
    p_curve.add_argument("--seed", type=int, default=None)
    p_curve.add_argument("--out", default=None, help="curve CSV path")
    p_curve.add_argument("--mc-check", action="store_true",
                         help="append a Monte-Carlo comparison and report MSE")
    p_curve.set_defaults(fn=cmd_curve)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
