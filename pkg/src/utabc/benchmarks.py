"""Benchmark suites comparing threshold schedules on the bundled models.

Each suite runs a set of fixed-quantile schedules plus the adaptive scheduler
against one model family, repeating every cell with derived seeds so reruns
are reproducible.  Individual run failures (budget exhaustion, convergence
above the target threshold, numerical breakdown) are recorded in the report
and never abort the suite.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import BudgetExhausted, NumericalError
from .models import build_problem
from .scheduler import AdaptiveScheduler, QuantileScheduler
from .smc import run_abc_smc

logger = logging.getLogger(__name__)

__all__ = [
    "RunRecord",
    "TOY_QUANTILES",
    "STANDARD_QUANTILES",
    "HOPF_T_FULL",
    "HOPF_T_CI",
    "run_toy_suite",
    "run_repressilator_suite",
    "run_hopf_suite",
    "run_suite",
    "write_report_csv",
    "read_report_csv",
    "summarize",
    "cost_variability",
]

# Quantile grids.  The toy sweep uses a fine grid; the ODE suites use the
# coarser five-point grid that keeps their runtime tolerable.
TOY_QUANTILES = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
STANDARD_QUANTILES = (0.1, 0.3, 0.5, 0.7, 0.9)

HOPF_T_FULL = (100, 200, 300, 400, 500)
HOPF_T_CI = (100, 300)


@dataclass
class RunRecord:
    """One benchmark run: a (suite, case, schedule, repeat) cell."""

    suite: str
    case: str
    schedule: str
    repeat: int
    seed: int
    terminated: str
    total_simulations: int
    rounds: int
    final_epsilon: float
    target_epsilon: float
    posterior_mean: float
    failed: bool
    failure_kind: str  # "", "budget", "stuck", or "error"


def _classify(terminated: str, final_epsilon: float, target: float) -> Tuple[bool, str]:
    """Label a finished run.

    A run fails by exhausting its simulation cap or by converging while the
    threshold is still above the target (the stuck case); the two are flagged
    distinctly so reports can separate expense from entrapment.
    """
    if terminated == "target-reached":
        return False, ""
    if terminated == "budget-exhausted":
        return True, "budget"
    if terminated == "epsilon-converged" and final_epsilon > target:
        return True, "stuck"
    return False, ""


def _run_one(suite, case, schedule_name, scheduler, problem, *, n_particles,
             budget, seed, repeat) -> RunRecord:
    try:
        result = run_abc_smc(
            problem.model,
            problem.prior,
            problem.observed,
            scheduler,
            n_particles=n_particles,
            target_epsilon=problem.target_epsilon,
            budget=budget,
            seed=seed,
        )
    except (NumericalError, BudgetExhausted) as exc:
        logger.warning("%s/%s/%s rep %d: %s", suite, case, schedule_name, repeat, exc)
        return RunRecord(suite, case, schedule_name, repeat, seed,
                         "error", 0, 0, float("nan"), problem.target_epsilon,
                         float("nan"), True, "error")
    final = result.final
    if final is None:  # stopped before completing a single round
        mean = float("nan")
        final_eps = float("inf")
    else:
        mean = float(np.average(final.thetas[:, 0], weights=final.weights))
        final_eps = float(final.epsilon)
    failed, kind = _classify(result.terminated, final_eps, problem.target_epsilon)
    return RunRecord(
        suite, case, schedule_name, repeat, seed,
        result.terminated, result.total_simulations, len(result.populations),
        final_eps, problem.target_epsilon, mean, failed, kind,
    )


def _schedules(quantiles, include_adaptive, adaptive_kwargs):
    pairs = [(f"q{a:g}", lambda a=a: QuantileScheduler(a)) for a in quantiles]
    if include_adaptive:
        pairs.append(("adaptive", lambda: AdaptiveScheduler(**(adaptive_kwargs or {}))))
    return pairs


def run_toy_suite(repeats: int = 20, seed: int = 0, *, n_particles: int = 500,
                  budget: int = 1_000_000, quantiles: Sequence[float] = TOY_QUANTILES,
                  include_adaptive: bool = True,
                  adaptive_kwargs: Optional[dict] = None) -> List[RunRecord]:
    """Quantile sweep on the scalar two-basin model."""
    problem = build_problem("toy")
    records = []
    for name, make in _schedules(quantiles, include_adaptive, adaptive_kwargs):
        for rep in range(repeats):
            records.append(_run_one(
                "toy-quantile-sweep", "toy", name, make(), problem,
                n_particles=n_particles, budget=budget, seed=seed + rep,
                repeat=rep))
    return records


def run_repressilator_suite(repeats: int = 10, seed: int = 1000, *,
                            n_particles: int = 150, budget: int = 100_000,
                            quantiles: Sequence[float] = STANDARD_QUANTILES,
                            include_adaptive: bool = True,
                            adaptive_kwargs: Optional[dict] = None) -> List[RunRecord]:
    """Oscillatory gene-network inference at a fixed L2 target of 35."""
    problem = build_problem("repressilator")
    records = []
    for name, make in _schedules(quantiles, include_adaptive, adaptive_kwargs):
        for rep in range(repeats):
            records.append(_run_one(
                "repressilator", "repressilator", name, make(), problem,
                n_particles=n_particles, budget=budget, seed=seed + rep,
                repeat=rep))
    return records


def run_hopf_suite(repeats: int = 10, seed: int = 2000, *,
                   n_particles: int = 100, budget: int = 100_000,
                   t_grid: Sequence[int] = HOPF_T_FULL,
                   quantiles: Sequence[float] = STANDARD_QUANTILES,
                   include_adaptive: bool = True,
                   adaptive_kwargs: Optional[dict] = None) -> List[RunRecord]:
    """Bifurcating oscillator stress test over growing data sizes.

    Each data size T gets its own observed set and target sqrt(80*T); the
    per-run simulation cap acts as the failure cutoff.
    """
    records = []
    for t in t_grid:
        problem = build_problem("hopf", n_points=int(t))
        for name, make in _schedules(quantiles, include_adaptive, adaptive_kwargs):
            for rep in range(repeats):
                records.append(_run_one(
                    "hopf", f"T={t}", name, make(), problem,
                    n_particles=n_particles, budget=budget, seed=seed + rep,
                    repeat=rep))
    return records


_SUITES = {
    "toy-quantile-sweep": run_toy_suite,
    "repressilator": run_repressilator_suite,
    "hopf": run_hopf_suite,
}


def run_suite(name: str, repeats: Optional[int] = None,
              seed: Optional[int] = None, **kwargs) -> List[RunRecord]:
    """Run a registered suite by name with optional overrides."""
    if name not in _SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(_SUITES)}")
    fn = _SUITES[name]
    if repeats is not None:
        kwargs["repeats"] = repeats
    if seed is not None:
        kwargs["seed"] = seed
    return fn(**kwargs)


# ---------------------------------------------------------------------------
# report I/O and aggregation


def write_report_csv(path, records: Sequence[RunRecord]) -> Path:
    path = Path(path)
    cols = [f.name for f in fields(RunRecord)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for rec in records:
            w.writerow([getattr(rec, c) for c in cols])
    return path


def read_report_csv(path) -> List[RunRecord]:
    records = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(RunRecord(
                row["suite"], row["case"], row["schedule"], int(row["repeat"]),
                int(row["seed"]), row["terminated"], int(row["total_simulations"]),
                int(row["rounds"]), float(row["final_epsilon"]),
                float(row["target_epsilon"]), float(row["posterior_mean"]),
                row["failed"] == "True", row["failure_kind"]))
    return records


def summarize(records: Sequence[RunRecord], *, cap: Optional[int] = None) -> Dict:
    """Aggregate per (case, schedule): failure fraction and cost medians.

    ``median_ok`` uses successful runs only (NaN when none succeeded);
    ``median_capped`` counts every failed run at ``cap`` simulations, so
    schedules that fail often pay for it in the aggregate.  ``cap`` defaults
    to the largest simulation count seen in the records.
    """
    if cap is None:
        cap = max((r.total_simulations for r in records), default=0)
    cells: Dict[Tuple[str, str], List[RunRecord]] = {}
    for rec in records:
        cells.setdefault((rec.case, rec.schedule), []).append(rec)
    out = {}
    for key, recs in cells.items():
        ok = [r.total_simulations for r in recs if not r.failed]
        capped = [cap if r.failed else r.total_simulations for r in recs]
        out[key] = {
            "n": len(recs),
            "failures": sum(r.failed for r in recs),
            "failure_fraction": sum(r.failed for r in recs) / len(recs),
            "median_ok": float(np.median(ok)) if ok else float("nan"),
            "median_capped": float(np.median(capped)),
        }
    return out


def cost_variability(records: Sequence[RunRecord], *, cases: Sequence[str],
                     cap: Optional[int] = None) -> Dict[str, float]:
    """Max/min of per-case capped median cost, per schedule.

    Measures how strongly a schedule's typical expense swings across the
    listed cases.  A schedule with no successful runs in some case still gets
    a finite (cap-dominated) ratio; a schedule missing a case entirely gets
    ``inf``.
    """
    summary = summarize(records, cap=cap)
    schedules = sorted({sched for (_, sched) in summary})
    out = {}
    for sched in schedules:
        meds = []
        for case in cases:
            cell = summary.get((case, sched))
            meds.append(cell["median_capped"] if cell else float("nan"))
        if any(not np.isfinite(m) for m in meds) or min(meds) <= 0:
            out[sched] = float("inf")
        else:
            out[sched] = float(max(meds) / min(meds))
    return out
