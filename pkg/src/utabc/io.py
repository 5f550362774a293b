"""On-disk run artefacts: population/curve CSVs, decision log, run summary."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

__all__ = [
    "write_population_csv",
    "read_population_csv",
    "write_curve_csv",
    "write_decisions",
    "write_summary",
]


def write_population_csv(path, population) -> Path:
    """theta_1..theta_L, weight, distance — one row per particle."""
    path = Path(path)
    dim = population.thetas.shape[1]
    header = [f"theta_{k + 1}" for k in range(dim)] + ["weight", "distance"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for theta, wt, d in zip(
            population.thetas, population.weights, population.distances
        ):
            w.writerow([repr(float(v)) for v in theta] + [repr(float(wt)), repr(float(d))])
    return path


def read_population_csv(path):
    """Inverse of :func:`write_population_csv`: (thetas, weights, distances)."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    names = list(data.dtype.names)
    theta_cols = [n for n in names if n.startswith("theta_")]
    theta_cols.sort(key=lambda n: int(n.split("_")[1]))
    rows = np.atleast_1d(data)
    thetas = np.column_stack([rows[c] for c in theta_cols])
    return thetas, np.atleast_1d(rows["weight"]), np.atleast_1d(rows["distance"])


def write_curve_csv(path, curve) -> Path:
    """epsilon, predicted_rate, curvature — one row per grid point."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epsilon", "predicted_rate", "curvature"])
        for e, r, c in zip(curve.grid, curve.rates, curve.second_derivs):
            w.writerow([repr(float(e)), repr(float(r)), repr(float(c))])
    return path


def write_decisions(path, decisions) -> Path:
    """One JSON object per line, in round order."""
    path = Path(path)
    with path.open("w") as fh:
        for t, dec in enumerate(decisions, start=1):
            rec = {"round": t}
            rec.update(dec.log_record())
            fh.write(json.dumps(rec) + "\n")
    return path


def write_summary(path, result, *, model_name, seed, n_particles, target_epsilon, budget, wall_time=None) -> Path:
    final = result.final
    summary = {
        "model": model_name,
        "seed": int(seed),
        "n_particles": int(n_particles),
        "target_epsilon": float(target_epsilon),
        "budget": int(budget),
        "terminated": result.terminated,
        "rounds": len(result.populations),
        "total_simulations": int(result.total_simulations),
        "epsilons": [float(e) for e in result.epsilons],
        "simulations_per_round": [int(p.simulations_used) for p in result.populations],
        "final_epsilon": float(final.epsilon) if final is not None else None,
        "posterior_mean": (
            [float(v) for v in final.posterior_mean()] if final is not None else None
        ),
    }
    if wall_time is not None:
        summary["wall_time_s"] = float(wall_time)
    path = Path(path)
    with path.open("w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return path
