"""Sequential Monte Carlo sampler for approximate Bayesian computation.

Round 1 is plain rejection sampling from the prior; later rounds resample the
previous population by weight, perturb with a Gaussian kernel whose covariance
is twice the weighted empirical covariance of that population, simulate with
observation noise, and accept when the distance to the observed data falls
below the round threshold.  Thresholds come from a pluggable scheduler (see
:mod:`utabc.scheduler`).

Reproducibility: every proposal gets its own RNG stream keyed by
``(seed, round, lane, counter)``, so results are bitwise reproducible and do
not depend on how proposals would be distributed over workers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    BudgetExhausted,
    NumericalError,
    SchedulerConverged,
    SimulationFailure,
)
from .models import Dataset, ModelSpec, Prior, distance

__all__ = [
    "Particle",
    "Population",
    "PerturbationKernel",
    "RunResult",
    "CountingModel",
    "rejection_round",
    "sample_and_perturb",
    "compute_weight",
    "compute_weights",
    "adapt_kernel",
    "quantile_threshold",
    "run_abc_smc",
]

logger = logging.getLogger(__name__)

KERNEL_SCALE = 2.0
KERNEL_EIG_TOL = 1e-10
KERNEL_REG = 1e-8
SUPPORT_REDRAW_LIMIT = 10 ** 6
CONVERGENCE_REL_TOL = 1e-3
CONVERGENCE_ROUNDS = 2

# RNG stream lanes (third entry of the stream key)
_LANE_PROPOSAL = 0
_LANE_SCHEDULER = 1


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng((int(seed),) + tuple(int(k) for k in key))


@dataclass
class Particle:
    """One weighted parameter sample with its realised distance."""

    theta: np.ndarray
    weight: float
    distance: float


@dataclass
class Population:
    """An accepted sample of one SMC round.

    ``simulations_used`` counts every model evaluation attributed to the
    round, including the scheduler's own evaluations made while choosing the
    threshold; ``proposals`` counts only the accept/reject simulations, so the
    round acceptance rate is ``len(population) / proposals``.
    """

    thetas: np.ndarray
    weights: np.ndarray
    distances: np.ndarray
    round_index: int
    epsilon: float
    simulations_used: int = 0
    proposals: int = 0

    def __post_init__(self):
        self.thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        self.distances = np.asarray(self.distances, dtype=float)
        n = self.thetas.shape[0]
        if self.weights.shape != (n,) or self.distances.shape != (n,):
            raise ValueError("weights/distances must match the number of particles")
        if not np.all(np.isfinite(self.thetas)):
            raise ValueError("non-finite particle coordinates")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and normalised")
        if np.any(self.distances > self.epsilon):
            raise ValueError("accepted distance exceeds the round threshold")

    def __len__(self):
        return self.thetas.shape[0]

    @property
    def parameter_dim(self) -> int:
        return self.thetas.shape[1]

    @property
    def particles(self) -> List[Particle]:
        return [
            Particle(self.thetas[i].copy(), float(self.weights[i]), float(self.distances[i]))
            for i in range(len(self))
        ]

    def posterior_mean(self) -> np.ndarray:
        return self.weights @ self.thetas


@dataclass
class PerturbationKernel:
    """Zero-mean Gaussian move kernel with a fixed covariance."""

    covariance: np.ndarray
    _chol: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        self._chol = np.linalg.cholesky(self.covariance)
        L = self.covariance.shape[0]
        self._lognorm = -0.5 * L * np.log(2.0 * np.pi) - np.sum(
            np.log(np.diag(self._chol))
        )

    @property
    def dim(self) -> int:
        return self.covariance.shape[0]

    def sample(self, rng: np.random.Generator, center: np.ndarray) -> np.ndarray:
        return center + self._chol @ rng.standard_normal(self.dim)

    def density(self, theta, centers) -> np.ndarray:
        """K(theta | center) for each row of ``centers`` (or a matrix of both).

        ``theta`` may be a single vector or an (n, L) block; the result has
        shape (n_centers,) or (n, n_centers).
        """
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        diff = theta[:, None, :] - centers[None, :, :]  # (n, m, L)
        n, m, L = diff.shape
        z = solve_triangular(self._chol, diff.reshape(-1, L).T, lower=True)
        quad = np.sum(z * z, axis=0).reshape(n, m)
        dens = np.exp(self._lognorm - 0.5 * quad)
        return dens[0] if dens.shape[0] == 1 and theta.shape[0] == 1 else dens


@dataclass
class RunResult:
    """Outcome of one full SMC run."""

    populations: List[Population]
    total_simulations: int
    terminated: str  # "target-reached" | "budget-exhausted" | "epsilon-converged"
    decisions: list = field(default_factory=list)
    curves: list = field(default_factory=list)

    @property
    def final(self) -> Optional[Population]:
        return self.populations[-1] if self.populations else None

    @property
    def epsilons(self) -> np.ndarray:
        return np.array([p.epsilon for p in self.populations])


class CountingModel:
    """Wraps a :class:`ModelSpec`, counting simulate calls against a budget.

    Every forward evaluation — accepted, rejected, failed, or made by the
    scheduler while predicting acceptance-rate curves — increments the count.
    """

    def __init__(self, spec: ModelSpec, budget: Optional[int] = None):
        self.spec = spec
        self.budget = budget
        self.count = 0

    def simulate(self, theta, rng: Optional[np.random.Generator] = None) -> Dataset:
        if self.budget is not None and self.count >= self.budget:
            raise BudgetExhausted(f"simulation budget of {self.budget} used up")
        self.count += 1
        return self.spec.simulate(theta, rng)

    def __getattr__(self, name):
        return getattr(self.spec, name)


# ---------------------------------------------------------------------------
# round-level operations


def quantile_threshold(population_or_distances, alpha: float) -> float:
    """alpha-quantile of a population's distances, linearly interpolated."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("quantile level must lie strictly between 0 and 1")
    d = (
        population_or_distances.distances
        if isinstance(population_or_distances, Population)
        else np.asarray(population_or_distances, dtype=float)
    )
    if d.size == 0:
        raise ValueError("no distances to take a quantile of")
    return float(np.quantile(d, alpha, method="linear"))


def adapt_kernel(population: Population, scale: float = KERNEL_SCALE) -> PerturbationKernel:
    """Move kernel with covariance ``scale`` x weighted population covariance.

    Uses the plain weighted (population) covariance, no bias correction.  If
    the smallest eigenvalue falls below 1e-10 the covariance is inflated by
    1e-8 * mean(diagonal) * I — with an absolute floor for the fully
    degenerate all-identical case — and a warning is logged.
    """
    w = population.weights
    mu = w @ population.thetas
    centered = population.thetas - mu
    cov = scale * (centered.T * w) @ centered
    cov = 0.5 * (cov + cov.T)
    eigmin = float(np.linalg.eigvalsh(cov).min())
    if eigmin < KERNEL_EIG_TOL:
        lam = KERNEL_REG * max(np.trace(cov) / cov.shape[0], KERNEL_REG)
        cov = cov + lam * np.eye(cov.shape[0])
        logger.warning(
            "perturbation kernel covariance nearly singular "
            "(min eigenvalue %.3e); regularised with %.3e * I",
            eigmin,
            lam,
        )
    return PerturbationKernel(cov)


def sample_and_perturb(
    prev: Population,
    kernel: PerturbationKernel,
    prior: Prior,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw one particle by weight from ``prev`` and move it with ``kernel``.

    Redraws until the perturbed point has positive prior density; a stall of
    10^6 consecutive rejections indicates an impossible prior/kernel pairing
    and raises ``ValueError``.
    """
    cumw = np.cumsum(prev.weights)
    for _ in range(SUPPORT_REDRAW_LIMIT):
        idx = int(np.searchsorted(cumw, rng.random() * cumw[-1]))
        idx = min(idx, len(prev) - 1)
        theta = kernel.sample(rng, prev.thetas[idx])
        if prior.pdf(theta) > 0.0:
            return theta
    raise ValueError(
        "could not draw a prior-supported perturbation in 10^6 attempts; "
        "check that the prior support and kernel scale are compatible"
    )


def compute_weight(
    theta,
    prev: Population,
    kernel: PerturbationKernel,
    prior: Prior,
) -> float:
    """Unnormalised importance weight prior(theta) / sum_j w_j K(theta|theta_j)."""
    return float(
        compute_weights(np.atleast_2d(np.asarray(theta, dtype=float)), prev, kernel, prior)[0]
    )


def compute_weights(
    thetas: np.ndarray,
    prev: Population,
    kernel: PerturbationKernel,
    prior: Prior,
) -> np.ndarray:
    """Vectorised unnormalised importance weights for a block of particles."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    dens = kernel.density(thetas, prev.thetas)
    dens = np.atleast_2d(dens)
    denom = dens @ prev.weights
    if np.any(~np.isfinite(denom)) or np.any(denom <= 0.0):
        raise NumericalError("importance-weight denominator is zero or non-finite")
    num = np.atleast_1d(prior.pdf(thetas))
    w = num / denom
    if not np.all(np.isfinite(w)):
        raise NumericalError("non-finite importance weight")
    return w


class _DistanceTracker:
    """Running minimum of every realised (noisy) simulation distance."""

    def __init__(self):
        self.value: Optional[float] = None

    def update(self, d: float):
        if self.value is None or d < self.value:
            self.value = d


def rejection_round(
    model,
    prior: Prior,
    observed: Dataset,
    epsilon1: float,
    n_particles: int,
    seed: int = 0,
    round_index: int = 1,
    tracker: Optional[_DistanceTracker] = None,
) -> Population:
    """Plain rejection sampling from the prior at threshold ``epsilon1``.

    Accepted particles all carry weight 1/N.  ``model`` may be a
    :class:`CountingModel`, in which case a tight budget surfaces as
    :class:`BudgetExhausted`.
    """
    if n_particles < 2:
        raise ValueError("need at least 2 particles")
    metric = model.distance_metric
    thetas, dists = [], []
    proposal = 0
    while len(thetas) < n_particles:
        rng = _stream(seed, round_index, _LANE_PROPOSAL, proposal)
        proposal += 1
        theta = prior.sample(rng)
        try:
            data = model.simulate(theta, rng)
        except SimulationFailure:
            continue
        d = distance(data, observed, metric)
        if tracker is not None:
            tracker.update(d)
        if d <= epsilon1:
            thetas.append(theta)
            dists.append(d)
    n = len(thetas)
    return Population(
        np.array(thetas),
        np.full(n, 1.0 / n),
        np.array(dists),
        round_index=round_index,
        epsilon=epsilon1,
        proposals=proposal,
    )


def _smc_round(
    model,
    prior: Prior,
    observed: Dataset,
    prev: Population,
    kernel: PerturbationKernel,
    epsilon: float,
    n_particles: int,
    seed: int,
    round_index: int,
    tracker: _DistanceTracker,
) -> Population:
    metric = model.distance_metric
    thetas, dists = [], []
    proposal = 0
    while len(thetas) < n_particles:
        rng = _stream(seed, round_index, _LANE_PROPOSAL, proposal)
        proposal += 1
        theta = sample_and_perturb(prev, kernel, prior, rng)
        try:
            data = model.simulate(theta, rng)
        except SimulationFailure:
            continue
        d = distance(data, observed, metric)
        tracker.update(d)
        if d <= epsilon:
            thetas.append(theta)
            dists.append(d)
    thetas = np.array(thetas)
    w = compute_weights(thetas, prev, kernel, prior)
    total = w.sum()
    if total <= 0.0:
        raise NumericalError("importance weights sum to zero")
    return Population(
        thetas,
        w / total,
        np.array(dists),
        round_index=round_index,
        epsilon=epsilon,
        proposals=proposal,
    )


def run_abc_smc(
    model: ModelSpec,
    prior: Prior,
    observed: Dataset,
    scheduler,
    n_particles: int,
    target_epsilon: float,
    budget: int,
    seed: int = 0,
) -> RunResult:
    """Run SMC rounds until the target threshold, convergence, or the budget.

    Stopping rules, checked after each completed round:

    * ``target-reached``  — the round ran at epsilon <= ``target_epsilon``;
    * ``epsilon-converged`` — relative threshold reduction below 1e-3 for two
      consecutive rounds (also raised directly by the scheduler when it cannot
      propose any decrease);
    * ``budget-exhausted`` — the budget ran out mid-round (the partial round
      is discarded).

    The scheduler object must expose ``propose(round_index=..., prev=...,
    kernel=..., prior=..., model=..., observed=..., prev_epsilon=...,
    d_min=..., n_particles=..., rng=...)`` returning a decision with an
    ``epsilon`` attribute.
    """
    if n_particles < 2:
        raise ValueError("need at least 2 particles")
    if budget < n_particles:
        raise ValueError("budget smaller than the population size")

    counting = CountingModel(model, budget)
    tracker = _DistanceTracker()
    populations: List[Population] = []
    decisions, curves = [], []
    prev: Optional[Population] = None
    prev_eps: Optional[float] = None
    slow_rounds = 0
    terminated = None
    t = 1
    while True:
        kernel = adapt_kernel(prev) if prev is not None else None
        round_start = counting.count
        try:
            decision = scheduler.propose(
                round_index=t,
                prev=prev,
                kernel=kernel,
                prior=prior,
                model=counting,
                observed=observed,
                prev_epsilon=prev_eps,
                d_min=tracker.value,
                n_particles=n_particles,
                rng=_stream(seed, t, _LANE_SCHEDULER),
            )
        except SchedulerConverged:
            terminated = "epsilon-converged"
            break
        except BudgetExhausted:
            terminated = "budget-exhausted"
            break
        eps = float(decision.epsilon)
        if not np.isfinite(eps) or eps <= 0.0:
            raise NumericalError(f"scheduler proposed invalid threshold {eps}")
        if prev_eps is not None and eps > prev_eps:
            raise NumericalError(
                f"scheduler proposed a threshold increase ({prev_eps} -> {eps})"
            )
        try:
            if prev is None:
                pop = rejection_round(
                    counting, prior, observed, eps, n_particles, seed, t, tracker
                )
            else:
                pop = _smc_round(
                    counting, prior, observed, prev, kernel, eps,
                    n_particles, seed, t, tracker,
                )
        except BudgetExhausted:
            terminated = "budget-exhausted"
            break
        pop.simulations_used = counting.count - round_start
        populations.append(pop)
        decisions.append(decision)
        curves.append(getattr(decision, "curve", None))
        logger.info(
            "round %d: epsilon=%.6g rule=%s accepted=%d proposals=%d",
            t, eps, getattr(decision, "rule", "?"), len(pop), pop.proposals,
        )
        if eps <= target_epsilon:
            terminated = "target-reached"
            break
        if prev_eps is not None:
            rel = (prev_eps - eps) / prev_eps
            slow_rounds = slow_rounds + 1 if rel < CONVERGENCE_REL_TOL else 0
            if slow_rounds >= CONVERGENCE_ROUNDS:
                terminated = "epsilon-converged"
                break
        prev, prev_eps = pop, eps
        t += 1

    return RunResult(populations, counting.count, terminated, decisions, curves)
