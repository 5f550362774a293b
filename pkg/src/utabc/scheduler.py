"""Threshold schedulers: predicted acceptance-rate curves and quantile baseline.

The adaptive scheduler predicts, before running a round, how the acceptance
rate would vary with the threshold.  It fits a Gaussian mixture to a cloud of
perturbed particles (round 1: prior draws), pushes each component through the
simulator with the unscented transform, samples synthetic outputs from the
resulting output-space mixture, and smooths the empirical acceptance
indicator with a steep logistic step so the curve is twice differentiable.

The threshold decision then follows a two-branch rule:

* elbow — the curvature maximiser epsilon* of the predicted curve, taken
  whenever the predicted rate there is still above a floor delta, or when
  epsilon* exceeds the smallest distance any past simulation achieved (a sign
  that the current population is circling a local optimum it can escape);
* cutpoint — otherwise, the grid point closest to the ideal (0, 1) corner in
  the normalised (epsilon / epsilon_prev, rate / rate_prev) plane, restricted
  to epsilon < epsilon_prev and predicted rates >= 1e-4.

A quantile scheduler (epsilon_t = alpha-quantile of the previous round's
accepted distances) provides the baseline, and doubles as the fallback when
curve prediction fails.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import expit

from .errors import (
    CurvePredictionFailure,
    GmmFitError,
    SchedulerConverged,
    SimulationFailure,
)
from .gmm import fit_em, sample_mixture, select_components
from .models import Dataset, Prior, distance
from .smc import (
    CONVERGENCE_REL_TOL,
    Population,
    PerturbationKernel,
    quantile_threshold,
    sample_and_perturb,
)
from .ut import UtParams, predict_output_mixture

__all__ = [
    "AcceptanceCurve",
    "ThresholdDecision",
    "AdaptiveScheduler",
    "QuantileScheduler",
    "smooth_step",
    "curvature",
    "predict_curve",
    "predict_curve_from_prior",
    "select_threshold",
    "quantile_scheduler",
    "curve_prediction_error",
]

logger = logging.getLogger(__name__)

MIN_PREDICTED_RATE = 1e-4
K_STEEP_CAP = 500.0
PRIOR_PREDICTIVE_DRAWS = 1000
CURVATURE_SIGNIFICANCE = 3.0
# An elbow must undercut the previous threshold by at least the engine's
# convergence tolerance, or it is no decision at all (the run would stall).
MIN_RELATIVE_DROP = CONVERGENCE_REL_TOL


def smooth_step(distances, epsilon: float, k: float = 50.0):
    """Logistic acceptance indicator: ~1 for d << epsilon, 1/2 at d = epsilon.

    H(d) = 1 / (1 + exp(k (d / epsilon - 1))).  Larger ``k`` sharpens the
    step towards the hard indicator d <= epsilon.
    """
    if epsilon <= 0:
        raise ValueError("threshold must be positive")
    d = np.asarray(distances, dtype=float)
    out = expit(-k * (d / epsilon - 1.0))
    return float(out) if out.ndim == 0 else out


def curvature(distances, epsilon: float, k: float = 50.0) -> float:
    """Analytic second derivative (in epsilon) of the mean smoothed indicator.

    With z = k (d/epsilon - 1) and H = expit(-z),

        dH/de   = H (1 - H) k d / e^2
        d2H/de2 = H (1 - H) (k d / e^3) [ (1 - 2H) k d / e - 2 ]

    and the curve value is the sample mean of d2H/de2.
    """
    if epsilon <= 0:
        raise ValueError("threshold must be positive")
    d = np.asarray(distances, dtype=float)
    h = expit(-k * (d / epsilon - 1.0))
    kd = k * d
    term = h * (1.0 - h) * (kd / epsilon ** 3) * ((1.0 - 2.0 * h) * kd / epsilon - 2.0)
    return float(np.mean(term))


@dataclass
class AcceptanceCurve:
    """Predicted threshold -> acceptance-rate curve for one round.

    ``second_errs``, when present, holds the Monte-Carlo standard error of
    each curvature estimate (sample std of the per-draw second derivatives
    over sqrt(M)).  The elbow search uses it to ignore curvature spikes
    supported by only one or two draws: a threshold much smaller than the
    bulk of the predicted distances has a transition window so narrow that a
    single stray sample produces an enormous — but meaningless — curvature
    value.
    """

    grid: np.ndarray
    rates: np.ndarray
    second_derivs: np.ndarray
    sample_distances: np.ndarray
    k_steep: float = 50.0
    second_errs: Optional[np.ndarray] = None

    def __post_init__(self):
        if np.any(np.diff(self.grid) <= 0) or self.grid[0] <= 0:
            raise ValueError("grid must be positive and strictly increasing")

    def rate_at(self, epsilon: float) -> float:
        return float(np.mean(smooth_step(self.sample_distances, epsilon, self.k_steep)))


@dataclass
class ThresholdDecision:
    epsilon: float
    rule: str  # "elbow" | "cutpoint" | "quantile-fallback"
    epsilon_star: float = np.nan
    predicted_rate: float = np.nan
    d_min: Optional[float] = None
    curve: Optional[AcceptanceCurve] = field(default=None, repr=False, compare=False)

    def log_record(self) -> dict:
        return {
            "rule": self.rule,
            "epsilon": float(self.epsilon),
            "epsilon_star": None if np.isnan(self.epsilon_star) else float(self.epsilon_star),
            "predicted_rate": None if np.isnan(self.predicted_rate) else float(self.predicted_rate),
            "d_min": None if self.d_min is None else float(self.d_min),
        }


def _curve_from_points(
    points: np.ndarray,
    model,
    observed: Dataset,
    *,
    mixture_samples: int,
    grid_size: int,
    k_steep: float,
    components,
    k_max: int,
    ut_params: UtParams,
    rng: np.random.Generator,
    prev_epsilon: Optional[float] = None,
) -> AcceptanceCurve:
    if components == "bic":
        mix = select_components(points, k_max=k_max, seed=rng)
    else:
        k = min(int(components), points.shape[0] // (points.shape[1] + 1))
        if k < 1:
            raise CurvePredictionFailure("too few points for even one component")
        mix = fit_em(points, n_components=k, seed=rng)
    out_mix = predict_output_mixture(mix, model, ut_params)
    xs = sample_mixture(out_mix, mixture_samples, rng)
    obs = observed.values
    metric = model.distance_metric
    diff = xs - obs[None, :]
    if metric == "l1":
        dists = np.sum(np.abs(diff), axis=1)
    else:
        dists = np.sqrt(np.sum(diff * diff, axis=1))
    dists = dists[np.isfinite(dists)]
    if dists.size == 0:
        raise CurvePredictionFailure("no finite predicted distances")
    # A single diverging mixture component can push the maximum distance
    # orders of magnitude past the bulk, which would waste the whole grid on
    # its tail; the top of the grid is therefore the 99.9% quantile (equal to
    # the max for clean distributions at the default sample count), further
    # capped at the previous threshold since no decision can exceed it.
    d_hi = float(np.quantile(dists, 0.999))
    if prev_epsilon is not None and np.isfinite(prev_epsilon):
        d_hi = min(d_hi, float(prev_epsilon))
    if not np.isfinite(d_hi) or d_hi <= 0:
        raise CurvePredictionFailure("degenerate predicted distances")
    grid = np.linspace(0.0, 1.05 * d_hi, grid_size + 1)[1:]
    ratio = dists[None, :] / grid[:, None]  # (G, M)
    h = expit(-k_steep * (ratio - 1.0))
    rates = h.mean(axis=1)
    kd = k_steep * dists[None, :]
    eps_col = grid[:, None]
    terms = h * (1.0 - h) * (kd / eps_col ** 3) * ((1.0 - 2.0 * h) * kd / eps_col - 2.0)
    second = terms.mean(axis=1)
    errs = terms.std(axis=1) / np.sqrt(terms.shape[1])
    return AcceptanceCurve(grid, rates, second, dists, k_steep, errs)


def predict_curve(
    prev: Population,
    kernel: PerturbationKernel,
    model,
    observed: Dataset,
    prior: Prior,
    mixture_samples: int = 5000,
    grid_size: int = 200,
    k_steep: float = 50.0,
    seed=None,
    components=8,
    k_max: int = 8,
    ut_params: UtParams = None,
    prev_epsilon: Optional[float] = None,
) -> AcceptanceCurve:
    """Predict the acceptance-rate curve for the round after ``prev``.

    Draws ``len(prev)`` perturbed particles (resample by weight, Gaussian
    move, prior-support rejection), fits the mixture, propagates it through
    the simulator via the unscented transform, and evaluates the smoothed
    acceptance estimate plus its analytic second derivative on a uniform
    threshold grid covering the predicted distances (top of the grid capped
    at ``prev_epsilon`` when given, since decisions cannot exceed it).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pts = np.array(
        [sample_and_perturb(prev, kernel, prior, rng) for _ in range(len(prev))]
    )
    return _curve_from_points(
        pts,
        model,
        observed,
        mixture_samples=mixture_samples,
        grid_size=grid_size,
        k_steep=k_steep,
        components=components,
        k_max=k_max,
        ut_params=ut_params or UtParams(),
        rng=rng,
        prev_epsilon=prev_epsilon,
    )


def predict_curve_from_prior(
    prior: Prior,
    n_points: int,
    model,
    observed: Dataset,
    mixture_samples: int = 5000,
    grid_size: int = 200,
    k_steep: float = 50.0,
    seed=None,
    components=8,
    k_max: int = 8,
    ut_params: UtParams = None,
) -> AcceptanceCurve:
    """First-round variant of :func:`predict_curve`: fit to prior draws."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pts = prior.sample(rng, n_points)
    return _curve_from_points(
        pts,
        model,
        observed,
        mixture_samples=mixture_samples,
        grid_size=grid_size,
        k_steep=k_steep,
        components=components,
        k_max=k_max,
        ut_params=ut_params or UtParams(),
        rng=rng,
    )


def select_threshold(
    curve: AcceptanceCurve,
    prev_epsilon: Optional[float] = None,
    prev_rate: Optional[float] = None,
    delta_floor: float = 0.1,
    d_min: Optional[float] = None,
    refine: bool = True,
) -> ThresholdDecision:
    """Apply the elbow/cutpoint rule to a predicted curve.

    ``prev_epsilon`` is the previous round's threshold (None on the first
    round, in which case the top of the grid is used for normalisation);
    ``d_min`` is the smallest distance any past simulation achieved, or None
    when no simulations have run yet.
    """
    grid, rates, second = curve.grid, curve.rates, curve.second_derivs
    if prev_epsilon is not None and not grid[0] < prev_epsilon:
        raise SchedulerConverged(
            "no curve grid point lies below the previous threshold"
        )
    # Elbow candidates must carry statistical weight: a curvature estimate
    # within a few standard errors of zero is indistinguishable from
    # Monte-Carlo noise (typically an isolated sampled distance far below the
    # bulk), so it cannot anchor an elbow.
    elbow_mask = np.ones(grid.size, dtype=bool)
    if curve.second_errs is not None:
        significant = second > CURVATURE_SIGNIFICANCE * curve.second_errs
        if significant.any():
            elbow_mask = significant
    masked_second = np.where(elbow_mask, second, -np.inf)
    i = int(np.argmax(masked_second))
    eps_star = float(grid[i])
    if refine:
        lo = grid[i - 1] if i > 0 else 0.5 * grid[0]
        hi = grid[i + 1] if i + 1 < grid.size else grid[-1]
        if hi > lo:
            res = minimize_scalar(
                lambda e: -curvature(curve.sample_distances, e, curve.k_steep),
                bounds=(lo, hi),
                method="bounded",
            )
            if res.success and -res.fun >= masked_second[i]:
                eps_star = float(res.x)
    rate_star = curve.rate_at(eps_star)

    # An elbow is only a decision if it actually undercuts the previous
    # threshold; a curvature maximum at or above it (common when the grid is
    # capped there) means the curve offers no elbow for this round, and the
    # cut-point search below takes over.
    decreases = prev_epsilon is None or eps_star < prev_epsilon * (1.0 - MIN_RELATIVE_DROP)
    if decreases and (
        (rate_star > delta_floor) or (d_min is not None and eps_star > d_min)
    ):
        return ThresholdDecision(eps_star, "elbow", eps_star, rate_star, d_min, curve)

    if prev_epsilon is not None:
        norm_eps, norm_rate = prev_epsilon, curve.rate_at(prev_epsilon)
        below = grid < prev_epsilon
    else:
        norm_eps, norm_rate = float(grid[-1]), float(rates[-1])
        below = np.ones(grid.size, dtype=bool)
    if norm_rate <= 0:
        raise SchedulerConverged("predicted rate at the previous threshold is zero")
    cand = below & (rates >= MIN_PREDICTED_RATE)
    if not cand.any():
        raise SchedulerConverged(
            "no admissible threshold below the previous one has a workable "
            "predicted acceptance rate"
        )
    score = np.sqrt((grid / norm_eps) ** 2 + (rates / norm_rate - 1.0) ** 2)
    score = np.where(cand, score, np.inf)
    best = score.min()
    j = int(np.flatnonzero(score == best)[0])  # ties resolve to the smallest epsilon
    return ThresholdDecision(
        float(grid[j]), "cutpoint", eps_star, float(rates[j]), d_min, curve
    )


def quantile_scheduler(prev: Population, alpha: float) -> ThresholdDecision:
    """Baseline decision: the alpha-quantile of the previous round's distances."""
    eps = quantile_threshold(prev, alpha)
    return ThresholdDecision(eps, "quantile-fallback")


def _prior_predictive_distances(prior, model, observed, n, rng):
    out = np.empty(n)
    metric = model.distance_metric
    got = 0
    while got < n:
        theta = prior.sample(rng)
        try:
            data = model.simulate(theta, rng)
        except SimulationFailure:
            continue
        out[got] = distance(data, observed, metric)
        got += 1
    return out


class QuantileScheduler:
    """Fixed-quantile threshold schedule.

    Round 1 takes the alpha-quantile of 1000 prior-predictive distances
    (counted against the simulation budget); later rounds take the
    alpha-quantile of the previous population's accepted distances.
    """

    def __init__(self, alpha: float):
        if not 0.0 < alpha < 1.0:
            raise ValueError("quantile level must lie strictly between 0 and 1")
        self.alpha = alpha

    def propose(self, *, round_index, prev, prior, model, observed, rng, **_) -> ThresholdDecision:
        if prev is None:
            dists = _prior_predictive_distances(
                prior, model, observed, PRIOR_PREDICTIVE_DRAWS, rng
            )
            eps = quantile_threshold(dists, self.alpha)
            return ThresholdDecision(eps, "quantile-fallback")
        return quantile_scheduler(prev, self.alpha)


class AdaptiveScheduler:
    """Curve-prediction threshold schedule with quantile fallback.

    Parameters mirror the curve machinery: ``delta`` is the elbow rate floor,
    ``mixture_samples`` the synthetic sample count, ``grid_size`` the curve
    resolution, ``k_steep`` the logistic sharpness (capped at 500),
    ``components`` either a fixed mixture size or ``"bic"``.  When curve
    prediction fails (degenerate mixture, diverging sigma points, ...) the
    round falls back to the ``fallback_alpha`` quantile of the previous
    population and the event is logged.
    """

    def __init__(
        self,
        delta: float = 0.1,
        mixture_samples: int = 5000,
        grid_size: int = 200,
        k_steep: float = 50.0,
        components=8,
        k_max: int = 8,
        ut_alpha: float = 1.0,
        ut_beta: float = 2.0,
        ut_kappa: Optional[float] = None,
        fallback_alpha: float = 0.3,
        refine: bool = True,
    ):
        if k_steep > K_STEEP_CAP:
            logger.warning("k_steep %.1f exceeds cap %.0f; clipping", k_steep, K_STEEP_CAP)
            k_steep = K_STEEP_CAP
        self.delta = delta
        self.mixture_samples = int(mixture_samples)
        self.grid_size = int(grid_size)
        self.k_steep = float(k_steep)
        self.components = components
        self.k_max = int(k_max)
        self.ut_params = UtParams(ut_alpha, ut_beta, ut_kappa)
        self.fallback_alpha = fallback_alpha
        self.refine = refine

    def propose(
        self,
        *,
        round_index,
        prev,
        kernel,
        prior,
        model,
        observed,
        prev_epsilon,
        d_min,
        n_particles,
        rng,
    ) -> ThresholdDecision:
        try:
            if prev is None:
                curve = predict_curve_from_prior(
                    prior, n_particles, model, observed,
                    mixture_samples=self.mixture_samples,
                    grid_size=self.grid_size,
                    k_steep=self.k_steep,
                    seed=rng,
                    components=self.components,
                    k_max=self.k_max,
                    ut_params=self.ut_params,
                )
            else:
                curve = predict_curve(
                    prev, kernel, model, observed, prior,
                    mixture_samples=self.mixture_samples,
                    grid_size=self.grid_size,
                    k_steep=self.k_steep,
                    seed=rng,
                    components=self.components,
                    k_max=self.k_max,
                    ut_params=self.ut_params,
                    prev_epsilon=prev_epsilon,
                )
            return select_threshold(
                curve,
                prev_epsilon=prev_epsilon,
                delta_floor=self.delta,
                d_min=d_min if round_index > 1 else None,
                refine=self.refine,
            )
        except (GmmFitError, CurvePredictionFailure, np.linalg.LinAlgError) as exc:
            logger.warning(
                "curve prediction failed in round %d (%s); falling back to "
                "the %.2f-quantile schedule",
                round_index, exc, self.fallback_alpha,
            )
            if prev is not None:
                return quantile_scheduler(prev, self.fallback_alpha)
            dists = _prior_predictive_distances(
                prior, model, observed, PRIOR_PREDICTIVE_DRAWS, rng
            )
            eps = quantile_threshold(dists, self.fallback_alpha)
            return ThresholdDecision(eps, "quantile-fallback")


def curve_prediction_error(
    curve: AcceptanceCurve,
    model,
    observed: Dataset,
    prior: Prior,
    prev: Optional[Population] = None,
    kernel: Optional[PerturbationKernel] = None,
    m_mc: int = 10000,
    n_thresholds: int = 10,
    seed=None,
):
    """Mean squared error of a predicted curve against brute-force rates.

    Draws ``m_mc`` parameters from the proposal the curve models (prior when
    ``prev`` is None), simulates each with observation noise, and compares
    hard-indicator acceptance rates with the curve's smoothed prediction at
    ``n_thresholds`` evenly spaced grid thresholds.  Returns
    ``(mse, thresholds, predicted, monte_carlo)``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    metric = model.distance_metric
    dists = np.empty(m_mc)
    got = 0
    while got < m_mc:
        if prev is None:
            theta = prior.sample(rng)
        else:
            theta = sample_and_perturb(prev, kernel, prior, rng)
        try:
            data = model.simulate(theta, rng)
        except SimulationFailure:
            continue
        dists[got] = distance(data, observed, metric)
        got += 1
    idx = np.unique(np.linspace(0, curve.grid.size - 1, n_thresholds).round().astype(int))
    eps_values = curve.grid[idx]
    predicted = np.array([curve.rate_at(e) for e in eps_values])
    mc = np.array([(dists <= e).mean() for e in eps_values])
    mse = float(np.mean((predicted - mc) ** 2))
    return mse, eps_values, predicted, mc
