"""Benchmark models: deterministic simulators, observation noise, distances.

Each model maps a parameter vector to a deterministic output vector; observed
data additionally carries zero-mean Gaussian noise with a per-model covariance.
ODE models are integrated with classic fixed-step RK4 (h = 0.01); the per-model
trajectory loops are numba-compiled because benchmark suites run 1e5+
simulations per fit.

Nothing in this module touches global RNG state: noise draws always come from
a caller-supplied ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numba import njit

from .errors import SimulationFailure

__all__ = [
    "Dataset",
    "ModelSpec",
    "OdeSystem",
    "Prior",
    "Problem",
    "toy_g",
    "rk4_step",
    "simulate",
    "distance",
    "repressilator_rhs",
    "hopf_rhs",
    "model_names",
    "build_problem",
]

RK4_STEP = 0.01

# Repressilator state layout: (m1, p1, m2, p2, m3, p3).
REPRESSILATOR_X0 = np.array([0.0, 2.0, 0.0, 1.0, 0.0, 3.0])
REPRESSILATOR_THETA = np.array([2.0, 4.0, 1000.0, 1.0])  # (n, beta, alpha, alpha0)
REPRESSILATOR_OBS_TIMES = np.array([4.0, 8.0, 12.0, 16.0, 20.0])

# Oscillating three-species feedback loop: only A*k1 is inferred, k2..k5 = 1.
HOPF_K = np.array([1.0, 1.0, 1.0, 1.0])  # (k2, k3, k4, k5)
HOPF_AK1_TRUE = 5.5
HOPF_X0 = np.array([0.5, 1.5, 1.0])
HOPF_OBS_SPACING = 0.1


# ---------------------------------------------------------------------------
# data containers


@dataclass
class Dataset:
    """Observation vector plus optional strictly increasing time stamps."""

    values: np.ndarray
    time_points: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ValueError("Dataset values must be a 1-D vector")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("Dataset values must be finite")
        if self.time_points is not None:
            self.time_points = np.asarray(self.time_points, dtype=float)
            if self.time_points.shape != self.values.shape:
                raise ValueError("time_points must match values in length")
            if np.any(np.diff(self.time_points) <= 0):
                raise ValueError("time_points must be strictly increasing")

    def __len__(self):
        return self.values.size


@dataclass
class ModelSpec:
    """A named forward model with additive Gaussian observation noise.

    Parameters
    ----------
    name : str
        Registry name.
    parameter_dim : int
        Dimension of the parameter vector.
    forward : callable
        Deterministic map ``theta -> output vector``; raises
        :class:`SimulationFailure` when the simulation diverges.
    noise_covariance : ndarray of shape (D, D)
        Covariance of the additive observation noise (may be all zeros).
    distance_metric : {"l1", "l2"}
    time_points : ndarray, optional
        Time stamps attached to simulated datasets.
    """

    name: str
    parameter_dim: int
    forward: Callable[[np.ndarray], np.ndarray]
    noise_covariance: np.ndarray
    distance_metric: str = "l2"
    time_points: Optional[np.ndarray] = None
    _noise_chol: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.noise_covariance = np.atleast_2d(np.asarray(self.noise_covariance, dtype=float))
        if self.distance_metric not in ("l1", "l2"):
            raise ValueError(f"unknown distance metric {self.distance_metric!r}")
        cov = self.noise_covariance
        if cov.shape[0] != cov.shape[1]:
            raise ValueError("noise covariance must be square")
        if not np.allclose(cov, cov.T):
            raise ValueError("noise covariance must be symmetric")
        if np.any(cov):
            # fails on non-PSD input, which is what we want
            self._noise_chol = np.linalg.cholesky(cov)

    @property
    def output_dim(self) -> int:
        return self.noise_covariance.shape[0]

    def simulate(self, theta, rng: Optional[np.random.Generator] = None) -> Dataset:
        return simulate(self, theta, rng)


def simulate(spec: ModelSpec, theta, rng: Optional[np.random.Generator] = None) -> Dataset:
    """Run the forward model; add observation noise when ``rng`` is given.

    Noiseless calls (``rng=None``) are deterministic, so repeated calls with
    the same parameters return bitwise-identical values.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape != (spec.parameter_dim,):
        raise ValueError(
            f"theta has shape {theta.shape}, expected ({spec.parameter_dim},)"
        )
    values = spec.forward(theta)
    if rng is not None and spec._noise_chol is not None:
        values = values + spec._noise_chol @ rng.standard_normal(spec.output_dim)
    return Dataset(values, spec.time_points)


def distance(a, b, metric: str = "l2") -> float:
    """L1 or L2 distance between two datasets (or plain vectors)."""
    av = a.values if isinstance(a, Dataset) else np.asarray(a, dtype=float)
    bv = b.values if isinstance(b, Dataset) else np.asarray(b, dtype=float)
    if av.shape != bv.shape:
        raise ValueError("datasets have mismatched lengths")
    diff = av - bv
    if metric == "l1":
        return float(np.sum(np.abs(diff)))
    if metric == "l2":
        return float(np.sqrt(np.sum(diff * diff)))
    raise ValueError(f"unknown distance metric {metric!r}")


# ---------------------------------------------------------------------------
# scalar test maps


def toy_g(theta):
    """Scalar map with a broad basin near 10 and a sharp dip to -100 at 3.

    g(theta) = (theta - 10)^2 - 100 exp(-100 (theta - 3)^2).  The global
    optimum against an observation of g(3) = -51 sits at theta = 3; a local
    one sits near theta = 10, where the map bottoms out at distance ~51.
    """
    theta = np.asarray(theta, dtype=float)
    out = (theta - 10.0) ** 2 - 100.0 * np.exp(-100.0 * (theta - 3.0) ** 2)
    return float(out) if out.ndim == 0 else out


def _toy_forward(theta):
    return np.array([toy_g(theta[0])])


def _quadratic_forward(theta):
    return np.array([theta[0] ** 2])


def _gaussian_pdf_forward(theta):
    return np.array([math.exp(-0.5 * theta[0] ** 2) / math.sqrt(2.0 * math.pi)])


def _linear_forward(theta):
    return np.array([2.0 * theta[0] + 1.0])


# ---------------------------------------------------------------------------
# ODE systems


@dataclass
class OdeSystem:
    """Autonomous ODE with a fixed-step RK4 integration contract."""

    state_dim: int
    rhs: Callable[[np.ndarray, np.ndarray], np.ndarray]
    initial_state: np.ndarray
    step_size: float = RK4_STEP


def rk4_step(system: OdeSystem, state, params, h: Optional[float] = None) -> np.ndarray:
    """One classic Runge-Kutta 4 step (reference implementation).

    The benchmark simulators use compiled loops with the same update; this
    plain version backs the unit tests and convergence checks.
    """
    h = system.step_size if h is None else h
    y = np.asarray(state, dtype=float)
    p = np.asarray(params, dtype=float)
    k1 = np.asarray(system.rhs(y, p), dtype=float)
    k2 = np.asarray(system.rhs(y + 0.5 * h * k1, p), dtype=float)
    k3 = np.asarray(system.rhs(y + 0.5 * h * k2, p), dtype=float)
    k4 = np.asarray(system.rhs(y + h * k3, p), dtype=float)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit(cache=True)
def _repressilator_deriv(y, p, out):
    n = p[0]
    beta = p[1]
    alpha = p[2]
    alpha0 = p[3]
    # clamp protein levels at 0 before the Hill term; the integrator can
    # transiently undershoot and fractional powers of negatives are NaN
    p1 = y[1] if y[1] > 0.0 else 0.0
    p2 = y[3] if y[3] > 0.0 else 0.0
    p3 = y[5] if y[5] > 0.0 else 0.0
    out[0] = -y[0] + alpha / (1.0 + p3 ** n) + alpha0
    out[1] = -beta * (y[1] - y[0])
    out[2] = -y[2] + alpha / (1.0 + p1 ** n) + alpha0
    out[3] = -beta * (y[3] - y[2])
    out[4] = -y[4] + alpha / (1.0 + p2 ** n) + alpha0
    out[5] = -beta * (y[5] - y[4])


@njit(cache=True)
def _hopf_deriv(y, p, out):
    # p = (A*k1, k2, k3, k4, k5)
    out[0] = (p[0] - p[3]) * y[0] - p[1] * y[0] * y[1]
    out[1] = -p[2] * y[1] + p[4] * y[2]
    out[2] = p[3] * y[0] - p[4] * y[2]


@njit(cache=True)
def _repressilator_traj(params, y0, h, n_steps, obs_steps):
    """RK4 trajectory of p1 at the requested step indices; flags divergence."""
    y = y0.copy()
    k1 = np.empty(6)
    k2 = np.empty(6)
    k3 = np.empty(6)
    k4 = np.empty(6)
    yt = np.empty(6)
    out = np.empty(obs_steps.shape[0])
    j = 0
    while j < obs_steps.shape[0] and obs_steps[j] == 0:
        out[j] = y[1]
        j += 1
    for s in range(1, n_steps + 1):
        _repressilator_deriv(y, params, k1)
        for d in range(6):
            yt[d] = y[d] + 0.5 * h * k1[d]
        _repressilator_deriv(yt, params, k2)
        for d in range(6):
            yt[d] = y[d] + 0.5 * h * k2[d]
        _repressilator_deriv(yt, params, k3)
        for d in range(6):
            yt[d] = y[d] + h * k3[d]
        _repressilator_deriv(yt, params, k4)
        ok = True
        for d in range(6):
            y[d] = y[d] + (h / 6.0) * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d])
            if not np.isfinite(y[d]):
                ok = False
        if not ok:
            return out, False
        while j < obs_steps.shape[0] and obs_steps[j] == s:
            out[j] = y[1]
            j += 1
    return out, True


@njit(cache=True)
def _hopf_traj(params, y0, h, n_steps, obs_steps):
    """RK4 trajectory of the first species at the requested step indices."""
    y = y0.copy()
    k1 = np.empty(3)
    k2 = np.empty(3)
    k3 = np.empty(3)
    k4 = np.empty(3)
    yt = np.empty(3)
    out = np.empty(obs_steps.shape[0])
    j = 0
    while j < obs_steps.shape[0] and obs_steps[j] == 0:
        out[j] = y[0]
        j += 1
    for s in range(1, n_steps + 1):
        _hopf_deriv(y, params, k1)
        for d in range(3):
            yt[d] = y[d] + 0.5 * h * k1[d]
        _hopf_deriv(yt, params, k2)
        for d in range(3):
            yt[d] = y[d] + 0.5 * h * k2[d]
        _hopf_deriv(yt, params, k3)
        for d in range(3):
            yt[d] = y[d] + h * k3[d]
        _hopf_deriv(yt, params, k4)
        ok = True
        for d in range(3):
            y[d] = y[d] + (h / 6.0) * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d])
            if not np.isfinite(y[d]):
                ok = False
        if not ok:
            return out, False
        while j < obs_steps.shape[0] and obs_steps[j] == s:
            out[j] = y[0]
            j += 1
    return out, True


def repressilator_rhs(state, params) -> np.ndarray:
    """Derivative of the six-species repressilator.

    ``state`` is (m1, p1, m2, p2, m3, p3) and ``params`` is
    (n, beta, alpha, alpha0).  mRNA i is repressed by protein i-1 (cyclically)
    through a Hill term alpha / (1 + p^n) + alpha0; each protein relaxes
    towards its own mRNA at rate beta.
    """
    y = np.asarray(state, dtype=float)
    p = np.asarray(params, dtype=float)
    if y.shape != (6,) or p.shape != (4,):
        raise ValueError("state must have 6 entries and params 4")
    out = np.empty(6)
    _repressilator_deriv(y, p, out)
    return out


def hopf_rhs(state, params) -> np.ndarray:
    """Derivative of the three-species loop with a supercritical Hopf point.

    ``state`` is (x, y, z), ``params`` is (A*k1, k2, k3, k4, k5).  The
    nontrivial equilibrium loses stability at A*k1 = k3 + k4 + k5, beyond
    which trajectories settle on a limit cycle.
    """
    y = np.asarray(state, dtype=float)
    p = np.asarray(params, dtype=float)
    if y.shape != (3,) or p.shape != (5,):
        raise ValueError("state must have 3 entries and params 5")
    out = np.empty(3)
    _hopf_deriv(y, p, out)
    return out


def _obs_steps(times, h):
    steps = np.rint(np.asarray(times, dtype=float) / h).astype(np.int64)
    if not np.allclose(steps * h, times, rtol=0.0, atol=1e-9):
        raise ValueError("observation times must be multiples of the step size")
    return steps


_REPRESS_STEPS = _obs_steps(REPRESSILATOR_OBS_TIMES, RK4_STEP)


def _repressilator_forward(theta):
    out, ok = _repressilator_traj(
        np.asarray(theta, dtype=float),
        REPRESSILATOR_X0,
        RK4_STEP,
        int(_REPRESS_STEPS[-1]),
        _REPRESS_STEPS,
    )
    if not ok or not np.all(np.isfinite(out)):
        raise SimulationFailure(f"repressilator integration diverged at theta={theta}")
    return out


def _hopf_times(n_points: int) -> np.ndarray:
    # n_points observations with fixed spacing 0.1, covering (0, 0.1 * n_points]
    return HOPF_OBS_SPACING * np.arange(1, n_points + 1)


def _make_hopf_forward(n_points: int):
    times = _hopf_times(n_points)
    steps = _obs_steps(times, RK4_STEP)
    n_steps = int(steps[-1])

    def forward(theta):
        params = np.array([theta[0], HOPF_K[0], HOPF_K[1], HOPF_K[2], HOPF_K[3]])
        out, ok = _hopf_traj(params, HOPF_X0, RK4_STEP, n_steps, steps)
        if not ok or not np.all(np.isfinite(out)):
            raise SimulationFailure(f"hopf integration diverged at theta={theta}")
        return out

    return forward, times


# ---------------------------------------------------------------------------
# priors


@dataclass
class _GaussianDim:
    mean: float
    var: float
    low: float = -np.inf
    high: float = np.inf

    def __post_init__(self):
        if self.var <= 0:
            raise ValueError("Gaussian prior needs positive variance")
        self.sd = math.sqrt(self.var)
        from scipy.stats import norm

        self._z = norm.cdf((self.high - self.mean) / self.sd) - norm.cdf(
            (self.low - self.mean) / self.sd
        )
        if self._z <= 0:
            raise ValueError("truncation interval carries no prior mass")

    def sample(self, rng, size):
        out = self.mean + self.sd * rng.standard_normal(size)
        bad = (out < self.low) | (out > self.high)
        tries = 0
        while np.any(bad):
            out[bad] = self.mean + self.sd * rng.standard_normal(int(bad.sum()))
            bad = (out < self.low) | (out > self.high)
            tries += 1
            if tries > 1000:
                raise RuntimeError("truncated Gaussian rejection sampling stalled")
        return out

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.low) & (x <= self.high)
        dens = np.exp(-0.5 * ((x - self.mean) / self.sd) ** 2) / (
            self.sd * math.sqrt(2.0 * math.pi) * self._z
        )
        return np.where(inside, dens, 0.0)


@dataclass
class _UniformDim:
    low: float
    high: float

    def __post_init__(self):
        if not self.high > self.low:
            raise ValueError("uniform prior needs high > low")

    def sample(self, rng, size):
        return rng.uniform(self.low, self.high, size)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.low) & (x <= self.high)
        return np.where(inside, 1.0 / (self.high - self.low), 0.0)


class Prior:
    """Independent per-dimension prior: Gaussian (optionally truncated) or uniform.

    Construct from a list of dimension specs, e.g.::

        Prior([("gaussian", 10.0, 10.0), ("uniform", 0.0, 1.0)])

    Gaussian entries are (mean, variance) with optional (low, high) bounds.
    """

    def __init__(self, dims):
        self.dims = []
        for spec in dims:
            kind = spec[0]
            if kind == "gaussian":
                self.dims.append(_GaussianDim(*spec[1:]))
            elif kind == "uniform":
                self.dims.append(_UniformDim(*spec[1:]))
            else:
                raise ValueError(f"unknown prior dimension kind {kind!r}")
        if not self.dims:
            raise ValueError("prior needs at least one dimension")

    @property
    def parameter_dim(self) -> int:
        return len(self.dims)

    def sample(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        n = 1 if size is None else int(size)
        out = np.column_stack([d.sample(rng, n) for d in self.dims])
        return out[0] if size is None else out

    def pdf(self, theta) -> np.ndarray | float:
        theta = np.asarray(theta, dtype=float)
        single = theta.ndim == 1
        pts = np.atleast_2d(theta)
        if pts.shape[1] != self.parameter_dim:
            raise ValueError("theta has wrong dimension")
        dens = np.ones(pts.shape[0])
        for j, d in enumerate(self.dims):
            dens *= d.pdf(pts[:, j])
        return float(dens[0]) if single else dens


# ---------------------------------------------------------------------------
# registry


@dataclass
class Problem:
    """A model together with its prior, observed data and default target."""

    model: ModelSpec
    prior: Prior
    observed: Dataset
    target_epsilon: float
    true_theta: Optional[np.ndarray] = None


def model_names():
    return sorted(_BUILDERS)


def _build_toy(data_seed):
    model = ModelSpec("toy", 1, _toy_forward, np.array([[0.0]]), "l1")
    prior = Prior([("gaussian", 10.0, 10.0)])
    observed = simulate(model, [3.0])  # exactly g(3) = -51, no noise
    return Problem(model, prior, observed, 0.01, np.array([3.0]))


def _build_quadratic(data_seed):
    model = ModelSpec("quadratic", 1, _quadratic_forward, np.array([[0.0]]), "l2")
    prior = Prior([("gaussian", 0.0, 4.0)])
    observed = simulate(model, [1.0])
    return Problem(model, prior, observed, 0.01, np.array([1.0]))


def _build_gaussian_pdf(data_seed):
    model = ModelSpec("gaussian-pdf", 1, _gaussian_pdf_forward, np.array([[0.0]]), "l2")
    prior = Prior([("gaussian", 0.0, 4.0)])
    observed = simulate(model, [1.0])
    return Problem(model, prior, observed, 0.001, np.array([1.0]))


def _build_linear(data_seed):
    model = ModelSpec("linear", 1, _linear_forward, np.array([[0.25]]), "l2")
    prior = Prior([("gaussian", 0.0, 4.0)])
    observed = simulate(model, [1.0], np.random.default_rng(data_seed))
    return Problem(model, prior, observed, 0.05, np.array([1.0]))


def _build_repressilator(data_seed):
    model = ModelSpec(
        "repressilator",
        4,
        _repressilator_forward,
        0.01 * np.eye(5),
        "l2",
        time_points=REPRESSILATOR_OBS_TIMES,
    )
    prior = Prior(
        [
            ("gaussian", 2.0, 1.0, 0.0, np.inf),
            ("gaussian", 4.0, 4.0, 0.0, np.inf),
            ("gaussian", 1000.0, 200.0 ** 2, 0.0, np.inf),
            ("gaussian", 1.0, 0.25, 0.0, np.inf),
        ]
    )
    observed = simulate(model, REPRESSILATOR_THETA, np.random.default_rng(data_seed))
    return Problem(model, prior, observed, 35.0, REPRESSILATOR_THETA.copy())


def _build_hopf(data_seed, n_points=100):
    forward, times = _make_hopf_forward(n_points)
    model = ModelSpec(
        "hopf", 1, forward, np.eye(n_points), "l2", time_points=times
    )
    prior = Prior([("uniform", 0.1, 15.0)])
    observed = simulate(model, [HOPF_AK1_TRUE], np.random.default_rng(data_seed))
    target = math.sqrt(80.0 * n_points)
    return Problem(model, prior, observed, target, np.array([HOPF_AK1_TRUE]))


_BUILDERS = {
    "toy": _build_toy,
    "quadratic": _build_quadratic,
    "gaussian-pdf": _build_gaussian_pdf,
    "linear": _build_linear,
    "repressilator": _build_repressilator,
    "hopf": _build_hopf,
}


def build_problem(name: str, data_seed: int = 1234, **opts) -> Problem:
    """Assemble a registered model with its prior and observed dataset.

    ``hopf`` accepts ``n_points`` (dataset size T); observed data are generated
    once from the true parameters with ``data_seed`` so that every scheduler
    in a comparison sees the same dataset.
    """
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ValueError(
            f"unknown model {name!r}; available: {', '.join(model_names())}"
        ) from None
    return builder(data_seed, **opts)
