"""Gaussian mixture fitting for weighted samples.

EM here differs from the textbook version only in that every point carries a
nonnegative weight: responsibilities are scaled by the point weights in each
M-step, and the monitored objective is the weighted log-likelihood
``sum_i w_i log p(x_i)``.  Model selection uses BIC with the effective sample
size (sum w)^2 / sum w^2 standing in for n.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import GmmFitError

__all__ = [
    "GaussianComponent",
    "GaussianMixture",
    "fit_em",
    "select_components",
    "sample_mixture",
    "effective_sample_size",
    "weighted_mean_cov",
]

logger = logging.getLogger(__name__)

COV_REG_FACTOR = 1e-6
EMPTY_COMPONENT_TOL = 1e-12
MAX_COLLAPSES = 3


@dataclass
class GaussianComponent:
    weight: float
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if self.weight < 0:
            raise ValueError("component weight must be nonnegative")
        if self.covariance.shape != (self.mean.size, self.mean.size):
            raise ValueError("covariance shape does not match the mean")


@dataclass
class GaussianMixture:
    components: List[GaussianComponent]
    # per-iteration weighted log-likelihood trace from the EM fit, if any;
    # None entries mark component re-initialisations (monotonicity resets)
    em_log_likelihoods: Optional[list] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.components:
            raise ValueError("mixture needs at least one component")
        total = sum(c.weight for c in self.components)
        if abs(total - 1.0) > 1e-9:
            raise ValueError("component weights must sum to 1")

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].mean.size

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @property
    def means(self) -> np.ndarray:
        return np.array([c.mean for c in self.components])

    def log_density(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        log_parts = _component_log_densities(pts, self.components)
        return logsumexp(log_parts + np.log(self.weights)[None, :], axis=1)


def effective_sample_size(weights: np.ndarray) -> float:
    w = np.asarray(weights, dtype=float)
    return float(w.sum() ** 2 / np.sum(w * w))


def weighted_mean_cov(points: np.ndarray, weights: np.ndarray):
    """Weighted mean and (population-convention) covariance."""
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    mu = w @ pts
    centered = pts - mu
    cov = (centered.T * w) @ centered
    return mu, 0.5 * (cov + cov.T)


def _component_log_densities(points, components):
    """(n, K) matrix of per-component Gaussian log densities."""
    n, L = points.shape
    out = np.empty((n, len(components)))
    for k, comp in enumerate(components):
        try:
            chol = np.linalg.cholesky(comp.covariance)
        except np.linalg.LinAlgError as exc:
            raise GmmFitError(f"component {k} covariance not positive definite") from exc
        diff = points - comp.mean
        z = solve_triangular(chol, diff.T, lower=True)
        quad = np.sum(z * z, axis=0)
        lognorm = -0.5 * L * np.log(2.0 * np.pi) - np.sum(np.log(np.diag(chol)))
        out[:, k] = lognorm - 0.5 * quad
    return out


def _weighted_loglik(points, weights, components, comp_weights):
    log_parts = _component_log_densities(points, components)
    lse = logsumexp(log_parts + np.log(comp_weights)[None, :], axis=1)
    return float(np.dot(weights, lse))


def _kmeanspp_means(points, weights, k, rng):
    """Weighted k-means++ seeding: far points are likelier later centres."""
    n = points.shape[0]
    probs = weights / weights.sum()
    means = [points[rng.choice(n, p=probs)]]
    for _ in range(1, k):
        d2 = np.min(
            [np.sum((points - m) ** 2, axis=1) for m in means], axis=0
        )
        score = probs * d2
        total = score.sum()
        if total <= 0:
            idx = rng.choice(n, p=probs)  # all points coincide with a centre
        else:
            idx = rng.choice(n, p=score / total)
        means.append(points[idx])
    return np.array(means)


def fit_em(
    points,
    weights=None,
    n_components: int = 1,
    max_iter: int = 200,
    tol: float = 1e-6,
    seed=None,
) -> GaussianMixture:
    """Fit a Gaussian mixture to weighted points by EM.

    Parameters
    ----------
    points : (n, L) array
    weights : (n,) nonnegative array, optional
        Defaults to uniform.  Only relative size matters.
    n_components : int
    max_iter, tol : EM iteration cap and relative log-likelihood tolerance.
    seed : int or ``numpy.random.Generator``
        Drives the k-means++ style initialisation and any component
        re-initialisation after a collapse.

    The weighted log-likelihood must not decrease across iterations: a drop
    within the convergence tolerance counts as converged (the covariance
    regulariser makes exact monotonicity unattainable at that scale), while a
    larger drop raises :class:`GmmFitError`.  Empty components are re-seeded
    from a random data point, and more than three collapses returns the best
    fit seen so far with a warning.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.ndim != 2:
        raise ValueError("points must form an (n, L) array")
    n, L = pts.shape
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,) or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be nonnegative with positive sum")
        w = w / w.sum()
    k = int(n_components)
    if k < 1:
        raise ValueError("need at least one component")
    if n < k * (L + 1):
        raise GmmFitError(
            f"{n} points cannot support {k} components in {L} dimensions"
        )

    _, total_cov = weighted_mean_cov(pts, w)
    avg_var = max(np.trace(total_cov) / L, np.finfo(float).tiny)
    reg = COV_REG_FACTOR * avg_var * np.eye(L)

    means = _kmeanspp_means(pts, w, k, rng)
    covs = np.array([total_cov + reg for _ in range(k)])
    alphas = np.full(k, 1.0 / k)

    def current_components():
        return [GaussianComponent(alphas[j], means[j], covs[j]) for j in range(k)]

    ll_prev = None
    best = (-np.inf, None)
    history = []
    collapses = 0
    for _ in range(max_iter):
        comps = current_components()
        log_parts = _component_log_densities(pts, comps)
        log_weighted = log_parts + np.log(alphas)[None, :]
        lse = logsumexp(log_weighted, axis=1)
        ll = float(np.dot(w, lse))
        if not np.isfinite(ll):
            raise GmmFitError("EM log-likelihood is not finite")
        if ll_prev is not None and ll < ll_prev:
            # EM guarantees ascent of the regularised objective only; the
            # plain log-likelihood may dip by up to the regularisation scale,
            # which simply means the fit has converged.  Anything larger is
            # a genuine defect.
            if ll < ll_prev - 1e-3 * (1.0 + abs(ll_prev)):
                raise GmmFitError(
                    f"EM log-likelihood decreased ({ll_prev} -> {ll})"
                )
            break
        history.append(ll)
        if ll > best[0]:
            best = (ll, (alphas.copy(), means.copy(), covs.copy()))
        if ll_prev is not None and ll - ll_prev < tol * max(1.0, abs(ll_prev)):
            break
        ll_prev = ll

        resp = np.exp(log_weighted - lse[:, None])  # (n, k)
        frac = resp * w[:, None]
        mass = frac.sum(axis=0)  # (k,)
        collapsed = np.flatnonzero(mass <= EMPTY_COMPONENT_TOL)
        if collapsed.size:
            collapses += 1
            if collapses > MAX_COLLAPSES:
                logger.warning(
                    "EM component collapsed more than %d times; "
                    "returning the best fit seen so far",
                    MAX_COLLAPSES,
                )
                break
            for j in collapsed:
                means[j] = pts[rng.choice(n, p=w)]
                covs[j] = total_cov + reg
                mass[j] = w.sum() / k
            alphas = mass / mass.sum()
            ll_prev = None  # re-init legitimately breaks monotonicity
            history.append(None)
            continue

        alphas = mass / mass.sum()
        for j in range(k):
            mu = frac[:, j] @ pts / mass[j]
            centered = pts - mu
            cov = (centered.T * frac[:, j]) @ centered / mass[j]
            means[j] = mu
            covs[j] = 0.5 * (cov + cov.T) + reg

    if best[1] is None:
        raise GmmFitError("EM produced no usable fit")
    alphas, means, covs = best[1]
    mix = GaussianMixture(
        [GaussianComponent(alphas[j], means[j], covs[j]) for j in range(k)]
    )
    mix.em_log_likelihoods = history
    return mix


def select_components(
    points,
    weights=None,
    k_max: int = 5,
    max_iter: int = 200,
    tol: float = 1e-6,
    seed=None,
) -> GaussianMixture:
    """Fit K = 1..k_max mixtures and keep the one with minimal BIC.

    BIC uses the weighted log-likelihood rescaled to the effective sample
    size: with normalised weights the fit objective is a weighted average, so
    ``-2 * ESS * avg_loglik + n_params * log(ESS)``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n, L = pts.shape
    if weights is None:
        ess = float(n)
    else:
        ess = effective_sample_size(weights)
    best = None
    for k in range(1, int(k_max) + 1):
        if n < k * (L + 1):
            break
        try:
            mix = fit_em(pts, weights, n_components=k, max_iter=max_iter, tol=tol, seed=rng)
        except GmmFitError:
            continue
        ll = [v for v in mix.em_log_likelihoods if v is not None][-1]
        n_params = (k - 1) + k * L + k * L * (L + 1) / 2
        bic = -2.0 * ess * ll + n_params * np.log(ess)
        if best is None or bic < best[0]:
            best = (bic, mix)
    if best is None:
        raise GmmFitError("no component count produced a usable fit")
    return best[1]


def sample_mixture(mixture: GaussianMixture, m: int, rng: np.random.Generator) -> np.ndarray:
    """Draw m points: component by weight, then a Gaussian draw within it."""
    if m < 1:
        raise ValueError("need at least one draw")
    k = mixture.n_components
    idx = rng.choice(k, size=m, p=mixture.weights)
    out = np.empty((m, mixture.dim))
    for j, comp in enumerate(mixture.components):
        take = np.flatnonzero(idx == j)
        if take.size == 0:
            continue
        try:
            chol = np.linalg.cholesky(comp.covariance)
        except np.linalg.LinAlgError:
            # semidefinite component (e.g. noiseless scalar output): fall back
            # to an eigen square root with clipped negatives
            vals, vecs = np.linalg.eigh(comp.covariance)
            chol = vecs * np.sqrt(np.clip(vals, 0.0, None))
        out[take] = comp.mean + rng.standard_normal((take.size, mixture.dim)) @ chol.T
    return out
