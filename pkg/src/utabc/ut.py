"""Scaled unscented transform: sigma points and moment propagation.

A Gaussian N(mu, Sigma) in parameter space is summarised by 2L+1 sigma
points; pushing those through a deterministic simulator and re-weighting
gives a Gaussian approximation of the output distribution that is exact for
linear maps and second-order accurate otherwise.  Applied per mixture
component, this turns a parameter-space Gaussian mixture into an
output-space one at a cost of K * (2L + 1) simulator calls.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import CurvePredictionFailure, SimulationFailure
from .gmm import GaussianComponent, GaussianMixture

__all__ = [
    "SigmaPointSet",
    "OutputGaussian",
    "UtParams",
    "sigma_points",
    "ut_propagate",
    "predict_output_mixture",
]

logger = logging.getLogger(__name__)


@dataclass
class UtParams:
    """Scaling parameters (alpha, beta, kappa); kappa=None means 3 - L."""

    alpha: float = 1.0
    beta: float = 2.0
    kappa: float = None

    def resolved_kappa(self, dim: int) -> float:
        return 3.0 - dim if self.kappa is None else float(self.kappa)


@dataclass
class SigmaPointSet:
    points: np.ndarray  # (2L+1, L); row 0 is the input mean
    mean_weights: np.ndarray
    cov_weights: np.ndarray
    lam: float

    def __post_init__(self):
        n, L = self.points.shape
        if n != 2 * L + 1:
            raise ValueError("expected 2L+1 sigma points")


@dataclass
class OutputGaussian:
    mean: np.ndarray
    covariance: np.ndarray


def sigma_points(mean, cov, alpha: float = 1.0, beta: float = 2.0, kappa=None) -> SigmaPointSet:
    """Scaled sigma points for N(mean, cov).

    lambda = alpha^2 (L + kappa) - L; the off-centre points are
    mean +/- columns of the lower Cholesky factor of (L + lambda) cov.
    Mean weights: lambda/(L+lambda) at the centre, 1/(2(L+lambda)) elsewhere;
    the centre covariance weight additionally carries (1 - alpha^2 + beta).
    """
    mu = np.atleast_1d(np.asarray(mean, dtype=float))
    sigma = np.atleast_2d(np.asarray(cov, dtype=float))
    L = mu.size
    if sigma.shape != (L, L):
        raise ValueError("covariance shape does not match the mean")
    if kappa is None:
        kappa = 3.0 - L
    lam = alpha ** 2 * (L + kappa) - L
    scale = L + lam
    if scale <= 0:
        raise ValueError(f"L + lambda must be positive (got {scale})")
    try:
        root = np.linalg.cholesky(scale * sigma)
    except np.linalg.LinAlgError:
        # semidefinite input (degenerate mixture component): nudge and retry
        bump = 1e-12 * max(np.trace(sigma) / L, 1e-30)
        root = np.linalg.cholesky(scale * sigma + scale * bump * np.eye(L))
    pts = np.empty((2 * L + 1, L))
    pts[0] = mu
    for k in range(L):
        pts[1 + k] = mu + root[:, k]
        pts[1 + L + k] = mu - root[:, k]
    wm = np.full(2 * L + 1, 1.0 / (2.0 * scale))
    wc = wm.copy()
    wm[0] = lam / scale
    wc[0] = lam / scale + (1.0 - alpha ** 2 + beta)
    return SigmaPointSet(pts, wm, wc, lam)


def ut_propagate(sp: SigmaPointSet, g, noise_cov=None) -> OutputGaussian:
    """Push sigma points through ``g`` and re-assemble output moments.

    ``g`` maps an L-vector to a D-vector.  The output covariance is the
    weighted outer-product spread of the transformed points plus
    ``noise_cov``; if the weighted reconstruction turns out indefinite
    (possible because the centre covariance weight may be negative) the
    negative eigenvalues are clipped to a small positive floor and the
    adjustment is logged.
    """
    outputs = np.array([np.asarray(g(p), dtype=float) for p in sp.points])
    if outputs.ndim == 1:
        outputs = outputs[:, None]
    mean = sp.mean_weights @ outputs
    dev = outputs - mean
    cov = (dev.T * sp.cov_weights) @ dev
    if noise_cov is not None:
        cov = cov + np.atleast_2d(np.asarray(noise_cov, dtype=float))
    cov = 0.5 * (cov + cov.T)
    eigmin = float(np.linalg.eigvalsh(cov).min())
    if eigmin < 0.0:
        d = cov.shape[0]
        floor = 1e-12 * max(np.trace(np.abs(cov)) / d, 1e-30)
        vals, vecs = np.linalg.eigh(cov)
        clipped = np.clip(vals, floor, None)
        cov = (vecs * clipped) @ vecs.T
        cov = 0.5 * (cov + cov.T)
        logger.info(
            "clipped indefinite output covariance (min eigenvalue %.3e -> %.3e)",
            eigmin, floor,
        )
    return OutputGaussian(mean, cov)


def predict_output_mixture(
    param_mixture: GaussianMixture,
    model,
    ut_params: UtParams = None,
) -> GaussianMixture:
    """Map a parameter-space mixture to output space, component by component.

    Each component is propagated with its own sigma-point set through the
    noiseless simulator, and the model's observation-noise covariance is
    added to every output covariance.  Components whose sigma points make
    the simulator diverge are dropped (with a warning) and the weights
    renormalised; if every component fails, curve prediction is impossible.
    """
    ut = ut_params or UtParams()
    out_components = []
    for comp in param_mixture.components:
        sp = sigma_points(
            comp.mean,
            comp.covariance,
            alpha=ut.alpha,
            beta=ut.beta,
            kappa=ut.resolved_kappa(comp.mean.size),
        )
        try:
            og = ut_propagate(
                sp,
                lambda th: model.simulate(th).values,
                model.noise_covariance,
            )
        except SimulationFailure:
            logger.warning(
                "dropping mixture component at %s: simulation diverged at a sigma point",
                np.array2string(comp.mean, precision=3),
            )
            continue
        out_components.append(GaussianComponent(comp.weight, og.mean, og.covariance))
    if not out_components:
        raise CurvePredictionFailure("all mixture components failed to propagate")
    total = sum(c.weight for c in out_components)
    for c in out_components:
        c.weight /= total
    return GaussianMixture(out_components)
