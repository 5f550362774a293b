import numpy as np
import pytest

from utabc.errors import CurvePredictionFailure, SimulationFailure
from utabc.gmm import GaussianComponent, GaussianMixture
from utabc.ut import (
    OutputGaussian,
    SigmaPointSet,
    UtParams,
    predict_output_mixture,
    sigma_points,
    ut_propagate,
)


def test_sigma_points_hand_case_1d():
    """L=1, unit variance, default kappa = 3 - L = 2.

    lambda = 1*(1+2) - 1 = 2, so the off-centre points sit at +-sqrt(3) and
    the mean weights are (2/3, 1/6, 1/6).
    """
    sp = sigma_points(np.array([0.0]), np.array([[1.0]]))
    assert sp.lam == pytest.approx(2.0)
    np.testing.assert_allclose(np.sort(sp.points[:, 0]), [-np.sqrt(3), 0.0, np.sqrt(3)])
    assert sp.points[0, 0] == 0.0  # centre first
    np.testing.assert_allclose(sp.mean_weights, [2.0 / 3, 1.0 / 6, 1.0 / 6])
    # covariance weights differ only at the centre: + (1 - alpha^2 + beta)
    np.testing.assert_allclose(sp.cov_weights[1:], sp.mean_weights[1:])
    assert sp.cov_weights[0] == pytest.approx(2.0 / 3 + 2.0)


def test_sigma_points_hand_case_2d():
    # L=2: kappa = 1, lambda = 1, offsets are sqrt(3) along each axis
    sp = sigma_points(np.zeros(2), np.eye(2))
    assert sp.points.shape == (5, 2)
    offsets = sp.points[1:]
    got = {tuple(np.round(row, 10)) for row in offsets}
    s3 = round(np.sqrt(3.0), 10)
    want = {(s3, 0.0), (-s3, 0.0), (0.0, s3), (0.0, -s3)}
    assert got == want
    np.testing.assert_allclose(sp.mean_weights, [1 / 3, 1 / 6, 1 / 6, 1 / 6, 1 / 6])


def test_sigma_points_reproduce_input_moments():
    # weighted sample moments of the points recover (mean, cov) exactly
    rng = np.random.default_rng(42)
    for dim in (1, 2, 4):
        mean = rng.normal(size=dim)
        a = rng.normal(size=(dim, dim))
        cov = a @ a.T + dim * np.eye(dim)
        sp = sigma_points(mean, cov)
        m = sp.mean_weights @ sp.points
        np.testing.assert_allclose(m, mean, atol=1e-12)
        centered = sp.points - m
        c = (centered.T * sp.cov_weights) @ centered
        np.testing.assert_allclose(c, cov, rtol=1e-10, atol=1e-12)


def test_ut_linear_exactness():
    # for g(x) = A x + b the transform is exact in mean and covariance
    rng = np.random.default_rng(7)
    for L in range(1, 6):
        for D in range(1, 6):
            A = rng.normal(size=(D, L))
            b = rng.normal(size=D)
            mean = rng.normal(size=L)
            root = rng.normal(size=(L, L))
            cov = root @ root.T + L * np.eye(L)
            sp = sigma_points(mean, cov)
            out = ut_propagate(sp, lambda x: A @ x + b)
            np.testing.assert_allclose(out.mean, A @ mean + b, rtol=1e-10, atol=1e-10)
            np.testing.assert_allclose(out.covariance, A @ cov @ A.T, rtol=1e-10, atol=1e-10)


def test_ut_quadratic_known_inflation():
    # x ~ N(0,1), g(x) = x^2: the transform gives mean 1 exactly but
    # variance 4 (the true chi-square variance is 2) — a known property of
    # the scaled point set, not a bug.
    sp = sigma_points(np.array([0.0]), np.array([[1.0]]))
    out = ut_propagate(sp, lambda x: np.array([x[0] ** 2]))
    assert out.mean[0] == pytest.approx(1.0, abs=1e-12)
    assert out.covariance[0, 0] == pytest.approx(4.0, abs=1e-12)


def test_ut_adds_noise_covariance():
    sp = sigma_points(np.array([0.0]), np.array([[1.0]]))
    out = ut_propagate(sp, lambda x: x.copy(), noise_cov=np.array([[0.5]]))
    assert out.covariance[0, 0] == pytest.approx(1.5, rel=1e-10)


class _CountingModel:
    """Minimal model stub: linear map, counts noiseless simulate calls."""

    def __init__(self, a=2.0, fail_above=np.inf):
        self.calls = 0
        self.a = a
        self.fail_above = fail_above
        self.noise_covariance = np.array([[0.25]])

    def simulate(self, theta, rng=None):
        self.calls += 1
        if abs(theta[0]) > self.fail_above:
            raise SimulationFailure("boom")

        class _D:
            values = np.array([self.a * theta[0]])

        return _D()


def _mixture(means, var=1.0):
    k = len(means)
    return GaussianMixture([
        GaussianComponent(1.0 / k, np.array([m]), np.array([[var]])) for m in means
    ])


def test_predict_output_mixture_evaluation_count():
    model = _CountingModel()
    mix = _mixture([0.0, 5.0, -3.0])
    out = predict_output_mixture(mix, model)
    # 2L+1 = 3 sigma points per component
    assert model.calls == 3 * 3
    assert out.n_components == 3
    np.testing.assert_allclose(out.weights, mix.weights)
    # linear map: component means double, variances scale by 4 plus noise
    np.testing.assert_allclose(
        sorted(c.mean[0] for c in out.components), [-6.0, 0.0, 10.0], atol=1e-12)
    for c in out.components:
        assert c.covariance[0, 0] == pytest.approx(4.0 + 0.25, rel=1e-10)


def test_predict_output_mixture_drops_failing_component():
    model = _CountingModel(fail_above=4.0)
    mix = _mixture([0.0, 50.0])
    out = predict_output_mixture(mix, model)
    assert out.n_components == 1
    assert out.weights[0] == pytest.approx(1.0)


def test_predict_output_mixture_all_fail():
    model = _CountingModel(fail_above=0.5)
    mix = _mixture([50.0, -50.0])
    with pytest.raises(CurvePredictionFailure):
        predict_output_mixture(mix, model)


def test_ut_params_kappa_default():
    assert UtParams().resolved_kappa(1) == 2.0
    assert UtParams().resolved_kappa(3) == 0.0
    assert UtParams(kappa=1.5).resolved_kappa(3) == 1.5
