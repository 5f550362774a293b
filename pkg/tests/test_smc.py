import logging

import numpy as np
import pytest

from utabc.models import Prior, build_problem
from utabc.scheduler import QuantileScheduler
from utabc.smc import (
    PerturbationKernel,
    Population,
    adapt_kernel,
    compute_weight,
    compute_weights,
    quantile_threshold,
    rejection_round,
    run_abc_smc,
)


def _population(thetas, weights, epsilon=1.0):
    thetas = np.asarray(thetas, dtype=float)
    w = np.asarray(weights, dtype=float)
    return Population(thetas, w, np.zeros(len(w)), round_index=1, epsilon=epsilon)


def test_rejection_accepts_everything_at_infinite_threshold():
    p = build_problem("toy")
    pop = rejection_round(p.model, p.prior, p.observed, np.inf, 40, seed=0)
    assert len(pop) == 40
    assert pop.proposals == 40  # acceptance rate one
    np.testing.assert_allclose(pop.weights, 1.0 / 40)


def test_quantile_threshold_interpolates():
    assert quantile_threshold(np.array([1.0, 2, 3, 4, 5]), 0.8) == pytest.approx(4.2)
    with pytest.raises(ValueError):
        quantile_threshold(np.array([1.0]), 0.0)
    with pytest.raises(ValueError):
        quantile_threshold(np.array([1.0]), 1.0)


def test_adapt_kernel_doubles_weighted_covariance():
    pop = _population([[-1.0], [1.0]], [0.5, 0.5])
    kernel = adapt_kernel(pop)
    # weighted population variance is 1, kernel doubles it
    assert kernel.covariance[0, 0] == pytest.approx(2.0, rel=1e-14)


def test_adapt_kernel_identical_particles_floor(caplog):
    pop = _population([[2.0]] * 5, [0.2] * 5)
    with caplog.at_level(logging.WARNING, logger="utabc.smc"):
        kernel = adapt_kernel(pop)
    assert any("singular" in r.message for r in caplog.records)
    assert kernel.covariance[0, 0] == pytest.approx(1e-16)
    # the kernel must still be usable
    draw = kernel.sample(np.random.default_rng(0), np.array([2.0]))
    assert np.isfinite(draw).all()


def test_compute_weight_hand_value():
    prev = _population([[0.0], [1.0]], [0.3, 0.7])
    kernel = PerturbationKernel(np.array([[1.0]]))
    prior = Prior([("uniform", -10.0, 10.0)])
    # theta = 0.5 is equidistant from both particles, so the mixture density
    # collapses to a single standard-normal evaluation at 0.5
    phi_half = np.exp(-0.125) / np.sqrt(2.0 * np.pi)
    w = compute_weight(np.array([0.5]), prev, kernel, prior)
    assert w == pytest.approx(0.05 / phi_half, rel=1e-12)


def test_wide_kernel_gives_near_uniform_weights():
    rng = np.random.default_rng(7)
    prior = Prior([("uniform", -10.0, 10.0)])
    thetas = rng.uniform(-10, 10, size=(1000, 1))
    prev = _population(thetas, np.full(1000, 1e-3))
    kernel = PerturbationKernel(np.array([[1e4]]))
    w = compute_weights(thetas, prev, kernel, prior)
    assert w.max() / w.min() < 2.0


def test_population_validation():
    with pytest.raises(ValueError):
        _population([[0.0], [1.0]], [0.5, 0.6])  # weights do not sum to 1
    with pytest.raises(ValueError):
        Population(
            np.zeros((2, 1)), np.full(2, 0.5), np.zeros(3), round_index=1, epsilon=1.0
        )


def test_run_rejects_bad_sizes():
    p = build_problem("toy")
    sched = QuantileScheduler(0.5)
    with pytest.raises(ValueError):
        run_abc_smc(p.model, p.prior, p.observed, sched, 1, 0.01, 10_000)
    with pytest.raises(ValueError):
        run_abc_smc(p.model, p.prior, p.observed, sched, 100, 0.01, 99)


def _short_toy_run(seed=0, target=51.5, budget=200_000):
    p = build_problem("toy")
    return run_abc_smc(
        p.model, p.prior, p.observed, QuantileScheduler(0.3),
        n_particles=50, target_epsilon=target, budget=budget, seed=seed,
    )


def test_seed_determinism_bitwise():
    a = _short_toy_run(seed=42)
    b = _short_toy_run(seed=42)
    assert a.terminated == b.terminated == "target-reached"
    assert a.total_simulations == b.total_simulations
    np.testing.assert_array_equal(a.epsilons, b.epsilons)
    np.testing.assert_array_equal(a.final.thetas, b.final.thetas)
    np.testing.assert_array_equal(a.final.weights, b.final.weights)


def test_different_seeds_differ():
    a = _short_toy_run(seed=0)
    b = _short_toy_run(seed=1)
    assert not np.array_equal(a.final.thetas, b.final.thetas)


def test_epsilons_non_increasing():
    res = _short_toy_run(seed=3, target=30.0)
    eps = res.epsilons
    assert len(eps) >= 2
    assert np.all(np.diff(eps) <= 0)


def test_round_weights_normalised():
    res = _short_toy_run(seed=4)
    for pop in res.populations:
        assert pop.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(pop.weights >= 0)
        assert np.all(pop.distances <= pop.epsilon)


def test_budget_accounting_sums_to_total():
    # seed 5 pushes through the plateau: five rounds, sixteen thousand draws
    res = _short_toy_run(seed=5, target=30.0)
    assert res.terminated == "target-reached"
    assert sum(p.simulations_used for p in res.populations) == res.total_simulations


def test_budget_exhausted_discards_partial_round():
    p = build_problem("toy")
    res = run_abc_smc(
        p.model, p.prior, p.observed, QuantileScheduler(0.3),
        n_particles=50, target_epsilon=0.01, budget=1500, seed=0,
    )
    assert res.terminated == "budget-exhausted"
    assert res.total_simulations <= 1500
    # completed rounds only: their counts undershoot the grand total
    assert sum(p.simulations_used for p in res.populations) < res.total_simulations


def test_tiny_budget_stops_before_any_round():
    p = build_problem("toy")
    res = run_abc_smc(
        p.model, p.prior, p.observed, QuantileScheduler(0.5),
        n_particles=50, target_epsilon=0.01, budget=60, seed=0,
    )
    assert res.terminated == "budget-exhausted"
    assert res.final is None
    assert res.populations == []
