"""Tests of rpdp_fl.scf."""

import math
import time
import unittest

import numpy as np
import pytest

from rpdp_fl.accountant import MechanismParams, fl_epsilon
from rpdp_fl.errors import FitError, PrivacyDomainError
from rpdp_fl.prefs import BoundedMixGauss, sample_budgets
from rpdp_fl.sampling import derive_stream
from rpdp_fl.scf import (
    ExpFit,
    Observation,
    binary_search_q,
    default_q_grid,
    estimate_q,
    estimate_q_many,
    fit_estimator,
    fit_exponential,
    observation_rows,
    r_squared,
    simulate_observations,
)

HALF_CLIENTS = MechanismParams(sigma=1.0, delta=1e-3, tau=5, rounds=20, client_prob=0.5)


def exact_observations(a, b, c, grid=None):
    """Observations lying exactly on exp(a·q + b) + c."""
    grid = default_q_grid() if grid is None else grid
    return [Observation(q=q, eps_star=math.exp(a * q + b) + c) for q in grid]


@pytest.fixture(scope="module")
def half_clients_fit():
    return fit_estimator(HALF_CLIENTS)


def test_default_grid():
    grid = default_q_grid()
    assert len(grid) == 100
    assert grid[0] == pytest.approx(1e-3)
    assert grid[-1] == 1.0
    assert all(b > a for a, b in zip(grid, grid[1:]))
    assert sum(q < 0.1 for q in grid) == 50


def test_simulated_observations_match_accountant():
    grid = [0.01, 0.1, 0.5, 1.0]
    observations = simulate_observations(HALF_CLIENTS, grid)
    for obs in observations:
        assert obs.eps_star == fl_epsilon(obs.q, HALF_CLIENTS).epsilon
    assert observation_rows(observations)[-1] == (1.0, observations[-1].eps_star, observations[-1].alpha_star)


def test_simulation_is_the_same_with_workers():
    serial = simulate_observations(HALF_CLIENTS, [0.05, 0.2, 0.6, 1.0])
    parallel = simulate_observations(HALF_CLIENTS, [0.05, 0.2, 0.6, 1.0], workers=4)
    assert serial == parallel


@pytest.mark.parametrize("grid", [[], [0.5, 0.2, 1.0], [0.0, 1.0], [0.1, 0.5]])
def test_bad_grids(grid):
    with pytest.raises(FitError):
        simulate_observations(HALF_CLIENTS, grid)


class ExponentialFitTest(unittest.TestCase):
    """Tests of fit_exponential on synthetic observations."""

    def test_recovers_exact_model(self):
        fit = fit_exponential(exact_observations(4.0, 0.5, 0.3))
        self.assertAlmostEqual(fit.a, 4.0, delta=1e-6)
        self.assertAlmostEqual(fit.b, 0.5, delta=1e-6)
        self.assertAlmostEqual(fit.c, 0.3, delta=1e-6)
        self.assertAlmostEqual(fit.r_squared, 1.0, delta=1e-9)
        self.assertEqual(fit.eps_full, math.exp(4.5) + 0.3)
        self.assertEqual(fit.q_floor, default_q_grid()[0])

    def test_too_few_observations(self):
        with self.assertRaises(FitError):
            fit_exponential(exact_observations(4.0, 0.5, 0.3, grid=[0.5, 1.0]))

    def test_decreasing_observations(self):
        with self.assertRaises(FitError):
            fit_exponential(exact_observations(-2.0, 0.5, 0.3))

    def test_round_trip(self):
        fit = fit_exponential(exact_observations(4.0, 0.5, 0.3))
        for eps in np.linspace(fit.eps_floor * 1.01, fit.eps_full * 0.99, 20):
            q = estimate_q(fit, eps)
            self.assertAlmostEqual(math.exp(4.0 * q + 0.5) + 0.3, eps, delta=1e-6 * eps)

    def test_simulated_budgets_map_to_their_grid_points(self):
        observations = exact_observations(4.0, 0.5, 0.3)
        fit = fit_exponential(observations)
        for obs in observations[1:-1]:
            self.assertAlmostEqual(estimate_q(fit, obs.eps_star), obs.q, delta=1e-9)

    def test_to_dict(self):
        observations = exact_observations(4.0, 0.5, 0.3)
        fit = fit_exponential(observations)
        self.assertEqual(ExpFit.from_dict(fit.to_dict(), observations), fit)
        self.assertEqual(sorted(fit.to_dict()), ["a", "b", "c", "eps_full", "q_floor", "r_squared"])
        self.assertEqual(ExpFit.from_dict(fit.to_dict()).knots_q, ())

    def test_r_squared_of_a_constant(self):
        fit = ExpFit(a=1.0, b=0.0, c=0.0, r_squared=0.0, eps_full=2.0, q_floor=0.1)
        with self.assertRaises(FitError):
            r_squared([Observation(0.5, 1.0), Observation(1.0, 1.0)], fit)


class EstimateTest(unittest.TestCase):
    """Tests of estimate_q at the edges of its range."""

    fit = ExpFit(a=4.0, b=0.5, c=0.3, r_squared=1.0, eps_full=math.exp(4.5) + 0.3, q_floor=1e-3)

    def test_above_full_budget(self):
        self.assertEqual(estimate_q(self.fit, self.fit.eps_full), 1.0)
        self.assertEqual(estimate_q(self.fit, 1e6), 1.0)

    def test_below_floor(self):
        self.assertEqual(estimate_q(self.fit, self.fit.eps_floor), 0.0)
        self.assertEqual(estimate_q(self.fit, 0.01), 0.0)

    def test_monotone(self):
        eps = np.linspace(0.05, 100.0, 200)
        q = [estimate_q(self.fit, e) for e in eps]
        self.assertTrue(all(b >= a for a, b in zip(q, q[1:])))

    def test_many_matches_scalar(self):
        eps = np.array([0.05, 2.0, 10.0, 50.0, 100.0])
        self.assertTrue(np.allclose(estimate_q_many(self.fit, eps), [estimate_q(self.fit, e) for e in eps]))

    def test_nonpositive_budget(self):
        with self.assertRaises(PrivacyDomainError):
            estimate_q(self.fit, 0.0)
        with self.assertRaises(PrivacyDomainError):
            estimate_q_many(self.fit, [1.0, -1.0])


def test_half_clients_fit_quality(half_clients_fit):
    fit, observations = half_clients_fit
    assert fit.r_squared >= 0.99
    assert fit.a > 0
    assert fit.eps_full == observations[-1].eps_star


def test_binary_search_brackets_budget():
    q = binary_search_q(10.0, HALF_CLIENTS)
    assert fl_epsilon(q, HALF_CLIENTS).epsilon <= 10.0
    assert fl_epsilon(min(q + 2e-4, 1.0), HALF_CLIENTS).epsilon > 10.0
    assert binary_search_q(1e4, HALF_CLIENTS) == 1.0
    with pytest.raises(PrivacyDomainError):
        binary_search_q(1e-3, HALF_CLIENTS)


def test_estimator_agrees_with_binary_search(half_clients_fit):
    fit, observations = half_clients_fit
    assert fit.eps_floor == observations[0].eps_star == fl_epsilon(1e-3, HALF_CLIENTS).epsilon
    for eps in np.linspace(fit.eps_floor * 1.001, fit.eps_full * 0.999, 50):
        assert abs(estimate_q(fit, eps) - binary_search_q(eps, HALF_CLIENTS)) <= 0.02


def test_estimated_probabilities_stay_within_budget(half_clients_fit):
    fit, _ = half_clients_fit
    budgets = np.concatenate(
        [
            np.geomspace(fit.eps_floor * 1.0001, fit.eps_full * 0.9999, 100),
            np.linspace(fit.eps_floor * 1.0001, fit.eps_full * 0.9999, 100),
        ]
    )
    ratios = np.array([fl_epsilon(estimate_q(fit, eps), HALF_CLIENTS).epsilon / eps for eps in budgets])
    assert np.mean(ratios <= 1.05) >= 0.99


def test_budgets_below_the_smallest_simulated_budget_are_excluded(half_clients_fit):
    fit, observations = half_clients_fit
    assert estimate_q(fit, observations[0].eps_star * 0.999) == 0.0
    assert estimate_q(fit, observations[0].eps_star * 1.001) >= observations[0].q


def test_linear_grid_fits():
    grid = tuple(float(q) for q in np.linspace(1e-3, 1.0, 100))
    fit, observations = fit_estimator(HALF_CLIENTS, grid)
    assert fit.value(fit.q_floor) > 0
    assert fit.c < observations[0].eps_star
    assert fit.r_squared > 0.9
    for eps in np.linspace(fit.eps_floor * 1.001, fit.eps_full * 0.999, 10):
        assert abs(estimate_q(fit, eps) - binary_search_q(eps, HALF_CLIENTS)) <= 0.02


def test_estimator_is_faster_than_binary_search():
    budgets = sample_budgets(BoundedMixGauss(), 1000, derive_stream(0, ["timing"]))

    start = time.perf_counter()
    fit, _ = fit_estimator(HALF_CLIENTS)
    estimate_q_many(fit, budgets)
    scf_seconds = time.perf_counter() - start

    start = time.perf_counter()
    for eps in budgets:
        try:
            binary_search_q(float(eps), HALF_CLIENTS)
        except PrivacyDomainError:
            pass
    search_seconds = time.perf_counter() - start

    assert search_seconds >= 5 * scf_seconds
