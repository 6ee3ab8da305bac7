import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contcp.errors import InconsistentSolutionError, InvalidInputError, InvalidWeightError
from contcp.quantile import (pinball_loss, pinball_objective, recover_eta, scalar_quantile,
                             weighted_breakpoint, weighted_theta)


def grid_minimizer(scores, weights, alpha, hi, step=1e-4):
    """Smallest grid point attaining the minimum of the ray objective."""
    grid = np.arange(step, hi + step, step)
    obj = np.array([pinball_objective(t, scores, weights, alpha) for t in grid])
    return grid[np.flatnonzero(obj <= obj.min() + 1e-12)[0]], obj.min()


@pytest.mark.parametrize("theta,s,alpha,expected", [
    (1.0, 2.0, 0.1, 0.9),
    (3.0, 2.0, 0.1, 0.1),
    (2.0, 2.0, 0.37, 0.0),
])
def test_pinball_examples(theta, s, alpha, expected):
    assert pinball_loss(theta, s, alpha) == pytest.approx(expected)


@given(st.floats(-100, 100), st.floats(-100, 100), st.floats(0.01, 0.99))
def test_pinball_nonnegative_and_zero_only_at_fit(theta, s, alpha):
    loss = pinball_loss(theta, s, alpha)
    assert loss >= 0
    assert (loss == 0) == (theta == s)


def test_pinball_rejects_bad_alpha():
    with pytest.raises(InvalidInputError):
        pinball_loss(1.0, 1.0, 1.0)


def test_scalar_quantile_examples_against_grid():
    for scores, s_new, alpha, expected in [([1, 2, 3, 4], 5, 0.2, 4.0), ([1, 2, 3, 4], 0, 0.5, 2.0)]:
        aug = np.append(scores, s_new)
        grid = np.linspace(0, 6, 60001)
        obj = np.array([pinball_loss(t, aug, alpha).sum() for t in grid])
        oracle = grid[np.flatnonzero(obj <= obj.min() + 1e-9)[0]]  # smallest minimizer
        assert oracle == pytest.approx(expected, abs=1e-4)
        assert scalar_quantile(scores, s_new, alpha) == expected


@given(st.floats(-5, 5), st.floats(0.05, 0.95))
def test_scalar_quantile_constant_scores(c, alpha):
    assert scalar_quantile([c, c, c], c, alpha) == c


def test_scalar_quantile_empty():
    with pytest.raises(InvalidInputError):
        scalar_quantile([], 1.0, 0.1)


@given(st.lists(st.floats(0, 10), min_size=1, max_size=20), st.floats(0, 10),
       st.floats(0.01, 0.98), st.floats(0.001, 0.01))
def test_scalar_quantile_non_increasing_in_alpha(scores, s_new, alpha, bump):
    assert scalar_quantile(scores, s_new, alpha + bump) <= scalar_quantile(scores, s_new, alpha)


def test_weighted_theta_two_point_example():
    # Breakpoints 4/2 = 2 and 1/1 = 1; the objective is 1.0 at theta=1 and 0.5 at theta=2.
    sol = weighted_theta([4, 1], [2, 1], 0.5)
    theta, best = grid_minimizer([4, 1], [2, 1], 0.5, hi=3.0)
    assert sol.theta_star == pytest.approx(theta, abs=1e-4)
    assert sol.theta_star == 2.0
    assert sol.objective == pytest.approx(best)
    assert pinball_objective(1.0, [4, 1], [2, 1], 0.5) == pytest.approx(1.0)
    assert sol.objective == pytest.approx(0.5)


def test_weighted_theta_all_zero_scores_is_boundary():
    sol = weighted_theta([0, 0, 0], [1, 2, 3], 0.1)
    assert sol.theta_star == 0.0 and sol.boundary


@pytest.mark.parametrize("weights", [[1, 0, 1], [1, -1, 1], [1, np.inf, 1], [1, np.nan, 1]])
def test_weighted_theta_rejects_bad_weights(weights):
    with pytest.raises(InvalidWeightError):
        weighted_theta([1, 2, 3], weights, 0.1)


@given(st.lists(st.floats(0.01, 10), min_size=2, max_size=12), st.floats(0.05, 0.5))
def test_unit_weights_match_scalar_quantile(scores, alpha):
    sol = weighted_theta(scores, np.ones(len(scores)), alpha)
    assert sol.theta_star == scalar_quantile(scores[:-1], scores[-1], alpha)


@given(st.lists(st.floats(0.01, 10), min_size=2, max_size=12), st.floats(0.05, 0.5), st.floats(0.1, 10))
def test_constant_weights_scale_equivariance(scores, alpha, c):
    sol = weighted_theta(scores, np.full(len(scores), c), alpha)
    assert c * sol.theta_star == pytest.approx(scalar_quantile(scores[:-1], scores[-1], alpha), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_breakpoint_solver_matches_grid(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    scores = rng.uniform(0, 10, n)
    weights = rng.uniform(0.1, 10, n)
    alpha = float(rng.uniform(0.05, 0.5))
    sol = weighted_theta(scores, weights, alpha)
    hi = float((scores / weights).max()) * 1.1
    _, best = grid_minimizer(scores, weights, alpha, hi=hi, step=hi / 20000)
    # The exact minimizer can only beat the grid.
    assert sol.objective <= best + 1e-12
    slope = weights.sum()
    assert best - sol.objective <= slope * hi / 20000


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 15))
    scores = rng.integers(0, 5, n).astype(float)  # ties on purpose
    weights = rng.integers(1, 4, n).astype(float)
    perm = rng.permutation(n)
    a = weighted_theta(scores, weights, 0.2)
    b = weighted_theta(scores[perm], weights[perm], 0.2)
    assert a.theta_star == b.theta_star
    assert a.objective == pytest.approx(b.objective)


def test_largest_breakpoint_on_flat_segment():
    # Cumulative weight hits exactly (1 - alpha) W at b = 2: every theta in [2, 3] is optimal.
    assert weighted_breakpoint([1, 2, 3, 4], [1, 1, 1, 1], 0.5) == 2.0
    assert weighted_breakpoint([1, 2, 3, 4], [1, 1, 1, 1], 0.5, largest=True) == 3.0


def test_recover_eta_tied_example():
    eta = recover_eta(1.0, [1, 5], [1, 1], 0.5)
    np.testing.assert_allclose(eta, [-0.5, 0.5])
    assert eta @ np.ones(2) == pytest.approx(0.0)


def test_recover_eta_strict_branches():
    np.testing.assert_allclose(recover_eta(10.0, [1, 2], [1, 1], 0.3, boundary=True), [-0.3, -0.3])
    np.testing.assert_allclose(recover_eta(0.0, [1, 2], [1, 1], 0.3, boundary=True), [0.7, 0.7])


def test_recover_eta_flags_non_optimal_theta():
    with pytest.raises(InconsistentSolutionError):
        recover_eta(10.0, [1, 2, 3], [1, 1, 1], 0.3)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_recover_eta_box_and_stationarity(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 30))
    scores = rng.uniform(0, 5, n)
    weights = rng.uniform(0.1, 3, n)
    alpha = float(rng.uniform(0.05, 0.5))
    sol = weighted_theta(scores, weights, alpha)
    assert np.all(sol.eta >= -alpha - 1e-12) and np.all(sol.eta <= 1 - alpha + 1e-12)
    if sol.theta_star > 0:
        assert abs(sol.eta @ weights) <= 1e-8
