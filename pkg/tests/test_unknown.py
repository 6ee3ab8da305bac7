import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contcp.core import CalibratedScores, FunctionPredictor
from contcp.errors import InvalidInputError
from contcp.quantile import pinball_loss
from contcp.unknown import (FixedSigmaProblem, GaussianTilt, TiltProblem, interval_fixed_sigma, interval_hard,
                            kink_sigmas, solve_ps, tilt_kernel, tilt_value, v_last)
from oracles import check_tilt_solution, random_tilt_instance, tilt_grid_oracle

SQRT_2PI = math.sqrt(2 * math.pi)


def test_tilt_value_at_the_mode():
    assert tilt_value(GaussianTilt(1.0, 1.0, 0.0), 0.0, pi_hat=1 / SQRT_2PI) == pytest.approx(1.0)


def test_tilt_value_at_half_maximum():
    sigma = 1.0
    a = sigma * math.sqrt(2 * math.log(2))
    assert tilt_value(GaussianTilt(sigma, 1.0, 0.0), a, pi_hat=1 / SQRT_2PI) == pytest.approx(0.5)


@given(st.floats(0.01, 10), st.floats(0.1, 10), st.floats(-5, 5), st.floats(0.01, 1))
def test_tilt_value_linear_in_c(k, sigma, a, pi_hat):
    one = tilt_value(GaussianTilt(sigma, 1.0, 0.0), a, pi_hat=pi_hat)
    assert tilt_value(GaussianTilt(sigma, k, 0.0), a, pi_hat=pi_hat) == pytest.approx(k * one, rel=1e-12)


def test_tilt_value_uses_the_density_model():
    tilt = GaussianTilt(2.0, 1.5, 3.0, hat_pi=lambda a, x: np.full(np.shape(a), 0.25))
    assert tilt_value(tilt, 4.0, x=[1.0]) == pytest.approx(tilt_value(tilt, 4.0, pi_hat=0.25))


@pytest.mark.parametrize("sigma,c", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0)])
def test_tilt_rejects_bad_parameters(sigma, c):
    with pytest.raises(InvalidInputError):
        GaussianTilt(sigma, c, 0.0)


def test_slack_reconstruction_matches_pinball_objective():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        sigma, c, alpha = rng.uniform(0.05, 5), rng.uniform(0.5, 2), rng.uniform(0.01, 0.5)
        a, pi_hat, scores = rng.uniform(-3, 3, n), rng.uniform(0.05, 1, n), rng.exponential(1, n)
        g = c * tilt_kernel(a, 0.0, pi_hat, sigma)
        u, v = np.maximum(scores - g, 0), np.maximum(g - scores, 0)
        assert np.sum((1 - alpha) * u + alpha * v) == pytest.approx(pinball_loss(g, scores, alpha).sum(),
                                                                   abs=1e-10)


def test_single_point_perfect_fit():
    # S_1 is reachable by g at (sigma=1, c=1): the optimum has zero loss.
    pi_hat = 0.2
    s = float(tilt_kernel(0.5, 0.0, pi_hat, 1.0))
    sol = solve_ps([s], [0.5], [pi_hat], 0.0, 0.1, 2.0, (0.1, 10))
    assert sol.objective == pytest.approx(0.0, abs=1e-12)


def test_three_point_instance_against_dense_grid():
    scores, a, pi_hat = [1.0, 0.5, 0.1], [0.0, 1.0, 2.0], [1.0, 1.0, 1.0]
    bounds = (1e-2, 10.0)
    sol = solve_ps(scores, a, pi_hat, 0.0, 0.1, 2.0, bounds)
    best, _ = tilt_grid_oracle(scores, a, pi_hat, 0.0, 0.1, 2.0, bounds)
    assert sol.objective == pytest.approx(best, abs=1e-3)
    check_tilt_solution(sol, scores, a, pi_hat, 0.0, 2.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_solution_never_worse_than_grid(seed):
    scores, a, pi_hat, a_star, alpha = random_tilt_instance(np.random.default_rng(seed))
    sol = solve_ps(scores, a, pi_hat, a_star, alpha, 2.0, (0.05, 10))
    best, _ = tilt_grid_oracle(scores, a, pi_hat, a_star, alpha, 2.0, (0.05, 10), n=200, zoom=0)
    assert sol.objective <= best + 1e-12
    check_tilt_solution(sol, scores, a, pi_hat, a_star, 2.0)
    g = sol.c_a * tilt_kernel(a, a_star, pi_hat, sol.sigma)
    assert pinball_loss(g, scores, alpha).sum() == pytest.approx(sol.objective, abs=1e-10)


def test_kink_candidates_are_ties():
    rng = np.random.default_rng(2)
    scores, a, pi_hat = rng.exponential(1, 6), rng.uniform(-2, 2, 6), rng.uniform(0.1, 0.5, 6)
    for sigma in kink_sigmas(scores, a, pi_hat, 0.0, 2.0, (1e-3, 1e3)):
        k = tilt_kernel(a, 0.0, pi_hat, sigma)
        ratios = scores / k
        box = np.min(np.abs(np.log(ratios[:, None] / np.array([0.5, 2.0])[None, :])))
        pair = np.min(np.abs(np.log(ratios[:, None] / ratios[None, :]))[~np.eye(6, dtype=bool)])
        assert min(box, pair) <= 1e-8


def test_direct_and_cached_paths_agree():
    scores, a, pi_hat, a_star, alpha = random_tilt_instance(np.random.default_rng(4))
    cached = solve_ps(scores, a, pi_hat, a_star, alpha, 2.0, (0.05, 10))
    a_shift = a.copy()
    a_shift[-1] = a_star + 1e-300  # forces the uncached solver; same kernel values
    direct = solve_ps(scores, a_shift, pi_hat, a_star, alpha, 2.0, (0.05, 10))
    assert cached.objective == pytest.approx(direct.objective, abs=1e-12)


def _small_problem(seed=0, n=30):
    rng = np.random.default_rng(seed)
    a, pi_hat, scores = rng.uniform(0, 10, n), rng.uniform(0.05, 0.3, n), rng.exponential(1.0, n)
    return scores, a, pi_hat


def test_v_last_far_below_and_far_above():
    scores, a, pi_hat = _small_problem()
    a_all, p_all = np.append(a, 5.0), np.append(pi_hat, 0.1)
    s_all = np.append(scores, 0.0)
    bounds = (0.01, 10.0)
    assert v_last(s_all, a_all, p_all, 5.0, 0.1, 2.0, bounds, -1.0) > 0
    g_max = 2.0 / (SQRT_2PI * bounds[0] * 0.1)
    assert v_last(s_all, a_all, p_all, 5.0, 0.1, 2.0, bounds, 1e6 * g_max) == 0.0


def test_v_can_rise_when_the_optimum_switches_branch():
    # Counterexample to v_{n+1} being non-increasing in S. Past S ~ 4.78 a narrow
    # tilt with the new point far above its score overtakes the wide one; the
    # dense grid lands on the same branch, so the jump is in the optimum itself.
    scores, a, pi_hat, a_star, alpha = random_tilt_instance(np.random.default_rng(0))
    bounds = (0.0036741791530369564, 3.6741791530369565)
    prob = TiltProblem(scores[:-1], a[:-1], pi_hat[:-1], a_star, pi_hat[-1], alpha, 2.0, bounds)
    below, above = prob.solve(4.75), prob.solve(4.85)
    assert below.v[-1] == 0.0 and above.v[-1] > 8.0
    for s_new, sol in ((4.75, below), (4.85, above)):
        best, (sigma, _) = tilt_grid_oracle(np.append(scores[:-1], s_new), a, pi_hat, a_star, alpha, 2.0, bounds)
        assert sol.objective == pytest.approx(best, abs=1e-6)
        assert sigma == pytest.approx(sol.sigma, rel=1e-2)


def test_zero_calibration_scores_put_s_star_at_the_new_tilt():
    a, pi_hat = np.array([0.0, 1.0, 2.0]), np.array([0.3, 0.3, 0.3])
    prob = TiltProblem(np.zeros(3), a, pi_hat, 0.0, 0.3, 0.1, 2.0, (0.1, 10.0))
    s_star = prob.s_star(epsilon=1e-5)
    scan = np.linspace(0, 2 * max(s_star, 1e-3), 2001)
    inside = [prob.inside(s) for s in scan]
    last_inside = scan[np.flatnonzero(inside)[-1]]
    assert s_star == pytest.approx(last_inside, abs=2 * (scan[1] - scan[0]))
    g_new = prob.solve(s_star).c_a * tilt_kernel(0.0, 0.0, 0.3, prob.solve(s_star).sigma)
    assert s_star == pytest.approx(float(g_new), rel=1e-3)


def test_hard_interval_perfect_predictor_keeps_the_tilt_floor():
    # Zero calibration scores still leave v > 0 for every S below the new point's
    # tilt, which is at least c = 1/M times the kernel: S* is that value, not 0.
    predictor = FunctionPredictor(lambda x, a: np.sin(0.1 * a))
    calib = CalibratedScores(np.ones((40, 1)), np.linspace(0, 10, 40), np.zeros(40))
    density = lambda a, x: np.full(np.shape(a), 0.1)  # noqa: E731
    iv = interval_hard(predictor, density, calib, [1.0], 5.0, 0.1, M=2.0, sigma_bounds=(0.01, 10.0),
                       epsilon=1e-6)
    assert iv.center == pytest.approx(math.sin(0.5))
    assert iv.s_star == pytest.approx(0.5 * float(tilt_kernel(5.0, 5.0, 0.1, 10.0)), abs=1e-6)


def test_hard_interval_is_deterministic():
    scores, a, pi_hat = _small_problem(3, 100)
    calib = CalibratedScores(np.ones((100, 1)), a, scores)
    predictor = FunctionPredictor(lambda x, a: 0.0 * a)
    density = lambda a, x: np.full(np.shape(a), 0.1)  # noqa: E731
    first = interval_hard(predictor, density, calib, [1.0], 4.0, 0.1)
    second = interval_hard(predictor, density, calib, [1.0], 4.0, 0.1)
    assert (first.lower, first.upper) == (second.lower, second.upper)


def test_fixed_sigma_with_no_error_room_uses_the_plain_tilt():
    scores, a, pi_hat = _small_problem(1)
    k = tilt_kernel(a, 5.0, pi_hat, 2.0)
    k_new = float(tilt_kernel(5.0, 5.0, 0.1, 2.0))
    prob = FixedSigmaProblem(scores, k, k_new, 0.1, M=1.0)
    assert prob.c_star(0.3)[0] == 1.0
    assert prob.s_star(epsilon=1e-6) == pytest.approx(k_new, abs=1e-6)


def test_fixed_sigma_at_the_optimal_width_agrees_with_the_joint_search():
    eps = 1e-4
    for seed in range(5):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(20, 120))
        a, pi_hat, scores = rng.uniform(0, 10, n), rng.uniform(0.05, 0.3, n), rng.exponential(1, n)
        a_star, pi_new = float(rng.uniform(2, 8)), float(rng.uniform(0.05, 0.3))
        prob = TiltProblem(scores, a, pi_hat, a_star, pi_new, 0.1, 2.0, (0.01, 10.0))
        s_joint = prob.s_star(eps)
        sigma = prob.solve(s_joint).sigma
        fixed = FixedSigmaProblem(scores, tilt_kernel(a, a_star, pi_hat, sigma),
                                  float(tilt_kernel(a_star, a_star, pi_new, sigma)), 0.1, 2.0)
        assert fixed.s_star(eps) == pytest.approx(s_joint, abs=2 * eps)


def test_fixed_sigma_wide_tilt_approaches_split_conformal():
    rng = np.random.default_rng(8)
    n, alpha, sigma0 = 200, 0.1, 1e4
    a, scores = rng.uniform(0, 10, n), rng.exponential(1.0, n)
    # Constant density chosen so the unit-c tilt equals 1; the box [1/3, 3] then holds the quantile.
    pi_const = 1.0 / (SQRT_2PI * sigma0)
    calib = CalibratedScores(np.ones((n, 1)), a, scores)
    predictor = FunctionPredictor(lambda x, a: 0.0 * a)
    density = lambda a, x: np.full(np.shape(a), pi_const)  # noqa: E731
    iv = interval_fixed_sigma(predictor, density, calib, [1.0], 5.0, alpha, M=3.0, sigma0=sigma0, epsilon=1e-6)
    split = np.sort(scores)[math.ceil((n + 1) * (1 - alpha)) - 1]
    assert iv.s_star == pytest.approx(split, rel=0.05)


def test_fixed_sigma_rejects_bad_width():
    calib = CalibratedScores(np.ones((3, 1)), [0.0, 1.0, 2.0], [0.1, 0.2, 0.3])
    with pytest.raises(InvalidInputError):
        interval_fixed_sigma(FunctionPredictor(lambda x, a: a), lambda a, x: np.ones_like(a), calib, [1.0],
                             1.0, 0.1, sigma0=0.0)


def test_solve_rejects_bad_inputs():
    with pytest.raises(InvalidInputError):
        solve_ps([1.0, 2.0], [0.0, 0.0], [0.1, 0.0], 0.0, 0.1)
    with pytest.raises(InvalidInputError):
        solve_ps([1.0, 2.0], [0.0, 0.0], [0.1, 0.1], 0.0, 0.1, M=1.0)
