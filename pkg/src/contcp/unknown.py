"""Intervals for a hard intervention ``A = a*`` when the propensity is estimated.

The Dirac mass at ``a*`` is approximated by a Gaussian tilt of the estimated
propensity,

    g(a, x) = c / (sqrt(2 pi) sigma) * exp(-(a - a*)^2 / (2 sigma^2)) / pi_hat(a | x),

with ``c`` in ``[1/M, M]`` absorbing a bounded multiplicative error of
``pi_hat``. For fixed ``(sigma, c)`` the slack variables of the quantile
program are the positive and negative parts of ``S_i - g_i``, so the program
reduces to minimizing ``sum_i l_alpha(g_i, S_i)`` over two scalars. For fixed
``sigma`` the optimum in ``c`` is an exact weighted quantile; ``sigma`` is
searched on a log grid and refined with bounded Brent steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import lambertw

from .core import CalibratedScores, PredictionInterval, Predictor, build_interval
from .errors import DegenerateTiltError, InvalidInputError
from .known import _pdf
from .quantile import _CUM_RTOL, pinball_loss, recover_eta, weighted_breakpoint
from .search import bracket_and_bisect

SQRT_2PI = math.sqrt(2.0 * math.pi)
PI_HAT_FLOOR = 1e-12
N_SIGMA_GRID = 50
N_REFINE = 3
REFINE_XTOL = 1e-9
SNAP_LOG_RADIUS = 1e-3
SNAP_SLACK = 1e-10
SNAP_RTOL = 1e-5
DEFAULT_M = 2.0
KINK_ENUM_MAX = 40      # enumerate exact profile kinks up to this many points


@dataclass(frozen=True)
class GaussianTilt:
    sigma: float
    c_a: float
    a_star: float
    hat_pi: object = None  # density with ``pdf(a, x)`` or a callable

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise InvalidInputError(f"sigma must be positive, got {self.sigma}")
        if not self.c_a > 0:
            raise InvalidInputError(f"c_a must be positive, got {self.c_a}")


def tilt_kernel(a, a_star: float, pi_hat, sigma: float) -> np.ndarray:
    """Tilt values at ``c = 1``; ``pi_hat`` holds the estimated densities at ``a``."""
    a = np.asarray(a, dtype=float)
    pi_hat = np.maximum(np.asarray(pi_hat, dtype=float), PI_HAT_FLOOR)
    z = (a - a_star) / sigma
    return np.exp(-0.5 * z * z) / (SQRT_2PI * sigma * pi_hat)


def tilt_value(tilt: GaussianTilt, a, x=None, pi_hat=None):
    """``g(a, x)`` for the tilt; pass ``pi_hat`` directly or let ``tilt.hat_pi`` evaluate it."""
    if pi_hat is None:
        if tilt.hat_pi is None:
            raise InvalidInputError("need an estimated density value or a density model")
        pi_hat = _pdf(tilt.hat_pi, np.atleast_1d(a), np.atleast_2d(np.asarray(x, dtype=float)))
        if np.ndim(a) == 0:
            pi_hat = pi_hat[0]
    out = tilt.c_a * tilt_kernel(a, tilt.a_star, pi_hat, tilt.sigma)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True, eq=False)
class TiltSolution:
    sigma: float
    c_a: float
    u: np.ndarray
    v: np.ndarray
    objective: float


def _largest_merged_quantile(b, cum, b_t, wt, alpha):
    """Largest minimizer of the weighted pinball loss over sorted breakpoints ``b``
    (cumulative weights ``cum``) plus one extra breakpoint ``b_t`` of weight ``wt``."""
    nc = len(b)
    total = (float(cum[-1]) if nc else 0.0) + wt
    thr = (1.0 - alpha) * total + _CUM_RTOL * total
    p = int(np.searchsorted(b, b_t, side="right"))
    k1 = int(np.searchsorted(cum, thr, side="right"))
    if k1 < p:
        return float(b[k1])
    below = float(cum[p - 1]) if p > 0 else 0.0
    if below + wt > thr or nc == 0:
        return float(b_t)
    k2 = max(int(np.searchsorted(cum, thr - wt, side="right")), p)
    return float(b[min(k2, nc - 1)])


@dataclass(frozen=True)
class _SortedKernel:
    sigma: float
    k: np.ndarray      # calibration kernel values, original order
    b: np.ndarray      # sorted breakpoints S_i / k_i over k_i > 0
    cum: np.ndarray
    k_new: float


@dataclass(eq=False)
class TiltProblem:
    """Calibration side of the tilted quantile program for one ``(a*, pi_hat(a* | x_new))``.

    ``scores``, ``a`` and ``pi_hat`` describe the calibration points;
    ``pi_hat_new`` is the estimated density of the new point at ``a*``.
    The new point's score is supplied per call as the imputed value.
    """

    scores: np.ndarray
    a: np.ndarray
    pi_hat: np.ndarray
    a_star: float
    pi_hat_new: float
    alpha: float
    M: float = DEFAULT_M
    sigma_bounds: tuple = (1e-3, 1.0)
    n_grid: int = N_SIGMA_GRID
    _grid: list = field(default=None, repr=False)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float).ravel()
        self.a = np.asarray(self.a, dtype=float).ravel()
        self.pi_hat = np.asarray(self.pi_hat, dtype=float).ravel()
        if not (len(self.scores) == len(self.a) == len(self.pi_hat)):
            raise InvalidInputError("scores, doses and densities must be equally long")
        if not np.all(np.isfinite(self.scores)):
            raise InvalidInputError("scores must be finite")
        if not 0 < self.alpha < 1:
            raise InvalidInputError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.M > 1:
            raise InvalidInputError(f"error bound M must exceed 1, got {self.M}")
        lo, hi = self.sigma_bounds
        if not (0 < lo <= hi and math.isfinite(hi)):
            raise InvalidInputError(f"invalid sigma bounds {self.sigma_bounds}")
        if np.any(~(self.pi_hat > 0)) or not self.pi_hat_new > 0:
            raise InvalidInputError("estimated densities must be positive")
        sig = np.geomspace(lo, hi, self.n_grid) if hi > lo else np.array([lo])
        self._grid = [self._sorted(s) for s in sig]

    @property
    def n(self) -> int:
        return len(self.scores)

    def _kernels(self, sigma):
        k = tilt_kernel(self.a, self.a_star, self.pi_hat, sigma)
        k_new = 1.0 / (SQRT_2PI * sigma * max(self.pi_hat_new, PI_HAT_FLOOR))
        if not np.all(np.isfinite(k)) or not math.isfinite(k_new):
            raise DegenerateTiltError(f"non-finite tilt values at sigma={sigma}")
        return k, k_new

    def _sorted(self, sigma):
        k, k_new = self._kernels(sigma)
        keep = k > 0
        with np.errstate(over="ignore"):
            b = self.scores[keep] / k[keep]
        order = np.argsort(b, kind="stable")
        return _SortedKernel(sigma, k, b[order], np.cumsum(k[keep][order]), k_new)

    def _profile(self, sk: _SortedKernel, s_new):
        """Optimal ``c`` and objective for one ``sigma``."""
        c = _largest_merged_quantile(sk.b, sk.cum, s_new / sk.k_new, sk.k_new, self.alpha)
        c = min(max(c, 1.0 / self.M), self.M)
        obj = float(np.sum(pinball_loss(c * sk.k, self.scores, self.alpha))) \
            + float(pinball_loss(c * sk.k_new, s_new, self.alpha))
        return obj, c

    def solve(self, s_new: float) -> TiltSolution:
        s_new = float(s_new)
        grid = [sk.sigma for sk in self._grid]
        objs = [self._profile(sk, s_new)[0] for sk in self._grid]

        def profile(sigma):
            return self._profile(self._sorted(sigma), s_new)

        if self.n + 1 <= KINK_ENUM_MAX:
            kinks = kink_sigmas(np.append(self.scores, s_new), np.append(self.a, self.a_star),
                                np.append(self.pi_hat, self.pi_hat_new), self.a_star, self.M, self.sigma_bounds)
            grid, objs = _merge_candidates(grid, objs, kinks, profile)

        def snap(sigma, c):
            return self._tie_sigma(sigma, c, s_new)

        best_obj, best_c, best_sigma = _minimize_over_sigma(profile, grid, objs, self.sigma_bounds, snap)
        k, k_new = self._kernels(best_sigma)
        g = best_c * np.append(k, k_new)
        s = np.append(self.scores, s_new)
        return TiltSolution(best_sigma, best_c, np.maximum(s - g, 0.0), np.maximum(g - s, 0.0), best_obj)

    def _tie_sigma(self, sigma, c, s_new):
        """Width at which the new point ties exactly, if it nearly ties at ``(sigma, c)``.

        With ``c`` on the box the tie is ``c * k_new(sigma) = s_new``. With ``c``
        interior it is pinned by the tied calibration point ``j`` through
        ``c = S_j / k_j(sigma)``, giving ``k_new / k_j = s_new / S_j``.
        """
        k, k_new = self._kernels(sigma)
        if s_new <= 0 or abs(c * k_new - s_new) > SNAP_RTOL * s_new:
            return None
        pn = max(self.pi_hat_new, PI_HAT_FLOOR)
        if not 1.0 / self.M < c < self.M:
            return c / (SQRT_2PI * pn * s_new)
        j = int(np.argmin(np.abs(c * k - self.scores)))
        d = self.a[j] - self.a_star
        ratio = s_new * pn / (self.scores[j] * max(self.pi_hat[j], PI_HAT_FLOOR)) if self.scores[j] > 0 else 0.0
        if d == 0.0 or not ratio > 1.0:
            return None
        return abs(d) / math.sqrt(2.0 * math.log(ratio))

    def v_last(self, s_new: float) -> float:
        return float(self.solve(s_new).v[-1])

    def inside(self, s_new: float) -> bool:
        return self.v_last(s_new) > 1e-12 * max(1.0, abs(s_new))

    def s_star(self, epsilon: float = 1e-3, max_iter: int = 200) -> float:
        if not epsilon > 0:
            raise InvalidInputError("epsilon must be positive")
        s_up = max(float(self.scores.max()) if self.n else 0.0, 1.0)
        s_low = min(float(self.scores.min()) if self.n else 0.0, -1.0)
        return bracket_and_bisect(self.inside, s_up, s_low, epsilon, max_iter=max_iter)


def _split_last(scores, a, pi_hat):
    scores = np.asarray(scores, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel()
    pi_hat = np.asarray(pi_hat, dtype=float).ravel()
    if scores.size == 0:
        raise InvalidInputError("score list is empty")
    if not (scores.size == a.size == pi_hat.size):
        raise InvalidInputError("scores, doses and densities must be equally long")
    return scores, a, pi_hat


def solve_ps(scores, a, pi_hat, a_star: float, alpha: float, M: float = DEFAULT_M,
             sigma_bounds=(1e-3, 1.0), n_grid: int = N_SIGMA_GRID) -> TiltSolution:
    """Solve the tilted quantile program over all ``n + 1`` points.

    The last entry is the new point. Its dose enters the kernel like any
    other, so pass ``a[-1] = a_star`` for the usual hard intervention.
    """
    scores, a, pi_hat = _split_last(scores, a, pi_hat)
    if np.any(~(pi_hat > 0)):
        raise InvalidInputError("estimated densities must be positive")
    if not M > 1:
        raise InvalidInputError(f"error bound M must exceed 1, got {M}")
    if a[-1] == a_star:
        prob = TiltProblem(scores[:-1], a[:-1], pi_hat[:-1], a_star, pi_hat[-1], alpha, M,
                           tuple(sigma_bounds), n_grid)
        return prob.solve(scores[-1])
    return _solve_direct(scores, a, pi_hat, a_star, alpha, M, sigma_bounds, n_grid)


def kink_sigmas(scores, a, pi_hat, a_star: float, M: float, sigma_bounds) -> np.ndarray:
    """Widths at which some tilt value meets its score, i.e. where the profile can kink.

    A point ties the box edge when ``c k_i(sigma) = S_i`` with ``c`` in
    ``{1/M, M}``; two points tie each other when ``S_i / k_i = S_j / k_j``.
    Both have closed forms, the first through the Lambert W function.
    """
    scores = np.asarray(scores, dtype=float)
    d = np.asarray(a, dtype=float) - a_star
    p = np.maximum(np.asarray(pi_hat, dtype=float), PI_HAT_FLOOR)
    pos = scores > 0
    out = []
    for c in (1.0 / M, M):
        r = scores[pos] * p[pos] * SQRT_2PI / c          # exp(-d^2 / 2 sigma^2) / sigma = r
        dd = np.abs(d[pos])
        at_zero = dd == 0
        out.append(1.0 / r[at_zero])
        rr, dn = r[~at_zero], dd[~at_zero]
        arg = -(rr * dn) ** 2
        ok = arg >= -math.exp(-1.0)
        for branch in (0, -1):
            u = lambertw(arg[ok], branch).real
            t = np.sqrt(np.maximum(-u, 0.0)) / dn[ok]
            out.append(1.0 / t[t > 0])
    # Pairwise ties: sigma^2 = (d_j^2 - d_i^2) / (2 ln(S_i p_i / (S_j p_j))).
    sp = np.log(scores[pos] * p[pos])
    d2 = d[pos] ** 2
    i, j = np.triu_indices(len(sp), 1)
    num = d2[j] - d2[i]
    den = 2.0 * (sp[i] - sp[j])
    with np.errstate(divide="ignore", invalid="ignore"):
        s2 = num / den
    out.append(np.sqrt(s2[(s2 > 0) & np.isfinite(s2)]))
    cand = np.concatenate(out) if out else np.empty(0)
    lo, hi = sigma_bounds
    return np.unique(cand[(cand >= lo) & (cand <= hi)])


def _merge_candidates(grid, objs, extra, profile):
    """Insert extra widths (with their profile values) into the sorted grid."""
    if len(extra) == 0:
        return grid, objs
    sig = np.concatenate([np.asarray(grid, dtype=float), extra])
    val = np.concatenate([np.asarray(objs, dtype=float), [profile(t)[0] for t in extra]])
    order = np.argsort(sig, kind="stable")
    return list(sig[order]), list(val[order])


def _local_minima(objs):
    """Grid indices of local minima, best first (ties to the smaller index)."""
    m = len(objs)
    idx = [i for i in range(m)
           if (i == 0 or objs[i] <= objs[i - 1]) and (i == m - 1 or objs[i] <= objs[i + 1])]
    return sorted(idx, key=lambda i: (objs[i], i))


def _minimize_over_sigma(profile, grid, objs, bounds, snap=None):
    """Refine the best grid local minima of ``sigma -> min_c objective``.

    ``profile(sigma)`` returns ``(objective, c)``. ``snap(sigma, c)`` may
    propose a nearby kink where the refined point would otherwise stop a
    tolerance short of an exact tie. Returns ``(objective, c, sigma)``.
    """
    objs = np.asarray(objs, dtype=float)
    i0 = int(np.argmin(objs))
    best_obj, best_c = profile(grid[i0])
    best_sigma = grid[i0]
    logs = np.log(grid)

    def better(obj, ref, slack=0.0):
        return obj < ref - (1e-12 - slack) * max(1.0, abs(ref))

    if len(grid) > 2:
        for i in _local_minima(objs)[:N_REFINE]:
            lo, hi = logs[max(i - 1, 0)], logs[min(i + 1, len(logs) - 1)]
            res = minimize_scalar(lambda t: profile(math.exp(t))[0], bounds=(lo, hi),
                                  method="bounded", options={"xatol": REFINE_XTOL})
            sigma = math.exp(float(res.x))
            obj, c = profile(sigma)
            # Strict improvement only, so ties stay with the smaller grid sigma.
            if better(obj, best_obj):
                best_obj, best_c, best_sigma = obj, c, sigma
    if snap is not None:
        t = snap(best_sigma, best_c)
        if t is not None and bounds[0] <= t <= bounds[1] and abs(math.log(t / best_sigma)) < SNAP_LOG_RADIUS:
            obj, c = profile(t)
            if better(obj, best_obj, slack=SNAP_SLACK):
                best_obj, best_c, best_sigma = obj, c, t
    return best_obj, best_c, best_sigma


def _solve_direct(scores, a, pi_hat, a_star, alpha, M, sigma_bounds, n_grid):
    """Grid + refinement over all points at once (no cached calibration side)."""

    def profile(sigma):
        k = tilt_kernel(a, a_star, pi_hat, sigma)
        keep = k > 0
        if not keep.any():
            raise DegenerateTiltError(f"all tilt values vanish at sigma={sigma}")
        with np.errstate(over="ignore"):
            b = scores[keep] / k[keep]
        c = weighted_breakpoint(b, k[keep], alpha, largest=True)
        c = min(max(c, 1.0 / M), M)
        return float(np.sum(pinball_loss(c * k, scores, alpha))), c

    grid = np.geomspace(sigma_bounds[0], sigma_bounds[1], n_grid)
    objs = [profile(s)[0] for s in grid]
    if len(scores) <= KINK_ENUM_MAX:
        grid, objs = _merge_candidates(grid, objs, kink_sigmas(scores, a, pi_hat, a_star, M, sigma_bounds),
                                       profile)
    obj, c, sigma = _minimize_over_sigma(profile, grid, objs, sigma_bounds)
    g = c * tilt_kernel(a, a_star, pi_hat, sigma)
    return TiltSolution(sigma, c, np.maximum(scores - g, 0.0), np.maximum(g - scores, 0.0), float(obj))


def v_last(scores, a, pi_hat, a_star: float, alpha: float, M: float, sigma_bounds,
           imputed_s: float) -> float:
    """``v_{n+1}`` at the optimum with the last score replaced by ``imputed_s``."""
    scores, a, pi_hat = _split_last(scores, a, pi_hat)
    scores = scores.copy()
    scores[-1] = imputed_s
    return float(solve_ps(scores, a, pi_hat, a_star, alpha, M, sigma_bounds).v[-1])


def search_s_star_unknown(scores, a, pi_hat, pi_hat_new: float, a_star: float, alpha: float,
                          M: float = DEFAULT_M, sigma_bounds=None, epsilon: float = 1e-3,
                          max_iter: int = 200) -> float:
    """Largest imputed score for which the new point's tilt stays strictly above it.

    ``scores``, ``a`` and ``pi_hat`` cover the calibration points only.
    """
    a = np.asarray(a, dtype=float)
    if sigma_bounds is None:
        sigma_bounds = default_sigma_bounds(a)
    prob = TiltProblem(scores, a, pi_hat, a_star, pi_hat_new, alpha, M, tuple(sigma_bounds))
    return prob.s_star(epsilon, max_iter)


def default_sigma_bounds(a) -> tuple[float, float]:
    a = np.asarray(a, dtype=float)
    span = float(a.max() - a.min()) if a.size else 0.0
    if not span > 0:
        span = 1.0
    return (1e-3 * span, span)


def interval_hard(predictor: Predictor, hat_pi, calib: CalibratedScores, x_new, a_star: float,
                  alpha: float, M: float = DEFAULT_M, sigma_bounds=None, epsilon: float = 1e-3,
                  unit_id: int | None = None) -> PredictionInterval:
    """Conformal interval for ``Y(a_star)`` at ``x_new`` under an estimated propensity."""
    x_new = np.asarray(x_new, dtype=float).reshape(1, -1)
    center = float(predictor.predict(x_new, np.array([a_star]))[0])
    pi_cal = _pdf(hat_pi, calib.a, calib.x)
    pi_new = float(_pdf(hat_pi, [a_star], x_new)[0])
    s_star = search_s_star_unknown(calib.scores, calib.a, pi_cal, pi_new, a_star, alpha, M,
                                   sigma_bounds, epsilon)
    return build_interval(center, s_star, alpha, unit_id)


# --- fixed-width variant ------------------------------------------------------

@dataclass(eq=False)
class FixedSigmaProblem:
    """One-dimensional tilt family ``c * k_i`` at a fixed ``sigma``.

    The membership predicate is the dual one: the new point is inside while its
    multiplier stays below ``1 - alpha``.
    """

    scores: np.ndarray
    k: np.ndarray
    k_new: float
    alpha: float
    M: float = DEFAULT_M

    def __post_init__(self):
        if not self.M >= 1:
            raise InvalidInputError(f"error bound M must be at least 1, got {self.M}")
        keep = np.asarray(self.k) > 0
        self.scores = np.asarray(self.scores, dtype=float)[keep]
        self.k = np.asarray(self.k, dtype=float)[keep]
        order = np.argsort(self.scores / self.k, kind="stable")
        self._b = (self.scores / self.k)[order]
        self._cum = np.cumsum(self.k[order])

    def c_star(self, s_new: float) -> tuple[float, bool]:
        c = _smallest_merged_quantile(self._b, self._cum, s_new / self.k_new, self.k_new, self.alpha)
        lo, hi = 1.0 / self.M, self.M
        if c < lo or c > hi:
            return min(max(c, lo), hi), True
        return c, False

    def eta_last(self, s_new: float) -> float:
        c, boundary = self.c_star(s_new)
        s = np.append(self.scores, s_new)
        w = np.append(self.k, self.k_new)
        return float(recover_eta(c, s, w, self.alpha, boundary=boundary)[-1])

    def inside(self, s_new: float) -> bool:
        return self.eta_last(s_new) < 1.0 - self.alpha - 1e-12

    def s_star(self, epsilon: float = 1e-3, max_iter: int = 200) -> float:
        s_up = max(float(self.scores.max()) if len(self.scores) else 0.0, 1.0)
        s_low = min(float(self.scores.min()) if len(self.scores) else 0.0, -1.0)
        return bracket_and_bisect(self.inside, s_up, s_low, epsilon, max_iter=max_iter)


def _smallest_merged_quantile(b, cum, b_t, wt, alpha):
    nc = len(b)
    total = (float(cum[-1]) if nc else 0.0) + wt
    target = (1.0 - alpha) * total - _CUM_RTOL * total
    p = int(np.searchsorted(b, b_t, side="left"))
    k1 = int(np.searchsorted(cum, target, side="left"))
    if k1 < p:
        return float(b[k1])
    below = float(cum[p - 1]) if p > 0 else 0.0
    if below + wt >= target or nc == 0:
        return float(b_t)
    k2 = max(int(np.searchsorted(cum, target - wt, side="left")), p)
    return float(b[min(k2, nc - 1)])


def interval_fixed_sigma(predictor: Predictor, hat_pi, calib: CalibratedScores, x_new, a_star: float,
                         alpha: float, M: float = DEFAULT_M, sigma0: float = 1.0, epsilon: float = 1e-3,
                         unit_id: int | None = None) -> PredictionInterval:
    if not sigma0 > 0:
        raise InvalidInputError("sigma0 must be positive")
    x_new = np.asarray(x_new, dtype=float).reshape(1, -1)
    center = float(predictor.predict(x_new, np.array([a_star]))[0])
    pi_cal = _pdf(hat_pi, calib.a, calib.x)
    pi_new = float(_pdf(hat_pi, [a_star], x_new)[0])
    prob = FixedSigmaProblem(calib.scores, tilt_kernel(calib.a, a_star, pi_cal, sigma0),
                             float(tilt_kernel(a_star, a_star, pi_new, sigma0)), alpha, M)
    return build_interval(center, prob.s_star(epsilon), alpha, unit_id)
