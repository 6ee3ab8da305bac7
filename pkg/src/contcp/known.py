"""Intervals under a known baseline policy and a soft shift ``A* = A + delta_a``.

The calibration-conditional quantile lives on the ray ``theta * w(a, x)`` where
``w`` is the likelihood ratio between the shifted and the observed policy.
The test score ``S`` belongs to the prediction set while the dual multiplier of
the test point stays below ``1 - alpha``; the boundary ``S*`` is located by
bracketing and bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import CalibratedScores, PredictionInterval, Predictor, build_interval
from .errors import InconsistentSolutionError, InvalidInputError, PositivityError
from .quantile import TIE_RTOL, _CUM_RTOL, weighted_theta
from .search import bracket_and_bisect

CONVENTIONS = ("shifted-policy", "baseline")
_INSIDE_MARGIN = 1e-12


def _pdf(propensity, a, x):
    fn = getattr(propensity, "pdf", propensity)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return np.asarray(fn(np.asarray(a, dtype=float), x), dtype=float)


def shift_weights(propensity, x, a, delta_a: float, x_new, a_new: float,
                  convention: str = "shifted-policy") -> np.ndarray:
    """Likelihood-ratio weights for the calibration points followed by the new point.

    ``convention="shifted-policy"`` evaluates ``pi(a - delta | x) / pi(a | x)``
    at each calibration dose and at the shifted test dose ``a_new + delta``,
    i.e. the density of ``A + delta`` over that of ``A`` where the scores live.
    ``convention="baseline"`` evaluates ``pi(a + delta | x) / pi(a | x)`` at
    the observed doses, calibration and test alike.

    Calibration weights may be 0 (the shifted policy puts no mass there);
    a zero denominator, a non-finite density, or a non-positive test weight
    raises :class:`PositivityError` carrying the offending index (``n`` is
    the new point).
    """
    if convention not in CONVENTIONS:
        raise InvalidInputError(f"unknown weight convention {convention!r}")
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    a = np.asarray(a, dtype=float).ravel()
    x_new = np.asarray(x_new, dtype=float).reshape(1, -1)
    n = len(a)
    if convention == "shifted-policy":
        num = np.append(_pdf(propensity, a - delta_a, x), _pdf(propensity, [a_new], x_new))
        den = np.append(_pdf(propensity, a, x), _pdf(propensity, [a_new + delta_a], x_new))
    else:
        num = np.append(_pdf(propensity, a + delta_a, x), _pdf(propensity, [a_new + delta_a], x_new))
        den = np.append(_pdf(propensity, a, x), _pdf(propensity, [a_new], x_new))
    bad = ~np.isfinite(num) | ~np.isfinite(den) | (num < 0) | (den <= 0)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise PositivityError(f"propensity positivity violated at index {i} "
                              f"(numerator {num[i]}, denominator {den[i]})", index=i)
    w = num / den
    if w[n] <= 0:
        raise PositivityError("new point has zero weight under the shifted policy", index=n)
    return w


@dataclass(frozen=True)
class _CalibrationIndex:
    b: np.ndarray      # sorted breakpoints S_i / w_i
    w: np.ndarray
    s: np.ndarray
    cum: np.ndarray
    w_min: float
    s_max: float

    @classmethod
    def build(cls, scores, weights):
        keep = weights > 0
        s, w = scores[keep], weights[keep]
        b = s / w
        order = np.argsort(b, kind="stable")
        b, w, s = b[order], w[order], s[order]
        return cls(b, w, s, np.cumsum(w), float(w.min()) if len(w) else 1.0,
                   float(np.abs(s).max()) if len(s) else 0.0)


@dataclass(frozen=True, eq=False)
class KnownShiftProblem:
    """Calibration scores ``S_1..S_n``, weights ``w_1..w_{n+1}`` and level alpha.

    Calibration points with zero weight carry no mass under the shifted
    distribution and are ignored by the solver.
    """

    scores: np.ndarray
    weights: np.ndarray
    alpha: float
    _index: _CalibrationIndex = field(default=None, repr=False)

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        if len(weights) != len(scores) + 1:
            raise InvalidInputError("need one weight per calibration score plus one for the new point")
        if not 0 < self.alpha < 1:
            raise InvalidInputError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not np.all(np.isfinite(scores)):
            raise InvalidInputError("scores must be finite")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0) or weights[-1] <= 0:
            raise PositivityError("weights must be finite, non-negative, and positive for the new point")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "weights", weights)
        if self._index is None:
            object.__setattr__(self, "_index", _CalibrationIndex.build(scores, weights[:-1]))

    @property
    def test_weight(self) -> float:
        return float(self.weights[-1])

    def with_test_weight(self, w_new: float) -> "KnownShiftProblem":
        """Same calibration side, different new point (reuses the sorted index)."""
        weights = self.weights.copy()
        weights[-1] = w_new
        return KnownShiftProblem(self.scores, weights, self.alpha, self._index)

    @property
    def unbounded(self) -> bool:
        """True when the new point alone holds more than alpha of the mass,
        so every imputed score stays inside the set."""
        ix = self._index
        wc = float(ix.cum[-1]) if len(ix.cum) else 0.0
        total = wc + self.test_weight
        return wc < (1.0 - self.alpha) * total - _CUM_RTOL * total

    def theta_star(self, imputed_s: float) -> tuple[float, bool]:
        ix, alpha, wt = self._index, self.alpha, self.test_weight
        nc = len(ix.b)
        total = (float(ix.cum[-1]) if nc else 0.0) + wt
        target = (1.0 - alpha) * total
        tol = _CUM_RTOL * total
        b_t = imputed_s / wt
        k1 = int(np.searchsorted(ix.cum, target - tol, side="left"))
        if k1 < nc and ix.b[k1] < b_t:
            theta = float(ix.b[k1])
        else:
            j = int(np.searchsorted(ix.b, b_t, side="right"))
            below = float(ix.cum[j - 1]) if j > 0 else 0.0
            if below + wt >= target - tol:
                theta = b_t
            else:
                k2 = max(int(np.searchsorted(ix.cum, target - wt - tol, side="left")), j)
                theta = float(ix.b[min(k2, nc - 1)])
        if theta <= 0.0:
            return 0.0, True
        return theta, False

    def eta_last(self, imputed_s: float) -> float:
        """Dual multiplier of the new point for the imputed score (fast path)."""
        alpha, wt, ix = self.alpha, self.test_weight, self._index
        theta, boundary = self.theta_star(imputed_s)
        tol = TIE_RTOL * max(ix.s_max, abs(imputed_s))
        resid = imputed_s - theta * wt
        if resid < -tol:
            return -alpha
        if resid > tol:
            return 1.0 - alpha
        # New point is tied: share the stationarity residual with tied calibration points.
        nc = len(ix.b)
        span = tol / ix.w_min
        lo = int(np.searchsorted(ix.b, theta - span, side="left"))
        hi = int(np.searchsorted(ix.b, theta + span, side="right"))
        r_cal = ix.s[lo:hi] - theta * ix.w[lo:hi]
        w_mid = ix.w[lo:hi]
        total_c = float(ix.cum[-1]) if nc else 0.0
        w_low = (float(ix.cum[lo - 1]) if lo > 0 else 0.0) + float(w_mid[r_cal < -tol].sum())
        w_up = total_c - (float(ix.cum[hi - 1]) if hi > 0 else 0.0) + float(w_mid[r_cal > tol].sum())
        t = wt + float(w_mid[np.abs(r_cal) <= tol].sum())
        c = (alpha * w_low - (1.0 - alpha) * w_up) / t
        if not boundary and not (-alpha - 1e-9 <= c <= 1.0 - alpha + 1e-9):
            raise InconsistentSolutionError(f"tied multiplier {c:.6g} outside the box")
        return min(max(c, -alpha), 1.0 - alpha)

    def inside(self, imputed_s: float) -> bool:
        return self.eta_last(imputed_s) < 1.0 - self.alpha - _INSIDE_MARGIN


def eta_last(problem: KnownShiftProblem, imputed_s: float) -> float:
    return problem.eta_last(imputed_s)


def eta_last_reference(problem: KnownShiftProblem, imputed_s: float) -> float:
    """Same quantity via a full solve of the augmented problem (no precomputation)."""
    keep = np.append(problem.weights[:-1] > 0, True)
    scores = np.append(problem.scores, imputed_s)[keep]
    weights = problem.weights[keep]
    sol = weighted_theta(scores, weights, problem.alpha)
    return float(sol.eta[-1])


def search_s_star_known(problem: KnownShiftProblem, epsilon: float = 1e-3, max_iter: int = 200) -> float:
    """Largest imputed score whose test multiplier stays below ``1 - alpha``.

    Returns ``inf`` when the new point's weight exceeds ``alpha`` of the total
    mass: every imputed score is then inside the set.
    """
    if not epsilon > 0:
        raise InvalidInputError("epsilon must be positive")
    if problem.unbounded:
        return math.inf
    s = problem.scores
    s_up = max(float(s.max()), 1.0)
    s_low = min(float(s.min()), -1.0)
    return bracket_and_bisect(problem.inside, s_up, s_low, epsilon, max_iter=max_iter)


def interval_soft(predictor: Predictor, propensity, calib: CalibratedScores, x_new, a_new: float,
                  delta_a: float, alpha: float, epsilon: float = 1e-3,
                  convention: str = "shifted-policy", on_unsupported: str = "raise",
                  unit_id: int | None = None) -> PredictionInterval:
    """Conformal interval for ``Y(a_new + delta_a)`` at covariates ``x_new``.

    ``on_unsupported="unbounded"`` returns the whole real line instead of
    raising when the shifted test dose has zero baseline density.
    """
    x_new = np.asarray(x_new, dtype=float).reshape(1, -1)
    center = float(predictor.predict(x_new, np.array([a_new + delta_a]))[0])
    try:
        w = shift_weights(propensity, calib.x, calib.a, delta_a, x_new, a_new, convention)
    except PositivityError as exc:
        if on_unsupported == "unbounded" and exc.index == len(calib):
            return build_interval(center, math.inf, alpha, unit_id)
        raise
    problem = KnownShiftProblem(calib.scores, w, alpha)
    return build_interval(center, search_s_star_known(problem, epsilon), alpha, unit_id)


def intervals_soft(predictor: Predictor, propensity, calib: CalibratedScores, x_new, a_new,
                   delta_a: float, alpha: float, epsilon: float = 1e-3,
                   convention: str = "shifted-policy", on_unsupported: str = "raise") -> list[PredictionInterval]:
    """Batch version of :func:`interval_soft`; the calibration side is solved once."""
    x_new = np.asarray(x_new, dtype=float)
    if x_new.ndim == 1:
        x_new = x_new[:, None]
    a_new = np.asarray(a_new, dtype=float).ravel()
    centers = np.asarray(predictor.predict(x_new, a_new + delta_a), dtype=float)
    base = None
    out = []
    for i in range(len(a_new)):
        try:
            w = shift_weights(propensity, calib.x, calib.a, delta_a, x_new[i], a_new[i], convention) \
                if base is None else _test_weight(propensity, delta_a, x_new[i], a_new[i], convention, len(calib))
        except PositivityError as exc:
            if on_unsupported == "unbounded" and exc.index == len(calib):
                out.append(build_interval(centers[i], math.inf, alpha, i))
                continue
            raise
        if base is None:
            base = KnownShiftProblem(calib.scores, w, alpha)
            problem = base
        else:
            problem = base.with_test_weight(w)
        out.append(build_interval(centers[i], search_s_star_known(problem, epsilon), alpha, i))
    return out


def _test_weight(propensity, delta_a, x_new, a_new, convention, n):
    x_new = np.asarray(x_new, dtype=float).reshape(1, -1)
    if convention == "shifted-policy":
        num, den = _pdf(propensity, [a_new], x_new)[0], _pdf(propensity, [a_new + delta_a], x_new)[0]
    else:
        num, den = _pdf(propensity, [a_new + delta_a], x_new)[0], _pdf(propensity, [a_new], x_new)[0]
    if not (math.isfinite(num) and math.isfinite(den)) or den <= 0 or num <= 0:
        raise PositivityError("propensity positivity violated at the new point", index=n)
    return num / den
