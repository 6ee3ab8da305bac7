"""Pinball-loss quantile regression over the one-parameter ray ``{theta * w}``.

The objective ``sum_i l_alpha(theta * w_i, S_i)`` is convex and piecewise linear
in ``theta`` with kinks at ``S_i / w_i``; its right derivative at ``theta`` is
``sum_{S_i/w_i <= theta} w_i - (1 - alpha) * W``. The minimizer is therefore a
weighted quantile of the breakpoints and is found exactly by a sort.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InconsistentSolutionError, InvalidInputError, InvalidWeightError

TIE_RTOL = 1e-9
_CUM_RTOL = 1e-12


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")


def pinball_loss(theta, s, alpha):
    """``(1 - alpha)(s - theta)`` if ``s >= theta`` else ``alpha (theta - s)``."""
    _check_alpha(alpha)
    theta = np.asarray(theta, dtype=float)
    s = np.asarray(s, dtype=float)
    diff = s - theta
    out = np.where(diff >= 0, (1.0 - alpha) * diff, -alpha * diff)
    return out if out.ndim else float(out)


def pinball_objective(theta: float, scores, weights, alpha: float) -> float:
    scores = np.asarray(scores, dtype=float)
    weights = np.asarray(weights, dtype=float)
    return float(np.sum(pinball_loss(theta * weights, scores, alpha)))


def weighted_breakpoint(breaks, weights, alpha: float, largest: bool = False) -> float:
    """Minimizer of ``sum_i w_i * l_alpha(theta, b_i)`` over theta in R.

    Returns the smallest minimizer by default and the largest one when
    ``largest`` is set (they differ only when the objective has a flat segment).
    """
    breaks = np.asarray(breaks, dtype=float)
    weights = np.asarray(weights, dtype=float)
    order = np.argsort(breaks, kind="stable")
    b = breaks[order]
    cum = np.cumsum(weights[order])
    total = cum[-1]
    target = (1.0 - alpha) * total
    tol = _CUM_RTOL * total
    if largest:
        k = int(np.searchsorted(cum, target + tol, side="right"))
    else:
        k = int(np.searchsorted(cum, target - tol, side="left"))
    return float(b[min(k, len(b) - 1)])


def scalar_quantile(scores, imputed_s: float, alpha: float) -> float:
    """Smallest minimizer of the augmented pinball objective (a (1-alpha) quantile)."""
    _check_alpha(alpha)
    scores = np.asarray(scores, dtype=float).ravel()
    if scores.size == 0:
        raise InvalidInputError("scores must be non-empty")
    aug = np.append(scores, float(imputed_s))
    if not np.all(np.isfinite(aug)):
        raise InvalidInputError("scores must be finite")
    return weighted_breakpoint(aug, np.ones_like(aug), alpha)


@dataclass(frozen=True)
class DualSolution:
    theta_star: float
    eta: np.ndarray
    objective: float
    boundary: bool = False


def _validate(scores, weights):
    scores = np.asarray(scores, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    if scores.shape != weights.shape or scores.size == 0:
        raise InvalidInputError("scores and weights must be non-empty and equally long")
    if not np.all(np.isfinite(scores)):
        raise InvalidInputError("scores must be finite")
    if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
        bad = int(np.flatnonzero(~(np.isfinite(weights) & (weights > 0)))[0])
        raise InvalidWeightError(f"weight {bad} is not a finite positive number: {weights[bad]}")
    return scores, weights


def weighted_theta(scores, weights, alpha: float, bounds=(0.0, math.inf)) -> DualSolution:
    """Smallest minimizer of ``sum_i l_alpha(theta * w_i, S_i)`` over ``theta`` in ``bounds``.

    With the default bounds the minimizer is clamped to 0 and flagged as a
    boundary solution when no positive theta improves on ``theta -> 0+``.
    """
    _check_alpha(alpha)
    scores, weights = _validate(scores, weights)
    lo, hi = bounds
    b = weighted_breakpoint(scores / weights, weights, alpha)
    if lo == 0.0 and b <= 0.0:
        theta, boundary = 0.0, True
    elif b < lo or b > hi:
        theta, boundary = float(min(max(b, lo), hi)), True
    else:
        theta, boundary = b, False
    eta = recover_eta(theta, scores, weights, alpha, boundary=boundary)
    return DualSolution(theta, eta, pinball_objective(theta, scores, weights, alpha), boundary)


def recover_eta(theta_star: float, scores, weights, alpha: float, boundary: bool = False) -> np.ndarray:
    """Dual multipliers from complementary slackness plus stationarity.

    Non-tied points get ``-alpha`` (below the fit) or ``1 - alpha`` (above).
    Tied points share one common value chosen so that ``sum eta_i w_i = 0``.
    At a boundary solution stationarity does not bind and that value is
    clamped to the box instead of being checked.
    """
    _check_alpha(alpha)
    scores, weights = _validate(scores, weights)
    resid = scores - theta_star * weights
    tol = TIE_RTOL * float(np.max(np.abs(scores)))
    below = resid < -tol
    above = resid > tol
    tied = ~(below | above)
    eta = np.where(above, 1.0 - alpha, -alpha)
    r = alpha * weights[below].sum() - (1.0 - alpha) * weights[above].sum()
    t = weights[tied].sum()
    if t > 0:
        c = r / t
        if not boundary and not (-alpha - 1e-9 <= c <= 1.0 - alpha + 1e-9):
            raise InconsistentSolutionError(
                f"tied multiplier {c:.6g} outside [{-alpha}, {1 - alpha}]; theta={theta_star} is not optimal")
        eta[tied] = min(max(c, -alpha), 1.0 - alpha)
    elif not boundary and abs(r) > 1e-8 * max(1.0, weights.sum()):
        raise InconsistentSolutionError(f"stationarity residual {r:.3g} with no tied points")
    return eta
