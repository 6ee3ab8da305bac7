"""Bracketing plus bisection for the boundary score ``S*``.

``inside(S)`` is the membership predicate of the prediction set (``eta_{n+1}^S <
1 - alpha`` or ``v_{n+1}^S > 0``); it is monotone, true for small ``S`` and
false for large ``S``.
"""

from __future__ import annotations

from typing import Callable

from .errors import ConvergenceError


def bracket_and_bisect(inside: Callable[[float], bool], s_up: float, s_low: float,
                       epsilon: float, max_iter: int = 200, max_expand: int = 200) -> float:
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    n = 0
    while inside(s_up):
        s_up *= 2.0
        n += 1
        if n > max_expand:
            raise ConvergenceError(f"upper bracket still inside the set after {max_expand} doublings")

    n = 0
    grow = False
    while not inside(s_low):
        # Halving only moves a negative bound toward 0; once below epsilon in
        # magnitude, grow it downward for good so the loop can end.
        grow = grow or abs(s_low) < epsilon
        s_low = 2.0 * s_low if grow else 0.5 * s_low
        n += 1
        if n > max_expand:
            raise ConvergenceError(f"lower bracket still outside the set after {max_expand} updates")

    s_mid = 0.5 * (s_up + s_low)
    n = 0
    while s_up - s_low > epsilon:
        n += 1
        if n > max_iter:
            raise ConvergenceError(f"bisection did not reach width {epsilon} in {max_iter} steps")
        if inside(s_mid):
            s_low = s_mid
        else:
            s_up = s_mid
        s_mid = 0.5 * (s_up + s_low)
    return max(s_mid, 0.0)
