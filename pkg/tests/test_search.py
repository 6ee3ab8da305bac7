import pytest
from hypothesis import given, strategies as st

from contcp.errors import ConvergenceError
from contcp.search import bracket_and_bisect


@given(st.floats(0.0, 1e4), st.floats(1e-8, 1e-2))
def test_finds_threshold_within_epsilon(threshold, eps):
    s = bracket_and_bisect(lambda v: v < threshold, 1.0, -1.0, eps)
    assert abs(s - threshold) <= eps


def test_negative_threshold_is_clamped_to_zero():
    assert bracket_and_bisect(lambda v: v < -3.0, 1.0, -1.0, 1e-6) == 0.0


def test_lower_bracket_moves_through_zero():
    # s_low starts outside the set; halving then doubling past zero must still terminate.
    s = bracket_and_bisect(lambda v: v < -5.0, 1.0, -1.0, 1e-3)
    assert s == 0.0


def test_always_inside_raises():
    with pytest.raises(ConvergenceError):
        bracket_and_bisect(lambda v: True, 1.0, -1.0, 1e-3, max_expand=20)


def test_rejects_non_positive_epsilon():
    with pytest.raises(ValueError):
        bracket_and_bisect(lambda v: v < 1.0, 1.0, -1.0, 0.0)
