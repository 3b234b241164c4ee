# file: tests/test_schedules.py
import numpy as np
import pytest

from app.core.errors import ScheduleError
from app.services.schedule_service import make_decreasing, make_fixed, make_fixed_fraction


def test_decreasing_values():
    s = make_decreasing(0.5, 1288.0)
    assert s.at(0) == pytest.approx(1.0 / 1288.0)
    assert s.at(3) == pytest.approx(1.0 / (1288.0 * 2.0))
    np.testing.assert_allclose(s.sequence(3), [s.at(k) for k in range(4)])
    assert s.regime == "decreasing"


def test_numerator_scales_steps():
    s = make_decreasing(1.0, 10.0, numerator=0.35)
    assert s.at(9) == pytest.approx(0.35 / 100.0)


@pytest.mark.parametrize("epsilon", [0.3, 0.5, 1.0])
@pytest.mark.parametrize("K", [0, 10, 1000])
def test_partial_sums_are_bracketed(epsilon, K):
    s = make_decreasing(epsilon, 2.0, numerator=1.5)
    lower, upper = s.sum_bounds(K)
    total = s.partial_sum(K)
    assert lower <= total * (1 + 1e-12)
    assert total <= upper * (1 + 1e-12)


@pytest.mark.parametrize("epsilon", [0.25, 0.5, 1.0])
def test_inverse_differences(epsilon):
    s = make_decreasing(epsilon, 7.0, numerator=0.5)
    inv = 1.0 / s.sequence(500)
    for k in range(500):
        assert inv[k + 1] - inv[k] <= s.inverse_difference_bound(k) * (1 + 1e-12)


@pytest.mark.parametrize("epsilon", [0.0, -0.5, 1.5])
def test_epsilon_out_of_range(epsilon):
    with pytest.raises(ScheduleError):
        make_decreasing(epsilon, 1.0)


def test_fixed_regimes():
    assert make_fixed(3e-4, 0.5 / 1288.0).regime == "safe"
    assert make_fixed(5e-4, 0.5 / 1288.0).regime == "unsafe"
    assert make_fixed(1e-3).regime == "unsafe"
    s = make_fixed(3e-4)
    np.testing.assert_array_equal(s.sequence(4), np.full(5, 3e-4))
    assert s.partial_sum(4) == pytest.approx(1.5e-3)
    assert s.sum_bounds(4) == (pytest.approx(1.5e-3), pytest.approx(1.5e-3))


def test_fraction_of_safe_bound():
    s = make_fixed_fraction(0.5, 0.02)
    assert s.alpha == pytest.approx(0.01)
    assert s.regime == "safe"
    with pytest.raises(ScheduleError):
        make_fixed_fraction(0.0, 0.02)
    with pytest.raises(ScheduleError):
        make_fixed(-1.0)
