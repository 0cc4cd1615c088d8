"""
连续字母表界的单元测试

测试 bounds.py：闭式上下界、数值积分与 Monte Carlo 复核
"""

import math

import numpy as np
import pytest
from scipy import integrate

from src.bounds import (
    bound_report,
    bound_table,
    capacity_range,
    difference_density,
    epi_lower_bound,
    monte_carlo_continuous_check,
    monte_carlo_rate,
    quadrature_rate,
    uniform_achievable_rate,
)
from src.errors import DomainError


def test_lower_bound_values():
    """测试 ½ log2(1 + 1/B²)"""
    assert epi_lower_bound(2.0) == pytest.approx(0.160964, abs=1e-6)
    assert epi_lower_bound(10.0) == pytest.approx(0.5 * math.log2(1.01), abs=1e-15)
    assert epi_lower_bound(10.0) == pytest.approx(0.0071756, abs=5e-6)


@pytest.mark.parametrize("B,expected", [(2.0, 0.36067), (4.0, 0.18034), (10.0, 0.0721348)])
def test_achievable_rate_values(B, expected):
    assert uniform_achievable_rate(B) == pytest.approx(expected, abs=1e-5)


def test_bounds_are_ordered():
    for row in bound_table(capacity_range(2.0, 50.0, 0.5)):
        assert row.lower < row.achievable
        assert row.gap == pytest.approx(row.achievable - row.lower)


def test_capacity_below_two_rejected():
    """测试 B < 2 超出定义域"""
    with pytest.raises(DomainError):
        epi_lower_bound(1.5)
    with pytest.raises(DomainError):
        uniform_achievable_rate(1.0)
    with pytest.raises(DomainError):
        bound_report(float("nan"))


def test_difference_density_integrates_to_one():
    for B in (2.0, 3.5, 10.0):
        total = sum(
            integrate.quad(lambda w: float(difference_density(w, B)), lo, hi)[0]
            for lo, hi in [(-1.0, 0.0), (0.0, B - 1.0), (B - 1.0, B)]
        )
        assert total == pytest.approx(1.0, abs=1e-10)
    np.testing.assert_allclose(
        difference_density(np.array([-2.0, -0.5, 1.0, 2.5, 4.0]), 3.0),
        [0.0, 0.5 / 3, 1 / 3, 0.5 / 3, 0.0],
    )


@pytest.mark.parametrize("B", [2.0, 3.0, 7.5, 20.0])
def test_quadrature_matches_closed_form(B):
    """测试自适应积分与 1/(2B ln 2) 一致"""
    value, error = quadrature_rate(B)
    assert value == pytest.approx(uniform_achievable_rate(B), abs=1e-9)
    assert error < 1e-6


def test_single_node_quadrature_is_insufficient():
    check = monte_carlo_continuous_check(4.0, samples=0, nodes=1)
    assert not check.sufficient
    assert check.mc_estimate is None

    check = monte_carlo_continuous_check(4.0, samples=0, nodes=40)
    assert check.nodes == 40


def test_monte_carlo_check():
    """测试 Monte Carlo 估计落在闭式解附近"""
    check = monte_carlo_continuous_check(3.0, samples=200_000, seed=5)
    assert check.sufficient
    assert abs(check.mc_estimate - check.closed_form) <= 5 * check.mc_stderr + 1e-4
    assert check.samples == 200_000


def test_monte_carlo_rate_is_seeded():
    first = monte_carlo_rate(2.0, 1000, seed=3)
    second = monte_carlo_rate(2.0, 1000, seed=3)
    assert first == second


def test_capacity_range():
    values = capacity_range(2.0, 50.0, 0.5)
    assert len(values) == 97
    assert values[0] == 2.0 and values[-1] == 50.0
    assert capacity_range(2.0, 3.0, 0.3) == [2.0, 2.3, 2.6, 2.9]
    with pytest.raises(DomainError):
        capacity_range(2.0, 3.0, 0.0)


if __name__ == "__main__":
    pytest.main([__file__, "-v", "-s"])
