"""
收敛验证单元测试

测试 convergence.py：提升链、子矩形证书、电池边缘分布的传播与 Cesàro 平均泄漏
"""

import numpy as np
import pytest

from src.convergence import (
    battery_marginal_step,
    default_word,
    empirical_convergence,
    extreme_initial_distributions,
    is_subrectangular,
    lifted_chain,
    observation_matrices,
    subrectangular_certificate,
)
from src.errors import ModelValidationError
from src.iidopt import solve_iid
from src.model import Alphabet, Pmf, SystemSpec
from src.policy import equiprobable_policy


def test_binary_lifted_chain(binary):
    """测试二元模型 b* 的提升链转移矩阵"""
    b_star = solve_iid(binary).b_star
    chain = lifted_chain(binary, b_star)
    expected_s0 = [0.25, 0.5, 0.0, 0.25]
    expected_s1 = [0.25, 0.0, 0.5, 0.25]
    np.testing.assert_allclose(chain.rows, [expected_s0, expected_s0, expected_s1, expected_s1], atol=1e-6)

    matrices = observation_matrices(binary, chain)
    assert matrices.shape == (2, 4, 4)
    np.testing.assert_allclose(matrices.sum(axis=0), chain.rows)


def test_binary_subrectangular(binary):
    b_star = solve_iid(binary).b_star
    assert default_word(binary) == [1, 0]
    word, product, report = subrectangular_certificate(binary, b_star)
    assert word == [1, 0]
    assert report.ok and not report.inconclusive
    assert report.size == 4
    assert report.prefix_flags == [False, True]
    np.testing.assert_array_equal(product > 1e-12, [[1, 0, 1, 0]] * 4)
    print("✓ Charge/discharge word yields a subrectangular product")


@pytest.mark.parametrize(
    "matrix,expected",
    [
        ([[1.0, 2.0], [3.0, 4.0]], True),
        ([[1.0, 0.0], [0.0, 1.0]], False),
        ([[1.0, 1.0], [0.0, 0.0]], True),
        ([[0.0, 0.0], [0.0, 0.0]], False),
        ([[0.5, 0.0, 0.2], [0.1, 0.0, 0.3]], True),
    ],
)
def test_is_subrectangular(matrix, expected):
    assert is_subrectangular(np.array(matrix)) is expected


def test_empty_word_is_inconclusive(binary):
    _, product, report = subrectangular_certificate(binary, solve_iid(binary).b_star, word=[])
    np.testing.assert_array_equal(product, np.eye(4))
    assert not report.ok
    assert report.inconclusive


def test_invalid_word_symbol(binary):
    with pytest.raises(ModelValidationError):
        subrectangular_certificate(binary, solve_iid(binary).b_star, word=[2])


def test_invariant_distribution(binomial_six_five):
    """测试 θ* 是 b* 下电池边缘分布的不动点"""
    solution = solve_iid(binomial_six_five)
    theta = solution.theta_star.probs
    np.testing.assert_allclose(
        battery_marginal_step(binomial_six_five, solution.b_star, theta), theta, atol=1e-12
    )


def test_binary_convergence(binary):
    """测试二元模型从点分布出发以 ½^t 的速度收敛"""
    b_star = solve_iid(binary).b_star
    inits = [Pmf.point(Alphabet(0, 1), 0), Pmf.point(Alphabet(0, 1), 1)]
    report = empirical_convergence(binary, b_star, inits, horizon=100, samples=500, seed=0)
    assert report.passed
    for run in report.runs:
        np.testing.assert_allclose(run.tv_history[:5], [0.25, 0.125, 0.0625, 0.03125, 0.015625], atol=1e-6)
        assert len(run.tv_history) == 100
        assert run.steps_to_tolerance == 9
        assert run.target_leakage == pytest.approx(0.5, abs=1e-6)
        assert abs(run.cesaro_leakage - 0.5) <= 0.01 + run.cesaro_ci
    np.testing.assert_allclose(report.theta_target, [0.5, 0.5], atol=1e-6)


def test_convergence_reports_failure(binary):
    b_star = solve_iid(binary).b_star
    report = empirical_convergence(
        binary, b_star, [Pmf.point(Alphabet(0, 1), 0)], horizon=3, samples=50
    )
    assert not report.passed
    assert not report.runs[0].reached_tolerance
    assert report.runs[0].tv_history == pytest.approx([0.25, 0.125, 0.0625], abs=1e-6)
    assert report.runs[0].tv_distance == pytest.approx(0.0625, abs=1e-6)


def test_convergence_needs_target(binary):
    with pytest.raises(ModelValidationError):
        empirical_convergence(binary, equiprobable_policy(binary), [Pmf.uniform(Alphabet(0, 1))])


@pytest.mark.slow
def test_binomial_convergence(binomial_six_five):
    """测试从 5 个初始分布（含两端点分布）出发在 T = 300 内收敛，Cesàro 泄漏接近 J*"""
    solution = solve_iid(binomial_six_five)
    inits = extreme_initial_distributions(binomial_six_five, count=5)
    report = empirical_convergence(
        binomial_six_five, solution.b_star, inits, horizon=300, samples=500, seed=4
    )
    assert report.passed
    assert all(run.tv_distance < 1e-3 for run in report.runs)
    for run in report.runs:
        assert abs(run.cesaro_leakage - 0.4616) <= 0.01 + run.cesaro_ci


def test_extreme_initial_distributions(binomial_six_five):
    inits = extreme_initial_distributions(binomial_six_five, count=5, seed=2)
    assert len(inits) == 5
    np.testing.assert_allclose(inits[0].probs, [1, 0, 0, 0, 0, 0])
    np.testing.assert_allclose(inits[1].probs, [0, 0, 0, 0, 0, 1])
    np.testing.assert_allclose(inits[2].probs, np.full(6, 1 / 6))
    assert all(pmf.support == binomial_six_five.battery_alphabet for pmf in inits)


def test_lifted_chain_requires_iid():
    spec = SystemSpec.markov([[0.7, 0.3], [0.4, 0.6]], [0.5, 0.5], ms=1)
    with pytest.raises(ModelValidationError):
        lifted_chain(spec, equiprobable_policy(spec))


if __name__ == "__main__":
    pytest.main([__file__, "-v", "-s"])
