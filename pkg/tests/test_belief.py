"""
置信递推单元测试

测试 belief.py 中的联合滤波、差值滤波与批量滤波核的一致性
"""

import numpy as np
import pytest

from src.belief import (
    Belief,
    difference_kernel,
    filter_joint,
    joint_kernel,
    joint_to_difference_matrix,
    theta_to_xi,
    xi_update,
)
from src.errors import ConditioningError, ModelValidationError
from src.model import Alphabet, Pmf, SystemSpec, binomial_spec
from src.policy import equiprobable_policy, passthrough_policy


def test_theta_to_xi_binary(binary):
    xi = theta_to_xi(Pmf.uniform(Alphabet(0, 1)), binary.demand_pmf)
    assert xi.support == Alphabet(-1, 1)
    np.testing.assert_allclose(xi.probs, [0.25, 0.5, 0.25])


def test_belief_validation():
    with pytest.raises(ModelValidationError):
        Belief(np.array([0.5, 0.5]))
    with pytest.raises(ModelValidationError):
        Belief(np.array([[0.5, 0.6], [0.0, 0.0]]))


def test_belief_to_xi_matches_projection(binomial_six_five):
    pi = Belief.initial(binomial_six_five)
    xi = pi.to_xi(binomial_six_five)
    np.testing.assert_allclose(xi.probs, pi.flat @ joint_to_difference_matrix(binomial_six_five))
    expected = theta_to_xi(binomial_six_five.initial_battery, binomial_six_five.demand_pmf)
    np.testing.assert_allclose(xi.probs, expected.probs, atol=1e-15)


def test_xi_update_agrees_with_joint_filter():
    """测试 i.i.d. 需求下差值滤波与联合滤波投影一致"""
    spec = binomial_spec(4, 3)
    policy = equiprobable_policy(spec)
    pi = Belief.initial(spec)
    xi = pi.to_xi(spec)
    for y in range(5):
        joint = filter_joint(pi, y, policy.lifted, spec.demand_matrix)
        difference = xi_update(xi, y, policy.b, spec.demand_pmf)
        np.testing.assert_allclose(joint.to_xi(spec).probs, difference.probs, atol=1e-12)
        # 下一时刻需求与电池独立
        np.testing.assert_allclose(joint.demand_marginal(spec).probs, spec.demand_pmf.probs)
    print("✓ Difference filter agrees with joint filter")


def test_zero_probability_observation(binary):
    """测试对零概率观测条件化时抛出 ConditioningError"""
    xi = Pmf.point(Alphabet(-1, 1), 1)
    b = equiprobable_policy(binary).b
    with pytest.raises(ConditioningError) as excinfo:
        xi_update(xi, 1, b, binary.demand_pmf)
    assert excinfo.value.y == 1

    pi = Belief(np.array([[0.0, 0.0], [1.0, 0.0]]))
    with pytest.raises(ConditioningError):
        filter_joint(pi, 0, passthrough_policy(binary).a, binary.demand_matrix)


def test_markov_passthrough_filter():
    """测试 Markov 需求下直通策略的滤波结果"""
    Q = [[0.9, 0.1], [0.2, 0.8]]
    spec = SystemSpec.markov(Q, [0.5, 0.5], ms=1)
    pi = Belief.initial(spec)
    updated = filter_joint(pi, 1, passthrough_policy(spec).a, spec.demand_matrix)
    np.testing.assert_allclose(updated.joint, np.outer(Q[1], [0.5, 0.5]), atol=1e-15)


def test_difference_kernel_update_all():
    """测试批量滤波核与逐个 xi_update 一致"""
    spec = binomial_spec(4, 3)
    b = equiprobable_policy(spec).b
    kernel = difference_kernel(spec)
    rng = np.random.default_rng(0)
    xis = rng.dirichlet(np.ones(spec.w_alphabet.size), size=3)
    actions = np.broadcast_to(b.table, (3,) + b.table.shape)
    probabilities, updated = kernel.update_all(xis, actions)
    np.testing.assert_allclose(probabilities.sum(axis=1), 1.0)
    for n in range(3):
        xi = Pmf(spec.w_alphabet, xis[n])
        for y in range(spec.consumption_alphabet.size):
            if probabilities[n, y] <= 1e-14:
                continue
            expected = xi_update(xi, y, b, spec.demand_pmf)
            np.testing.assert_allclose(updated[n, y], expected.probs, atol=1e-12)


def test_joint_kernel_update_observed():
    Q = np.array([[0.7, 0.3], [0.4, 0.6]])
    spec = SystemSpec.markov(Q, [0.5, 0.5], ms=2)
    a = equiprobable_policy(spec).lifted
    kernel = joint_kernel(spec)
    pi = Belief.initial(spec)
    for y in range(2):
        expected = filter_joint(pi, y, a, spec.demand_matrix)
        np.testing.assert_allclose(kernel.update(pi.flat, a.flat, y), expected.flat, atol=1e-12)


def test_kernel_predictive_is_output_distribution(binary):
    b = equiprobable_policy(binary).b
    kernel = difference_kernel(binary)
    xi = np.array([0.25, 0.5, 0.25])
    np.testing.assert_allclose(kernel.predictive(xi, b.table), [0.5, 0.5])


if __name__ == "__main__":
    pytest.main([__file__, "-v", "-s"])
