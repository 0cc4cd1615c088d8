"""
仿真单元测试

测试 simulation.py：守恒方程、可复现性、不可行策略的报错与输出边缘分布
"""

import csv

import numpy as np
import pytest
from scipy import stats

from src.errors import SimulationError
from src.iidopt import solve_iid
from src.model import Alphabet, Pmf, SystemSpec, binomial_spec
from src.policy import Policy, equiprobable_policy, passthrough_policy, structured_policy
from src.simulation import simulate


class GreedyDischargePolicy(Policy):
    """总是消耗 0（电池为空时不可行）"""

    kind = "greedy_discharge"

    def tables(self, t, histories, beliefs, space="joint"):
        raise NotImplementedError

    def output_distribution(self, t, xs, ss, ys, belief=None) -> np.ndarray:
        return np.array([1.0, 0.0])


def test_simulation_conserves_battery(binomial_six_five):
    """测试每一步都满足 s_{t+1} = s_t + y_t − x_t"""
    trace = simulate(binomial_six_five, equiprobable_policy(binomial_six_five), 500, seed=3)
    assert trace.horizon == 500
    np.testing.assert_array_equal(trace.s[1:], trace.s[:-1] + trace.y[:-1] - trace.x[:-1])
    assert trace.s.min() >= 0 and trace.s.max() <= 5
    assert trace.y.max() <= 6
    print(f"✓ Conservation held over {trace.horizon} steps")


def test_simulation_is_deterministic(binary):
    policy = equiprobable_policy(binary)
    first = simulate(binary, policy, 200, seed=11)
    second = simulate(binary, policy, 200, seed=11)
    third = simulate(binary, policy, 200, seed=12)
    np.testing.assert_array_equal(first.y, second.y)
    np.testing.assert_array_equal(first.x, second.x)
    assert not np.array_equal(first.y, third.y) or not np.array_equal(first.x, third.x)


def test_empty_horizon(binary):
    trace = simulate(binary, passthrough_policy(binary), 0, seed=0)
    assert trace.horizon == 0
    np.testing.assert_array_equal(trace.output_marginal(2), [0.0, 0.0])


def test_infeasible_policy_reports_step():
    """测试不可行消耗在第 1 步被发现"""
    spec = SystemSpec.iid(Pmf.point(Alphabet(0, 1), 1), ms=1, initial_battery=[1.0, 0.0])
    with pytest.raises(SimulationError) as excinfo:
        simulate(spec, GreedyDischargePolicy(spec), 10, seed=0)
    assert excinfo.value.step == 1
    assert excinfo.value.to_payload()["step"] == 1
    print("✓ Infeasible consumption detected")


def test_passthrough_outputs_equal_demand(binary):
    trace = simulate(binary, passthrough_policy(binary), 100, seed=5)
    np.testing.assert_array_equal(trace.y, trace.x)


def test_structured_policy_output_marginal():
    """
    测试结构化策略的输出边缘分布等于 P_X

    使用 2000 条独立短轨迹的末端输出，避免长轨迹的相关性。
    """
    spec = binomial_spec(4, 3)
    solution = solve_iid(spec)
    spec = spec.with_initial_battery(solution.theta_star)
    policy = structured_policy(solution.theta_star, spec.demand_pmf, spec)

    runs = 2000
    counts = np.zeros(5)
    for seed in range(runs):
        trace = simulate(spec, policy, 3, seed=seed)
        counts[trace.y[-1]] += 1
    expected = runs * spec.demand_pmf.probs
    _, p_value = stats.chisquare(counts, f_exp=expected)
    assert p_value > 1e-4
    print(f"✓ Output marginal matches demand (p={p_value:.4f})")


def test_trace_csv(tmp_path, binary):
    path = tmp_path / "trace.csv"
    trace = simulate(binary, equiprobable_policy(binary), 6, seed=0)
    trace.to_csv(path)
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["t", "x", "s", "y"]
    assert len(rows) == 7
    assert rows[1][0] == "1"
    assert [int(v) for v in rows[-1][1:]] == [int(trace.x[-1]), int(trace.s[-1]), int(trace.y[-1])]


if __name__ == "__main__":
    pytest.main([__file__, "-v", "-s"])
