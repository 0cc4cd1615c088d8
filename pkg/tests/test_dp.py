"""
动态规划单元测试

测试 dp 子包：单纯形网格、Bellman 回溯、有限/无限时长求解与数值证书
"""

import math

import numpy as np
import pytest

from src.belief import Belief
from src.dp.backup import bellman_backup
from src.dp.certificates import converse_slack, verify_concavity, verify_dp_converse
from src.dp.grid import SimplexGrid, grid_size
from src.dp.solvers import solve_finite_horizon, solve_iid_infinite
from src.dp.value import ValueFunction
from src.errors import BudgetExceededError, ModelValidationError
from src.iidopt import solve_iid
from src.leakage import converse_floor, exact_leakage
from src.model import Alphabet, Pmf, SystemSpec, binomial_spec
from src.policy import ActionA, ActionB, passthrough_policy


# ===== 网格 =====
def test_grid_enumeration():
    """测试网格点数与编号"""
    grid = SimplexGrid(3, 4)
    assert grid.size == grid_size(3, 4) == 15
    assert grid.counts.shape == (15, 3)
    np.testing.assert_array_equal(grid.counts.sum(axis=1), 4)
    np.testing.assert_array_equal(grid.rank_counts(grid.counts), np.arange(15))
    assert len({tuple(row) for row in grid.counts}) == 15
    np.testing.assert_allclose(grid.points.sum(axis=1), 1.0)


def test_grid_locate_reconstructs_query():
    """测试 Freudenthal 定位的重心坐标"""
    grid = SimplexGrid(4, 5)
    rng = np.random.default_rng(0)
    queries = rng.dirichlet(np.ones(4), size=200)
    vertices, weights = grid.locate(queries)
    assert np.all(weights >= 0)
    np.testing.assert_allclose(weights.sum(axis=1), 1.0)
    reconstructed = np.einsum("nd,ndk->nk", weights, grid.points[vertices])
    np.testing.assert_allclose(reconstructed, queries, atol=1e-12)


def test_grid_interpolation_is_exact_for_linear():
    grid = SimplexGrid(3, 6)
    coefficients = np.array([0.3, -1.2, 2.5])
    values = grid.points @ coefficients
    queries = np.random.default_rng(1).dirichlet(np.ones(3), size=50)
    np.testing.assert_allclose(grid.interpolate(values, queries), queries @ coefficients, atol=1e-12)
    np.testing.assert_allclose(
        grid.local_gradient(values, queries),
        np.broadcast_to(coefficients, (50, 3)),
        atol=1e-9,
    )


def test_grid_vertices_are_exact():
    grid = SimplexGrid(3, 4)
    vertices, weights = grid.locate(grid.points)
    recovered = vertices[np.arange(grid.size), np.argmax(weights, axis=1)]
    np.testing.assert_array_equal(recovered, np.arange(grid.size))


def test_grid_budget():
    with pytest.raises(BudgetExceededError) as excinfo:
        SimplexGrid(10, 40, max_points=1000)
    assert excinfo.value.required == grid_size(10, 40)


def test_one_dimensional_grid():
    grid = SimplexGrid(1, 5)
    assert grid.size == 1
    vertices, weights = grid.locate(np.array([[1.0]]))
    assert vertices[0, 0] == 0 and weights[0, 0] == 1.0


# ===== Bellman 回溯 =====
def test_single_step_backup(binary):
    """测试 V ≡ 0 时 min_b I(b; ξ) 在 ξ = (¼, ½, ¼) 处为 0.5"""
    xi = Pmf(binary.w_alphabet, [0.25, 0.5, 0.25])
    outcome = bellman_backup(xi, None, spec=binary)
    assert isinstance(outcome.action, ActionB)
    assert outcome.value == pytest.approx(0.5, abs=1e-6)
    action = outcome.action
    np.testing.assert_allclose(action.row(0), [0.5, 0.5], atol=1e-3)
    np.testing.assert_allclose(action.row(-1), [0.0, 1.0])

    joint = bellman_backup(Belief.initial(binary), None, spec=binary)
    assert isinstance(joint.action, ActionA)
    assert joint.value == pytest.approx(0.5, abs=1e-6)


def test_backup_requires_spec():
    with pytest.raises(ModelValidationError):
        bellman_backup(Pmf.uniform(Alphabet(-1, 1)), None)


# ===== 有限时长 =====
@pytest.mark.parametrize("space", ["joint", "difference"])
def test_finite_horizon_one_step(binary, space):
    solution = solve_finite_horizon(binary, 1, resolution=4, space=space)
    assert solution.rate == pytest.approx(0.5, abs=1e-5)
    assert len(solution.value_functions) == 1


def test_finite_horizon_bounds(binary):
    """测试 T = 4 的 DP 值位于逆定理下界与 b* 泄漏之间"""
    solution = solve_finite_horizon(binary, 4, resolution=20, space="difference")
    j_star = solve_iid(binary).J_star
    b_star_leakage = exact_leakage(binary, solve_iid(binary).b_star, 4).total_rate
    assert solution.rate >= converse_floor(j_star, binary, 4) - 1e-6
    assert solution.rate <= b_star_leakage + 0.02
    print(f"✓ V_1/T = {solution.rate:.4f} (b* leakage {b_star_leakage:.4f})")


def test_finite_horizon_deterministic_demand():
    """测试确定性需求下最优泄漏为 0"""
    spec = SystemSpec.iid(Pmf.point(Alphabet(0, 1), 1), ms=1)
    solution = solve_finite_horizon(spec, 3, resolution=6, space="difference")
    assert solution.rate == pytest.approx(0.0, abs=1e-3)


def test_finite_horizon_markov_joint():
    spec = SystemSpec.markov([[0.7, 0.3], [0.4, 0.6]], [0.5, 0.5], ms=1)
    solution = solve_finite_horizon(spec, 2, resolution=6)
    assert solution.space == "joint"
    assert 0.0 <= solution.rate <= exact_leakage(spec, passthrough_policy(spec), 2).total_rate + 1e-3
    with pytest.raises(ModelValidationError):
        solve_finite_horizon(spec, 2, resolution=6, space="difference")


def test_finite_horizon_policy_is_evaluable(binary):
    """测试贪心策略可以用精确评估复核"""
    solution = solve_finite_horizon(binary, 3, resolution=12, space="difference")
    report = exact_leakage(binary, solution.policy, 3)
    assert report.total_rate >= solution.rate - 0.02
    assert report.total_rate <= 1.0


# ===== 无限时长 =====
@pytest.mark.slow
def test_relative_value_iteration_binary(binary):
    """测试二元模型的平均代价 J ≈ J* = 0.5"""
    solution = solve_iid_infinite(binary, resolution=20)
    assert solution.converged
    assert solution.J == pytest.approx(0.5, abs=0.02)
    assert solution.span < 1e-6
    document = solution.to_document("nats")
    assert document.rate == pytest.approx(solution.J * math.log(2.0))


def test_relative_value_iteration_reports_partial(binary):
    solution = solve_iid_infinite(binary, resolution=8, max_iters=2)
    assert not solution.converged
    assert solution.iterations == 2
    assert not solution.to_document().converged


# ===== 证书 =====
def test_concavity_certificate(binary):
    solution = solve_finite_horizon(binary, 2, resolution=10, space="difference")
    report = verify_concavity(solution.value_functions[0], trials=300, seed=3)
    assert report.passed
    assert report.tolerance > 0


@pytest.mark.slow
def test_concavity_certificate_fine_grid(binary):
    """测试 T = 6、分辨率 40 的每个 V_t 在 500 组随机样本上满足凹性"""
    solution = solve_finite_horizon(binary, 6, resolution=40, space="difference")
    for V in solution.value_functions:
        report = verify_concavity(V, trials=500, seed=3)
        assert report.violations == 0
        assert report.passed


def test_concavity_detects_convex_function():
    spec = binomial_spec(1, 1)
    grid = SimplexGrid(3, 8)
    convex = ValueFunction.from_function(
        spec, "difference", grid, lambda points: 10.0 * (points**2).sum(axis=1)
    )
    report = verify_concavity(convex, trials=300, seed=0)
    assert report.max_violation > 0


@pytest.mark.parametrize("n,ms", [(1, 1), (4, 3), (6, 5)])
def test_dp_converse(n, ms):
    """测试 v = H 满足平均代价最优性不等式，且在 (ξ*, b*) 处取等号"""
    spec = binomial_spec(n, ms)
    solution = solve_iid(spec)
    report = verify_dp_converse(
        spec,
        solution.J_star,
        samples=1000,
        seed=1,
        xi_star=solution.xi_star.probs,
        b_star=solution.b_star.b,
    )
    assert report.violations == 0
    assert abs(report.equality_slack) < 1e-9
    assert report.passed


def test_converse_slack_equality_binary(binary):
    b = np.array([[0.0, 1.0], [0.5, 0.5], [1.0, 0.0]])
    slack = converse_slack(binary, np.array([0.25, 0.5, 0.25]), b, 0.5)
    assert slack[0] == pytest.approx(0.0, abs=1e-12)


def test_converse_requires_iid():
    spec = SystemSpec.markov([[0.7, 0.3], [0.4, 0.6]], [0.5, 0.5], ms=1)
    with pytest.raises(ModelValidationError):
        verify_dp_converse(spec, 0.5, samples=10)


# ===== 序列化 =====
def test_value_function_save_load(tmp_path, binary):
    solution = solve_finite_horizon(binary, 2, resolution=6, space="difference")
    V = solution.value_functions[0]
    path = tmp_path / "value.json"
    V.save(path)
    loaded = ValueFunction.load(path, binary)
    np.testing.assert_allclose(loaded.values, V.values)
    np.testing.assert_allclose(loaded.actions, V.actions)
    assert loaded.stage == V.stage == 1
    query = np.array([0.2, 0.5, 0.3])
    assert loaded(query) == pytest.approx(V(query))

    with pytest.raises(ModelValidationError):
        ValueFunction.load(path, binomial_spec(2, 2))


if __name__ == "__main__":
    pytest.main([__file__, "-v", "-s"])
