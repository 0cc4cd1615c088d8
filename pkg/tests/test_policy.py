"""
策略单元测试

测试 policy.py 中的动作表校验、结构化策略、常用基线策略与序列化
"""

import numpy as np
import pytest
from pydantic import ValidationError

from src.belief import Belief, theta_to_xi
from src.errors import ModelValidationError, PolicyClassError
from src.model import Alphabet, Pmf
from src.policy import (
    ActionA,
    ActionB,
    ConstantB,
    HistoryPolicy,
    best_effort_policy,
    equiprobable_policy,
    lift_to_action_a,
    load_policy,
    output_marginal,
    passthrough_policy,
    policy_from_document,
    project_to_b,
    structured_marginal_check,
    structured_policy,
)
from src.schemas import PolicyDocument


def test_structured_binary_table(binary):
    """测试二元模型在 θ = (½, ½) 下的结构化策略"""
    theta = Pmf.uniform(Alphabet(0, 1))
    policy = structured_policy(theta, binary.demand_pmf, binary)
    np.testing.assert_allclose(policy.b.table, [[0.0, 1.0], [0.5, 0.5], [1.0, 0.0]], atol=1e-15)
    assert policy.b.unreachable == frozenset()
    np.testing.assert_allclose(policy.b.row(0), [0.5, 0.5])
    print("✓ Binary structured policy matches the closed form")


@pytest.mark.parametrize("n,ms", [(1, 1), (4, 3), (6, 5)])
def test_structured_output_marginal(n, ms):
    """测试 Σ_w ξ(w) b(y|w) = P_X(y)"""
    demand = Pmf.binomial(n, 0.5)
    rng = np.random.default_rng(n + ms)
    theta = Pmf.normalized(Alphabet(0, ms), rng.dirichlet(np.ones(ms + 1)))
    assert structured_marginal_check(theta, demand) < 1e-12


def test_structured_unreachable_rows(binary):
    """测试 ξ(w) = 0 的行被确定性填充并标记"""
    theta = Pmf.point(Alphabet(0, 1), 0)
    policy = structured_policy(theta, binary.demand_pmf, binary)
    assert policy.b.unreachable == frozenset({1})
    np.testing.assert_allclose(policy.b.row(1), [1.0, 0.0])
    np.testing.assert_allclose(policy.b.row(0), [1.0, 0.0])
    np.testing.assert_allclose(policy.b.row(-1), [0.0, 1.0])


def test_action_b_rejects_infeasible(binary):
    with pytest.raises(ModelValidationError):
        ActionB(binary, [[1.0, 0.0], [0.5, 0.5], [1.0, 0.0]])
    with pytest.raises(ModelValidationError):
        ActionB(binary, [[0.0, 1.0], [0.5, 0.4], [1.0, 0.0]])
    with pytest.raises(ModelValidationError):
        ActionB(binary, [[0.0, 1.0], [1.0, 0.0]])


def test_action_a_rejects_infeasible(binary):
    table = np.zeros((2, 2, 2))
    table[:, :, 0] = 1.0
    with pytest.raises(ModelValidationError):
        ActionA(binary, table)


def test_equiprobable_policy(binomial_six_five):
    """测试等概率策略在每个 𝒴∘(w) 上均匀"""
    spec = binomial_six_five
    table = equiprobable_policy(spec).b.table
    for i, w in enumerate(spec.w_alphabet):
        feasible = sorted(spec.feasible_outputs(w))
        np.testing.assert_allclose(table[i, feasible], 1.0 / len(feasible))
        assert table[i].sum() == pytest.approx(1.0)


def test_best_effort_policy(binary, binomial_six_five):
    np.testing.assert_allclose(
        best_effort_policy(binary).b.table, [[0.0, 1.0], [1.0, 0.0], [1.0, 0.0]]
    )
    table = best_effort_policy(binomial_six_five).b.table
    # w = 0 时可以保持 y = 3
    assert table[binomial_six_five.w_alphabet.index(0), 3] == 1.0
    # w = −6 时只能消耗 6
    assert table[0, 6] == 1.0


def test_lift_then_project(binomial_six_five):
    """测试 b → ã → b 在可达行上保持不变"""
    spec = binomial_six_five
    b = equiprobable_policy(spec).b
    a = lift_to_action_a(b)
    assert a.table.shape == spec.table_shape_a
    projected = project_to_b(a, Belief.initial(spec))
    assert projected.unreachable == frozenset()
    np.testing.assert_allclose(projected.table, b.table, atol=1e-12)


def test_project_marks_unreachable(binary):
    a = passthrough_policy(binary).a
    pi = Belief(np.array([[1.0, 0.0], [0.0, 0.0]]))
    projected = project_to_b(a, pi)
    assert projected.unreachable == frozenset({-1, 1})
    np.testing.assert_allclose(projected.row(0), [1.0, 0.0])


def test_passthrough_policy(binary):
    a = passthrough_policy(binary).action()
    for x in (0, 1):
        for s in (0, 1):
            assert a.prob(x, x, s) == 1.0


def test_output_marginal_of_b_star(binary):
    theta = Pmf.uniform(Alphabet(0, 1))
    policy = structured_policy(theta, binary.demand_pmf, binary)
    marginal = output_marginal(policy.b, theta_to_xi(theta, binary.demand_pmf))
    np.testing.assert_allclose(marginal, [0.5, 0.5])


def test_policy_document_round_trip(tmp_path, binomial_six_five):
    """测试策略文件保存与加载"""
    spec = binomial_six_five
    theta = Pmf.normalized(Alphabet(0, 5), [1, 2, 3, 3, 2, 1])
    path = tmp_path / "policy.json"

    structured = structured_policy(theta, spec.demand_pmf, spec)
    structured.save(path)
    loaded = load_policy(path, spec)
    assert isinstance(loaded, ConstantB) and loaded.label == "structured"
    np.testing.assert_allclose(loaded.b.table, structured.b.table)

    best_effort = best_effort_policy(spec)
    best_effort.save(path)
    np.testing.assert_allclose(load_policy(path, spec).b.table, best_effort.b.table)

    passthrough_policy(spec).save(path)
    reloaded = load_policy(path, spec)
    np.testing.assert_allclose(reloaded.action().table, passthrough_policy(spec).a.table)
    print("✓ Policy documents round trip")


def test_policy_document_validation(binary):
    with pytest.raises(ValidationError):
        PolicyDocument.model_validate({"kind": "table_b"})
    with pytest.raises(ValidationError):
        PolicyDocument.model_validate({"kind": "structured"})
    with pytest.raises(ValidationError):
        PolicyDocument.model_validate({"kind": "greedy"})
    with pytest.raises(ModelValidationError):
        policy_from_document(PolicyDocument(kind="table_b", table=[[1.0, 0.0]]), binary)


def test_history_policy_has_no_tables(binary):
    """测试 Q_A 策略不能用于置信递推"""
    policy = HistoryPolicy(binary, lambda xs, ss, ys: [0.0, 1.0] if xs[-1] > ss[-1] else [1.0, 0.0])
    assert policy.policy_class == "Q_A"
    with pytest.raises(PolicyClassError):
        policy.tables(1, None, None)
    with pytest.raises(PolicyClassError):
        policy.to_document()
    np.testing.assert_allclose(policy.output_distribution(1, [1], [0], []), [0.0, 1.0])


if __name__ == "__main__":
    pytest.main([__file__, "-v", "-s"])
