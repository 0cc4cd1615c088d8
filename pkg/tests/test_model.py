"""
系统模型单元测试

测试 model.py 中的字母表、概率分布、转移矩阵与 SystemSpec
"""

import json

import numpy as np
import pytest
from pydantic import ValidationError

from src.errors import ConservationError, DomainError, ModelValidationError
from src.model import Alphabet, Pmf, SystemSpec, TransitionMatrix
from src.schemas import SpecDocument


def test_alphabet_basics():
    """测试字母表大小、下标与越界"""
    alphabet = Alphabet(0, 3)
    assert alphabet.size == 4
    assert list(alphabet) == [0, 1, 2, 3]
    assert alphabet.index(2) == 2
    with pytest.raises(DomainError):
        alphabet.index(4)
    with pytest.raises(ModelValidationError):
        Alphabet(2, 1)
    print("✓ Alphabet validated")


def test_pmf_validation():
    """测试非法概率分布被拒绝"""
    support = Alphabet(0, 1)
    with pytest.raises(ModelValidationError):
        Pmf(support, [0.7, 0.7])
    with pytest.raises(ModelValidationError):
        Pmf(support, [1.2, -0.2])
    with pytest.raises(ModelValidationError):
        Pmf(support, [1.0])
    with pytest.raises(ModelValidationError):
        Pmf.normalized(support, [0.0, 0.0])

    pmf = Pmf.normalized(support, [1.0, 3.0])
    assert pmf.prob(1) == pytest.approx(0.75)
    assert pmf.prob(5) == 0.0
    assert not pmf.probs.flags.writeable
    print("✓ Pmf validated")


def test_binomial_pmf():
    """测试 Binomial 分布的对称性与均值"""
    pmf = Pmf.binomial(6, 0.5)
    assert pmf.support == Alphabet(0, 6)
    assert pmf.is_symmetric()
    assert pmf.mean() == pytest.approx(3.0)
    assert pmf.prob(3) == pytest.approx(20 / 64)
    assert not Pmf.binomial(6, 0.3).is_symmetric()


def test_pmf_entropy_and_total_variation():
    uniform = Pmf.uniform(Alphabet(0, 3))
    assert uniform.entropy() == pytest.approx(2.0)
    assert uniform.entropy("nats") == pytest.approx(np.log(4))
    point = Pmf.point(Alphabet(0, 3), 0)
    assert uniform.total_variation(point) == pytest.approx(0.75)
    with pytest.raises(ModelValidationError):
        uniform.total_variation(Pmf.uniform(Alphabet(0, 2)))


def test_transition_matrix_period():
    """测试周期、可约性与平稳分布"""
    alphabet = Alphabet(0, 1)
    flip = TransitionMatrix(alphabet, [[0.0, 1.0], [1.0, 0.0]])
    assert flip.is_irreducible()
    assert flip.period() == 2
    assert flip.ergodicity_warnings() == ["demand transition matrix is periodic (period 2)"]

    identity = TransitionMatrix(alphabet, [[1.0, 0.0], [0.0, 1.0]])
    assert not identity.is_irreducible()
    assert identity.period() == 0
    assert identity.ergodicity_warnings() == ["demand transition matrix is not irreducible"]

    sticky = TransitionMatrix(alphabet, [[0.9, 0.1], [0.2, 0.8]])
    assert sticky.is_aperiodic()
    assert sticky.ergodicity_warnings() == []
    np.testing.assert_allclose(sticky.stationary().probs, [2 / 3, 1 / 3], atol=1e-12)
    print("✓ Ergodicity checks work")


def test_transition_matrix_rejects_bad_rows():
    with pytest.raises(ModelValidationError):
        TransitionMatrix(Alphabet(0, 1), [[0.5, 0.4], [0.5, 0.5]])
    with pytest.raises(ModelValidationError):
        TransitionMatrix(Alphabet(0, 1), [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def test_iid_spec_alphabets(binomial_six_five):
    """测试 i.i.d. 系统的派生属性"""
    spec = binomial_six_five
    assert (spec.mx, spec.my, spec.ms) == (6, 6, 5)
    assert spec.is_iid
    assert spec.w_alphabet == Alphabet(-6, 5)
    assert spec.joint_size == 7 * 6
    assert spec.table_shape_a == (7, 6, 7)
    np.testing.assert_allclose(spec.initial_battery.probs, np.full(6, 1 / 6))
    np.testing.assert_allclose(spec.demand_matrix.rows[3], spec.demand_pmf.probs)


def test_spec_requires_mx_le_my():
    with pytest.raises(ModelValidationError):
        SystemSpec.iid(Pmf.binomial(3, 0.5), ms=2, my=2)
    spec = SystemSpec.iid(Pmf.binomial(2, 0.5), ms=2, my=4)
    assert spec.consumption_alphabet == Alphabet(0, 4)


def test_feasible_outputs(binary):
    """测试 𝒴∘(w) 与可行性掩码"""
    assert binary.feasible_outputs(-1) == frozenset({1})
    assert binary.feasible_outputs(0) == frozenset({0, 1})
    assert binary.feasible_outputs(1) == frozenset({0})
    with pytest.raises(DomainError):
        binary.feasible_outputs(2)

    mask = binary.feasibility_mask_w
    np.testing.assert_array_equal(mask, [[False, True], [True, True], [True, False]])
    # x = 1, s = 0 只能消耗 1
    np.testing.assert_array_equal(binary.feasibility_mask_xs[1, 0], [False, True])


def test_feasible_outputs_wider_consumption():
    spec = SystemSpec.iid(Pmf.uniform(Alphabet(0, 1)), ms=2, my=3)
    assert spec.feasible_outputs(-1) == frozenset({1, 2, 3})
    assert spec.feasible_outputs(2) == frozenset({0})


def test_step_conservation(binary):
    """测试守恒方程 s' = s + y − x"""
    assert binary.step(0, 1, 1) == 0
    assert binary.step(1, 0, 0) == 1
    assert binary.step(0, 0, 1) == 1
    with pytest.raises(ConservationError):
        binary.step(0, 1, 0)
    with pytest.raises(ConservationError):
        binary.step(1, 0, 1)
    with pytest.raises(ConservationError):
        binary.step(2, 0, 0)


def test_markov_spec_logs_warnings(caplog):
    with caplog.at_level("WARNING"):
        spec = SystemSpec.markov([[0.0, 1.0], [1.0, 0.0]], [0.5, 0.5], ms=1)
    assert not spec.is_iid
    assert "periodic" in caplog.text
    with pytest.raises(ModelValidationError):
        spec.demand_pmf


def test_with_initial_battery(binary):
    shifted = binary.with_initial_battery([1.0, 0.0])
    assert shifted.initial_battery.prob(0) == 1.0
    assert binary.initial_battery.prob(0) == pytest.approx(0.5)
    with pytest.raises(ModelValidationError):
        binary.with_initial_battery([1.0, 0.0, 0.0])


def test_spec_save_load(tmp_path, binomial_six_five):
    """测试系统描述文件的保存与加载"""
    path = tmp_path / "spec.json"
    spec = binomial_six_five.with_initial_battery(Pmf.point(Alphabet(0, 5), 2))
    spec.save(path)
    loaded = SystemSpec.load(path)
    assert (loaded.mx, loaded.my, loaded.ms) == (6, 6, 5)
    np.testing.assert_allclose(loaded.demand_pmf.probs, spec.demand_pmf.probs)
    np.testing.assert_allclose(loaded.initial_battery.probs, spec.initial_battery.probs)

    markov = SystemSpec.markov([[0.9, 0.1], [0.2, 0.8]], [1.0, 0.0], ms=2)
    markov.save(path)
    reloaded = SystemSpec.load(path)
    assert not reloaded.is_iid
    np.testing.assert_allclose(reloaded.demand_matrix.rows, [[0.9, 0.1], [0.2, 0.8]])
    np.testing.assert_allclose(reloaded.initial_demand.probs, [1.0, 0.0])
    print("✓ Spec round trip preserved")


def test_spec_document_defaults_to_uniform_battery():
    document = SpecDocument.model_validate({"mx": 1, "my": 1, "ms": 3, "demand": {"iid": [0.5, 0.5]}})
    spec = SystemSpec.from_document(document)
    np.testing.assert_allclose(spec.initial_battery.probs, np.full(4, 0.25))


@pytest.mark.parametrize(
    "payload",
    [
        {"mx": 2, "my": 1, "ms": 1, "demand": {"iid": [0.2, 0.3, 0.5]}},
        {"mx": 1, "my": 1, "ms": 1, "demand": {}},
        {
            "mx": 1,
            "my": 1,
            "ms": 1,
            "demand": {"iid": [0.5, 0.5], "markov": {"Q": [[1, 0], [0, 1]], "init": [1, 0]}},
        },
        {"mx": -1, "my": 1, "ms": 1, "demand": {"iid": [1.0]}},
    ],
)
def test_spec_document_rejects_invalid(payload):
    """测试非法系统描述在 schema 层被拒绝"""
    with pytest.raises(ValidationError):
        SpecDocument.model_validate(payload)


def test_spec_document_bad_probabilities(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps({"mx": 1, "my": 1, "ms": 1, "demand": {"iid": [0.9, 0.3]}}))
    with pytest.raises(ModelValidationError):
        SystemSpec.load(path)


if __name__ == "__main__":
    pytest.main([__file__, "-v", "-s"])
