"""
充放电策略

动作：
- ActionA: a(y | x, s)，每个 (x, s) 对应 Y 上的分布，只在 𝒴∘(s − x) 上有质量
- ActionB: b(y | w)，每个 w 对应 Y 上的分布，只在 𝒴∘(w) 上有质量

策略类别：
- HistoryPolicy: q_t(y_t | x^t, s^t, y^{t−1})，类 Q_A，只能由穷举 oracle 评估
- MemoryCompressedPolicy: q_t(y_t | x_t, s_t, y^{t−1})，类 Q_B
- BeliefPolicy: π_t ↦ a_t
- DifferencePolicy: ξ_t ↦ b_t（i.i.d. 需求）
- ConstantB / ConstantA: 时间齐次、无记忆的固定动作

所有策略通过 tables() 在指定置信空间（joint 或 difference）批量给出动作表，
精确泄漏计算、Monte Carlo 与仿真共用这一接口。
"""

import json
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from src.belief import Belief, BeliefSpace, XiBelief, joint_to_difference_matrix, theta_to_xi
from src.errors import ModelValidationError, PolicyClassError
from src.model import Pmf, SystemSpec
from src.schemas import PolicyDocument

logger = logging.getLogger(__name__)

ROW_TOLERANCE = 1e-9
# ξ(w) 低于该值的行视为不可达
UNREACHABLE_THRESHOLD = 1e-300


def _check_rows(table: np.ndarray, mask: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(table)) or np.any(table < -1e-15):
        raise ModelValidationError(f"{what} has negative or non-finite entries")
    outside = np.abs(np.where(mask, 0.0, table)).max(initial=0.0)
    if outside > 1e-12:
        raise ModelValidationError(f"{what} puts mass {outside:.3e} on infeasible consumption")
    deviation = np.abs(table.sum(axis=-1) - 1.0).max(initial=0.0)
    if deviation > ROW_TOLERANCE:
        raise ModelValidationError(f"{what} rows do not sum to 1 (max deviation {deviation:.3e})")


def smallest_feasible_rows(mask: np.ndarray) -> np.ndarray:
    """每行把全部质量放在最小的可行 y 上"""
    table = np.zeros(mask.shape)
    first = np.argmax(mask, axis=-1)
    np.put_along_axis(table, first[..., None], 1.0, axis=-1)
    return table


@dataclass(frozen=True, eq=False)
class ActionA:
    """a(y | x, s)，table 形状 (|X|, |S|, |Y|)"""

    spec: SystemSpec
    table: np.ndarray

    def __post_init__(self) -> None:
        table = np.clip(np.array(self.table, dtype=float), 0.0, None)
        expected = (
            self.spec.demand_alphabet.size,
            self.spec.battery_alphabet.size,
            self.spec.consumption_alphabet.size,
        )
        if table.shape != expected:
            raise ModelValidationError(f"ActionA table must have shape {expected}, got {table.shape}")
        _check_rows(table, self.spec.feasibility_mask_xs, "ActionA")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @property
    def flat(self) -> np.ndarray:
        """形状 (|X||S|, |Y|)，行下标 r = x·|S| + s"""
        return self.table.reshape(self.spec.joint_size, -1)

    def prob(self, y: int, x: int, s: int) -> float:
        return float(self.table[x, s, y])


@dataclass(frozen=True, eq=False)
class ActionB:
    """b(y | w)，table 形状 (|W|, |Y|)；unreachable 记录 ξ(w) = 0 时填充的行"""

    spec: SystemSpec
    table: np.ndarray
    unreachable: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        table = np.clip(np.array(self.table, dtype=float), 0.0, None)
        expected = (self.spec.w_alphabet.size, self.spec.consumption_alphabet.size)
        if table.shape != expected:
            raise ModelValidationError(f"ActionB table must have shape {expected}, got {table.shape}")
        _check_rows(table, self.spec.feasibility_mask_w, "ActionB")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    def row(self, w: int) -> np.ndarray:
        return self.table[self.spec.w_alphabet.index(w)]


def lift_to_action_a(b: ActionB) -> ActionA:
    """ã(y | x, s) = b(y | s − x)"""
    return ActionA(b.spec, b.table[b.spec.w_index_xs])


def project_to_b(a: ActionA, pi: Belief) -> ActionB:
    """
    b(y|w) = Σ_{s − x = w} a(y|x, s) π(x, s) / ξ(w)

    ξ(w) = 0 的行标记为不可达，并填充最小可行 y。
    """
    spec = a.spec
    n_w = spec.w_alphabet.size
    w_index = spec.w_index_xs.reshape(-1)
    weights = pi.flat
    numerator = np.zeros((n_w, spec.consumption_alphabet.size))
    np.add.at(numerator, w_index, weights[:, None] * a.flat)
    xi = np.zeros(n_w)
    np.add.at(xi, w_index, weights)
    reachable = xi > UNREACHABLE_THRESHOLD
    fill = smallest_feasible_rows(spec.feasibility_mask_w)
    safe = np.where(reachable, xi, 1.0)
    table = np.where(reachable[:, None], numerator / safe[:, None], fill)
    table = _renormalize_rows(table)
    unreachable = frozenset(int(w) for w in spec.w_alphabet.values[~reachable])
    return ActionB(spec, table, unreachable)


def _renormalize_rows(table: np.ndarray) -> np.ndarray:
    totals = table.sum(axis=-1, keepdims=True)
    return table / np.where(totals > 0, totals, 1.0)


# ===== 策略类型 =====
class Policy(ABC):
    """
    策略基类

    Attributes:
        kind: 序列化时使用的类型名
        policy_class: "Q_A" 或 "Q_B"
        spaces: 能直接给出动作表的置信空间
        requires_belief: tables() 是否需要置信
        requires_history: tables() 是否需要 y 历史
        stationary: 动作是否与 t 无关
    """

    kind: str = "policy"
    policy_class: str = "Q_B"
    spaces: tuple[str, ...] = ("joint",)
    requires_belief: bool = False
    requires_history: bool = False
    stationary: bool = False

    def __init__(self, spec: SystemSpec):
        self.spec = spec

    @abstractmethod
    def tables(
        self,
        t: int,
        histories: Optional[np.ndarray],
        beliefs: Optional[np.ndarray],
        space: BeliefSpace = "joint",
    ) -> np.ndarray:
        """
        批量动作表

        Args:
            t: 时间（从 1 开始）
            histories: (N, t − 1) 的 y 历史，requires_history 为 False 时可为 None
            beliefs: (N, R) 的置信，requires_belief 为 False 时可为 None
            space: "joint" 返回 (N, |X||S|, |Y|)；"difference" 返回 (N, |W|, |Y|)
        """

    def action(
        self,
        t: int = 1,
        history: Sequence[int] = (),
        belief: Optional[Belief] = None,
    ) -> ActionA:
        """单个时刻的 ActionA"""
        histories = np.asarray(history, dtype=np.int64).reshape(1, -1)
        beliefs = None if belief is None else belief.flat[None, :]
        if self.requires_belief and beliefs is None:
            raise ModelValidationError(f"{self.kind} policy needs the current belief")
        flat = self.tables(t, histories, beliefs, "joint")[0]
        return ActionA(self.spec, flat.reshape(self.spec.table_shape_a))

    def output_distribution(
        self,
        t: int,
        xs: Sequence[int],
        ss: Sequence[int],
        ys: Sequence[int],
        belief: Optional[Belief] = None,
    ) -> np.ndarray:
        """当前 (x_t, s_t) 下 Y_t 的条件分布（仿真和穷举 oracle 使用）"""
        return self.action(t, ys, belief).table[xs[-1], ss[-1]]

    def _check_space(self, space: BeliefSpace) -> None:
        if space not in self.spaces:
            raise PolicyClassError(f"{self.kind} policy cannot act in the {space} belief space")

    def to_document(self) -> PolicyDocument:
        raise PolicyClassError(f"{self.kind} policy is not serializable")

    def save(self, path: str | Path) -> None:
        payload = self.to_document().model_dump(exclude_none=True)
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class HistoryPolicy(Policy):
    """
    类 Q_A 策略：q_t(y_t | x^t, s^t, y^{t−1})

    callback(xs, ss, ys) 返回 Y 上的概率向量，必须是其参数的纯函数。
    置信递推要求 Q_B 结构，因此只能通过 oracle 模块穷举评估。
    """

    kind = "history"
    policy_class = "Q_A"
    spaces = ()
    requires_history = True

    def __init__(self, spec: SystemSpec, callback: Callable[[tuple, tuple, tuple], Sequence[float]]):
        super().__init__(spec)
        self.callback = callback

    def tables(self, t, histories, beliefs, space="joint"):
        raise PolicyClassError(
            "full-history (Q_A) policies have no (x_t, s_t, y^{t-1}) action table; "
            "use the brute-force oracle or compress_history_policy"
        )

    def output_distribution(self, t, xs, ss, ys, belief=None) -> np.ndarray:
        probs = np.asarray(self.callback(tuple(xs), tuple(ss), tuple(ys)), dtype=float)
        mask = self.spec.feasibility_mask_xs[xs[-1], ss[-1]]
        _check_rows(probs[None, :], mask[None, :], "HistoryPolicy output")
        return probs


class MemoryCompressedPolicy(Policy):
    """类 Q_B 策略：callback(t, x, s, ys) 返回 Y 上的概率向量"""

    kind = "memory_compressed"
    requires_history = True

    def __init__(
        self,
        spec: SystemSpec,
        callback: Callable[[int, int, int, tuple], Sequence[float]],
    ):
        super().__init__(spec)
        self.callback = callback

    def _table(self, t: int, history: tuple) -> np.ndarray:
        rows = [
            np.asarray(self.callback(t, x, s, history), dtype=float)
            for x in self.spec.demand_alphabet
            for s in self.spec.battery_alphabet
        ]
        table = np.stack(rows)
        _check_rows(
            table,
            self.spec.feasibility_mask_xs.reshape(self.spec.joint_size, -1),
            "MemoryCompressedPolicy output",
        )
        return table

    def tables(self, t, histories, beliefs, space="joint"):
        self._check_space(space)
        if histories is None:
            raise ModelValidationError("memory-compressed policy needs y histories")
        return np.stack([self._table(t, tuple(int(y) for y in h)) for h in histories])


class BeliefPolicy(Policy):
    """
    联合置信策略 π_t ↦ a_t

    Args:
        fn: fn(t, belief) -> ActionA
        batch_fn: 可选的批量版本 batch_fn(t, beliefs (N, R)) -> (N, R, |Y|)
    """

    kind = "belief"
    requires_belief = True

    def __init__(
        self,
        spec: SystemSpec,
        fn: Callable[[int, Belief], ActionA],
        batch_fn: Optional[Callable[[int, np.ndarray], np.ndarray]] = None,
        stationary: bool = False,
    ):
        super().__init__(spec)
        self.fn = fn
        self.batch_fn = batch_fn
        self.stationary = stationary

    def tables(self, t, histories, beliefs, space="joint"):
        self._check_space(space)
        if beliefs is None:
            raise ModelValidationError("belief policy needs beliefs")
        if self.batch_fn is not None:
            return self.batch_fn(t, beliefs)
        return np.stack([self.fn(t, Belief.from_flat(self.spec, b)).flat for b in beliefs])


class DifferencePolicy(Policy):
    """
    差值置信策略 ξ_t ↦ b_t（i.i.d. 需求）

    在联合空间中使用时，先把 π 投影为 ξ，再把 b 提升为 ã。
    """

    kind = "difference"
    spaces = ("difference", "joint")
    requires_belief = True

    def __init__(
        self,
        spec: SystemSpec,
        fn: Callable[[int, XiBelief], ActionB],
        batch_fn: Optional[Callable[[int, np.ndarray], np.ndarray]] = None,
        stationary: bool = False,
    ):
        super().__init__(spec)
        self.fn = fn
        self.batch_fn = batch_fn
        self.stationary = stationary

    def _difference_tables(self, t: int, xis: np.ndarray) -> np.ndarray:
        if self.batch_fn is not None:
            return self.batch_fn(t, xis)
        support = self.spec.w_alphabet
        return np.stack([self.fn(t, Pmf.normalized(support, xi)).table for xi in xis])

    def tables(self, t, histories, beliefs, space="joint"):
        self._check_space(space)
        if beliefs is None:
            raise ModelValidationError("difference policy needs beliefs")
        if space == "difference":
            return self._difference_tables(t, beliefs)
        xis = beliefs @ joint_to_difference_matrix(self.spec)
        b_tables = self._difference_tables(t, xis)
        return b_tables[:, self.spec.w_index_xs.reshape(-1), :]


class ConstantB(Policy):
    """
    固定 ActionB 的时间齐次无记忆策略

    label 取 "structured" / "equiprobable" / "best_effort" / "table_b"；
    结构化策略同时记录生成它的 θ。
    """

    kind = "table_b"
    spaces = ("difference", "joint")
    stationary = True

    def __init__(self, b: ActionB, label: str = "table_b", theta: Optional[Pmf] = None):
        super().__init__(b.spec)
        self.b = b
        self.label = label
        self.theta = theta

    @cached_property
    def lifted(self) -> ActionA:
        return lift_to_action_a(self.b)

    def tables(self, t, histories, beliefs, space="joint"):
        self._check_space(space)
        n = 1 if beliefs is None else beliefs.shape[0]
        table = self.b.table if space == "difference" else self.lifted.flat
        return np.broadcast_to(table, (n,) + table.shape)

    def action(self, t=1, history=(), belief=None) -> ActionA:
        return self.lifted

    def output_distribution(self, t, xs, ss, ys, belief=None) -> np.ndarray:
        return self.lifted.table[xs[-1], ss[-1]]

    def to_document(self) -> PolicyDocument:
        if self.label == "structured" and self.theta is not None:
            return PolicyDocument(kind="structured", theta=self.theta.to_list())
        if self.label == "equiprobable":
            return PolicyDocument(kind="equiprobable")
        return PolicyDocument(kind="table_b", table=[[float(v) for v in row] for row in self.b.table])


class ConstantA(Policy):
    """固定 ActionA 的时间齐次无记忆策略（label: "passthrough" / "table_a" / "battery_conditioned"）"""

    kind = "table_a"
    stationary = True

    def __init__(self, a: ActionA, label: str = "table_a"):
        super().__init__(a.spec)
        self.a = a
        self.label = label

    def tables(self, t, histories, beliefs, space="joint"):
        self._check_space(space)
        n = 1 if beliefs is None else beliefs.shape[0]
        return np.broadcast_to(self.a.flat, (n,) + self.a.flat.shape)

    def action(self, t=1, history=(), belief=None) -> ActionA:
        return self.a

    def output_distribution(self, t, xs, ss, ys, belief=None) -> np.ndarray:
        return self.a.table[xs[-1], ss[-1]]

    def to_document(self) -> PolicyDocument:
        if self.label == "passthrough":
            return PolicyDocument(kind="passthrough")
        nested = [[[float(v) for v in row] for row in block] for block in self.a.table]
        return PolicyDocument(kind="table_a", table=nested)


# ===== 策略构造 =====
def structured_policy(
    theta: Pmf,
    demand: Pmf,
    spec: Optional[SystemSpec] = None,
) -> ConstantB:
    """
    结构化策略 b*(y|w) = P_X(y) θ(y + w) / ξ(w)，y ∈ 𝒳 ∩ 𝒴∘(w)

    Args:
        theta: 电池分布 θ（S 上）
        demand: 需求分布 P_X
        spec: 系统描述；省略时取 Y = X、初始电池分布为 θ 的 i.i.d. 系统

    Returns:
        ConstantB；ξ(w) = 0 的行填充最小可行 y，并记入 unreachable
    """
    if spec is None:
        spec = SystemSpec.iid(demand, ms=theta.support.hi, initial_battery=theta)
    if theta.support != spec.battery_alphabet or demand.support != spec.demand_alphabet:
        raise ModelValidationError("theta/demand supports do not match the system alphabets")
    w_values = spec.w_alphabet.values
    numerator = np.zeros((spec.w_alphabet.size, spec.consumption_alphabet.size))
    for y in spec.demand_alphabet:
        s = w_values + y
        inside = (s >= 0) & (s <= spec.ms)
        numerator[inside, y] = demand.probs[y] * theta.probs[s[inside]]
    xi = numerator.sum(axis=1)
    reachable = xi > UNREACHABLE_THRESHOLD
    fill = smallest_feasible_rows(spec.feasibility_mask_w)
    safe = np.where(reachable, xi, 1.0)
    table = np.where(reachable[:, None], numerator / safe[:, None], fill)
    unreachable = frozenset(int(w) for w in w_values[~reachable])
    if unreachable:
        logger.warning(f"structured policy: unreachable rows w={sorted(unreachable)} filled deterministically")
    return ConstantB(ActionB(spec, table, unreachable), label="structured", theta=theta)


def equiprobable_policy(spec: SystemSpec) -> ConstantB:
    """b(y|w) = 1 / |𝒴∘(w)|，y ∈ 𝒴∘(w)"""
    mask = spec.feasibility_mask_w.astype(float)
    return ConstantB(ActionB(spec, mask / mask.sum(axis=1, keepdims=True)), label="equiprobable")


def best_effort_policy(spec: SystemSpec, level: Optional[int] = None) -> ConstantB:
    """尽量保持恒定消耗 level（默认 ⌊m_x/2⌋），不可行时取最近的可行 y"""
    level = spec.mx // 2 if level is None else level
    table = np.zeros((spec.w_alphabet.size, spec.consumption_alphabet.size))
    for i, w in enumerate(spec.w_alphabet):
        feasible = sorted(spec.feasible_outputs(w))
        table[i, min(max(level, feasible[0]), feasible[-1])] = 1.0
    return ConstantB(ActionB(spec, table), label="best_effort")


def passthrough_policy(spec: SystemSpec) -> ConstantA:
    """y_t = x_t，电池不参与（最大泄漏）"""
    table = np.zeros(spec.table_shape_a)
    for x in spec.demand_alphabet:
        table[x, :, x] = 1.0
    return ConstantA(ActionA(spec, table), label="passthrough")


def battery_conditioned_policy(spec: SystemSpec) -> ConstantA:
    """x_t = s_t 时在 𝒴∘(0) 上等概率选择，否则 y_t = x_t"""
    table = np.zeros(spec.table_shape_a)
    zero_row = spec.feasibility_mask_w[spec.w_alphabet.index(0)].astype(float)
    for x in spec.demand_alphabet:
        for s in spec.battery_alphabet:
            if x == s:
                table[x, s] = zero_row / zero_row.sum()
            else:
                table[x, s, x] = 1.0
    return ConstantA(ActionA(spec, table), label="battery_conditioned")


# ===== 序列化 =====
def policy_from_document(document: PolicyDocument, spec: SystemSpec) -> Policy:
    """由 PolicyDocument 构造策略（structured 使用 spec 的 i.i.d. 需求）"""
    kind = document.kind
    if kind == "structured":
        if document.theta is None:
            raise ModelValidationError("structured policy document needs 'theta'")
        theta = Pmf(spec.battery_alphabet, document.theta)
        return structured_policy(theta, spec.demand_pmf, spec)
    if kind == "equiprobable":
        return equiprobable_policy(spec)
    if kind == "passthrough":
        return passthrough_policy(spec)
    if kind == "table_b":
        return ConstantB(ActionB(spec, np.asarray(document.table, dtype=float)))
    if kind == "table_a":
        return ConstantA(ActionA(spec, np.asarray(document.table, dtype=float)))
    raise ModelValidationError(f"unknown policy kind: {kind}")


def load_policy(path: str | Path, spec: SystemSpec) -> Policy:
    text = Path(path).read_text(encoding="utf-8")
    return policy_from_document(PolicyDocument.model_validate_json(text), spec)


def output_marginal(b: ActionB, xi: XiBelief) -> np.ndarray:
    """Σ_w ξ(w) b(y|w)"""
    return xi.probs @ b.table


def structured_marginal_check(theta: Pmf, demand: Pmf) -> float:
    """结构化策略下输出边缘分布与 P_X 的最大偏差"""
    policy = structured_policy(theta, demand)
    marginal = output_marginal(policy.b, theta_to_xi(theta, demand))
    return float(np.abs(marginal[: demand.support.size] - demand.probs).max())
