"""
置信状态滤波器

- 联合滤波 φ：π(x, s) = P(X_t = x, S_t = s | Y^{t−1})，适用于 Markov 需求
- 差值滤波 φ̃：ξ(w) = P(W_t = w | Y^{t−1})，适用于 i.i.d. 需求
- θ ↔ ξ 对应关系：S ⊥ X 时 ξ 是 S − X 的分布

两个滤波器都可以写成线性核：未归一化的下一步置信为
    u_y = K_yᵀ (belief ⊙ action[:, y])
BeliefKernel 保存所有 K_y，供精确泄漏计算、Monte Carlo 与动态规划批量使用。
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Literal

import numpy as np

from src.errors import ConditioningError, ModelValidationError
from src.model import Alphabet, Pmf, SystemSpec, TransitionMatrix

logger = logging.getLogger(__name__)

BELIEF_TOLERANCE = 1e-10

BeliefSpace = Literal["joint", "difference"]

# ξ 直接用 W 上的 Pmf 表示
XiBelief = Pmf


@dataclass(frozen=True, eq=False)
class Belief:
    """X×S 上的联合置信 π(x, s)"""

    joint: np.ndarray

    def __post_init__(self) -> None:
        joint = np.array(self.joint, dtype=float)
        if joint.ndim != 2:
            raise ModelValidationError(f"joint belief must be a matrix, got shape {joint.shape}")
        if np.any(joint < 0) or not np.all(np.isfinite(joint)):
            raise ModelValidationError("joint belief has negative or non-finite entries")
        total = joint.sum()
        if abs(total - 1.0) > BELIEF_TOLERANCE:
            raise ModelValidationError(f"joint belief sums to {total:.12f}, expected 1")
        joint.setflags(write=False)
        object.__setattr__(self, "joint", joint)

    @classmethod
    def product(cls, demand: Pmf, battery: Pmf) -> "Belief":
        """π = P_X ⊗ θ"""
        return cls(np.outer(demand.probs, battery.probs))

    @classmethod
    def initial(cls, spec: SystemSpec) -> "Belief":
        """π_1(x, s) = P_{X_1}(x) P_{S_1}(s)"""
        return cls.product(spec.initial_demand, spec.initial_battery)

    @classmethod
    def from_flat(cls, spec: SystemSpec, flat: np.ndarray) -> "Belief":
        flat = np.clip(np.asarray(flat, dtype=float), 0.0, None)
        return cls((flat / flat.sum()).reshape(spec.demand_alphabet.size, spec.battery_alphabet.size))

    @property
    def flat(self) -> np.ndarray:
        return self.joint.reshape(-1)

    def demand_marginal(self, spec: SystemSpec) -> Pmf:
        return Pmf.normalized(spec.demand_alphabet, self.joint.sum(axis=1))

    def battery_marginal(self, spec: SystemSpec) -> Pmf:
        return Pmf.normalized(spec.battery_alphabet, self.joint.sum(axis=0))

    def to_xi(self, spec: SystemSpec) -> XiBelief:
        """ξ(w) = Σ_{s − x = w} π(x, s)"""
        xi = np.zeros(spec.w_alphabet.size)
        np.add.at(xi, spec.w_index_xs.reshape(-1), self.flat)
        return Pmf.normalized(spec.w_alphabet, xi)


def theta_to_xi(theta: Pmf, demand: Pmf) -> XiBelief:
    """
    S ⊥ X 时差值 W = S − X 的分布：ξ(w) = Σ_x P_X(x) θ(w + x)

    Args:
        theta: 电池分布 θ
        demand: 需求分布 P_X

    Returns:
        W = {S.lo − X.hi, …, S.hi − X.lo} 上的 Pmf
    """
    w_alphabet = Alphabet(theta.support.lo - demand.support.hi, theta.support.hi - demand.support.lo)
    xi = np.convolve(theta.probs, demand.probs[::-1])
    return Pmf.normalized(w_alphabet, xi)


def filter_joint(pi: Belief, y: int, a: Any, Q: TransitionMatrix) -> Belief:
    """
    联合滤波 π_{t+1} = φ(π_t, y_t, a_t)

    φ(π, y, a)(x', s') ∝ Σ_x Q(x'|x) a(y | x, s' − y + x) π(x, s' − y + x)

    Args:
        pi: 当前置信 π_t
        y: 观测到的消耗
        a: 动作 a(y | x, s)，形状 (|X|, |S|, |Y|) 的表（或带 table 属性的对象）
        Q: 需求转移矩阵

    Raises:
        ConditioningError: y 的预测概率为 0
    """
    table = _action_table(a)
    n_x, n_s, n_y = table.shape
    if not 0 <= y < n_y:
        raise ConditioningError(y, 0.0)
    weighted = pi.joint * table[:, :, y]
    probability = float(weighted.sum())
    if probability <= 0.0:
        raise ConditioningError(y, probability)
    xs, ss = np.nonzero(weighted)
    s_next = ss + y - xs
    if np.any((s_next < 0) | (s_next >= n_s)):
        raise ModelValidationError(f"action puts mass on infeasible consumption y={y}")
    moved = np.zeros((n_x, n_s))
    np.add.at(moved, (xs, s_next), weighted[xs, ss])
    updated = Q.rows.T @ moved
    return Belief(updated / updated.sum())


def xi_update(xi: XiBelief, y: int, b: Any, demand: Pmf) -> XiBelief:
    """
    差值滤波 ξ_{t+1} = φ̃(ξ_t, y_t, b_t)

    φ̃(ξ, y, b)(w₊) ∝ Σ_{w, x} P_X(x) 1{w₊ = y + w − x} b(y|w) ξ(w)

    Raises:
        ConditioningError: Σ_w b(y|w) ξ(w) = 0
    """
    table = _action_table(b)
    n_w, n_y = table.shape
    if not 0 <= y < n_y:
        raise ConditioningError(y, 0.0)
    weighted = xi.probs * table[:, y]
    probability = float(weighted.sum())
    if probability <= 0.0:
        raise ConditioningError(y, probability)
    # 下一电池状态 s' = w + y，随后与独立的新需求做差
    s_next = xi.support.values + y
    battery = Alphabet(0, xi.support.hi)
    valid = (s_next >= battery.lo) & (s_next <= battery.hi)
    if np.any(weighted[~valid] > 0):
        raise ModelValidationError(f"difference action puts mass on infeasible consumption y={y}")
    theta_next = np.zeros(battery.size)
    np.add.at(theta_next, s_next[valid] - battery.lo, weighted[valid])
    return theta_to_xi(Pmf.normalized(battery, theta_next), demand)


def _action_table(action: Any) -> np.ndarray:
    table = getattr(action, "table", action)
    return np.asarray(table, dtype=float)


@dataclass(frozen=True, eq=False)
class BeliefKernel:
    """
    线性滤波核

    Attributes:
        space: "joint"（r = (x, s)）或 "difference"（r = w）
        mask: 形状 (R, |Y|) 的可行性掩码
        transitions: 形状 (|Y|, R, R)，transitions[y, r, r'] 为未归一化转移权重
    """

    space: BeliefSpace
    mask: np.ndarray
    transitions: np.ndarray

    @property
    def n_states(self) -> int:
        return int(self.mask.shape[0])

    @property
    def n_outputs(self) -> int:
        return int(self.mask.shape[1])

    def predictive(self, beliefs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """p(y) = Σ_r belief(r) action(y|r)，支持批量"""
        return np.einsum("...r,...ry->...y", beliefs, actions)

    def update_all(self, beliefs: np.ndarray, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """
        对所有 y 同时做贝叶斯更新

        Args:
            beliefs: (N, R)
            actions: (N, R, |Y|)

        Returns:
            (p, updated)：p 形状 (N, |Y|)；updated 形状 (N, |Y|, R)，p = 0 的分支为 0
        """
        unnormalized = np.einsum("nr,nry,yrs->nys", beliefs, actions, self.transitions)
        probabilities = unnormalized.sum(axis=-1)
        safe = np.where(probabilities > 0, probabilities, 1.0)
        updated = np.where(probabilities[..., None] > 0, unnormalized / safe[..., None], 0.0)
        return probabilities, updated

    def update_observed(
        self,
        beliefs: np.ndarray,
        actions: np.ndarray,
        observations: np.ndarray,
    ) -> tuple[np.ndarray, np.ndarray]:
        """
        只对实际观测到的 y_n 更新（Monte Carlo 路径）

        Returns:
            (p_observed, updated)：形状 (N,) 与 (N, R)
        """
        rows = np.arange(beliefs.shape[0])
        weighted = beliefs * actions[rows, :, observations]
        unnormalized = np.einsum("nr,nrs->ns", weighted, self.transitions[observations])
        probabilities = unnormalized.sum(axis=-1)
        if np.any(probabilities <= 0):
            bad = int(np.argmax(probabilities <= 0))
            raise ConditioningError(int(observations[bad]), float(probabilities[bad]))
        return probabilities, unnormalized / probabilities[:, None]

    def update(self, belief: np.ndarray, action: np.ndarray, y: int) -> np.ndarray:
        """单个置信的更新"""
        _, updated = self.update_observed(belief[None, :], action[None, :, :], np.array([y]))
        return updated[0]

    def initial(self, spec: SystemSpec) -> np.ndarray:
        if self.space == "joint":
            return Belief.initial(spec).flat.copy()
        return theta_to_xi(spec.initial_battery, spec.demand_pmf).probs.copy()


@lru_cache(maxsize=64)
def joint_kernel(spec: SystemSpec, transition: TransitionMatrix | None = None) -> BeliefKernel:
    """
    联合空间滤波核：r = (x, s) → r' = (x', s + y − x)，权重 Q(x'|x)
    """
    Q = spec.demand_matrix.rows if transition is None else transition.rows
    n_x = spec.demand_alphabet.size
    n_s = spec.battery_alphabet.size
    n_y = spec.consumption_alphabet.size
    transitions = np.zeros((n_y, n_x * n_s, n_x * n_s))
    for y in range(n_y):
        for x in range(n_x):
            for s in range(n_s):
                s_next = s + y - x
                if 0 <= s_next < n_s:
                    # 所有 x' 的目标下标 x' * n_s + s_next
                    transitions[y, x * n_s + s, np.arange(n_x) * n_s + s_next] = Q[x]
    mask = spec.feasibility_mask_xs.reshape(n_x * n_s, n_y)
    logger.debug(f"Built joint kernel for {spec.describe()}: R={n_x * n_s}, |Y|={n_y}")
    return BeliefKernel("joint", np.array(mask), transitions)


@lru_cache(maxsize=64)
def difference_kernel(spec: SystemSpec) -> BeliefKernel:
    """
    差值空间滤波核（i.i.d. 需求）：w → w + y − x'，权重 P_X(x')
    """
    demand = spec.demand_pmf
    n_w = spec.w_alphabet.size
    n_y = spec.consumption_alphabet.size
    w_lo = spec.w_alphabet.lo
    transitions = np.zeros((n_y, n_w, n_w))
    for y in range(n_y):
        for i in range(n_w):
            s_next = w_lo + i + y
            if not spec.battery_alphabet.contains(s_next):
                continue
            for x_next, p in zip(spec.demand_alphabet, demand.probs):
                transitions[y, i, s_next - x_next - w_lo] += p
    logger.debug(f"Built difference kernel for {spec.describe()}: |W|={n_w}, |Y|={n_y}")
    return BeliefKernel("difference", np.array(spec.feasibility_mask_w), transitions)


def kernel_for(spec: SystemSpec, space: BeliefSpace) -> BeliefKernel:
    if space == "joint":
        return joint_kernel(spec)
    if space == "difference":
        if not spec.is_iid:
            raise ModelValidationError("difference-space filtering requires i.i.d. demand")
        return difference_kernel(spec)
    raise ModelValidationError(f"unknown belief space: {space}")


def joint_to_difference_matrix(spec: SystemSpec) -> np.ndarray:
    """投影矩阵 P (R, |W|)，ξ = π_flat @ P"""
    projection = np.zeros((spec.joint_size, spec.w_alphabet.size))
    projection[np.arange(spec.joint_size), spec.w_index_xs.reshape(-1)] = 1.0
    return projection
