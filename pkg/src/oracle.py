"""
穷举 oracle

在极小实例上枚举完整的联合分布 P(x^T, s_1, y^T)，用于：
- 直接计算 (1/T) I(X^T, S_1; Y^T)，校验逐步分解的精确评估
- 评估 Q_A（完整历史）策略
- 把 Q_A 策略压缩为 Q_B 策略：q_b(y | x_t, s_t, y^{t−1}) = P^{q_a}(Y_t = y | X_t, S_t, Y^{t−1})
"""

import logging
from collections import defaultdict
from typing import Optional

import numpy as np

from src.belief import Belief, filter_joint
from src.errors import BudgetExceededError
from src.model import SystemSpec
from src.policy import MemoryCompressedPolicy, Policy, smallest_feasible_rows
from src.utils.infotheory import Units, convert_units, entropy

logger = logging.getLogger(__name__)

# 穷举路径数上限
MAX_PATHS = 2_000_000

# 路径键：(xs, ss, ys)，三个等长元组
PathKey = tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]


def enumerate_joint(spec: SystemSpec, policy: Policy, horizon: int) -> dict[PathKey, float]:
    """
    枚举所有正概率路径 (x^T, s^T, y^T) 及其概率

    s_{t+1} 由守恒方程确定，因此路径概率即 P(x^T, s_1, y^T)。

    Raises:
        BudgetExceededError: 路径数超过 MAX_PATHS
    """
    Q = spec.demand_matrix.rows
    beliefs: dict[tuple[int, ...], Belief] = {}

    def belief_for(ys: tuple[int, ...], t: int) -> Optional[Belief]:
        if not policy.requires_belief:
            return None
        if ys not in beliefs:
            if not ys:
                beliefs[ys] = Belief.initial(spec)
            else:
                previous = belief_for(ys[:-1], t - 1)
                action = policy.action(t - 1, ys[:-1], previous)
                beliefs[ys] = filter_joint(previous, ys[-1], action, spec.demand_matrix)
        return beliefs[ys]

    paths: dict[PathKey, float] = {}
    for x in spec.demand_alphabet:
        for s in spec.battery_alphabet:
            p = spec.initial_demand.probs[x] * spec.initial_battery.probs[s]
            if p > 0:
                paths[((x,), (s,), ())] = p

    for t in range(1, horizon + 1):
        extended: dict[PathKey, float] = {}
        for (xs, ss, ys), p in paths.items():
            probs = policy.output_distribution(t, xs, ss, ys, belief_for(ys, t))
            for y in np.flatnonzero(probs > 0):
                y = int(y)
                py = p * float(probs[y])
                if t == horizon:
                    extended[(xs, ss, ys + (y,))] = py
                    continue
                s_next = spec.step(ss[-1], xs[-1], y)
                for x_next in np.flatnonzero(Q[xs[-1]] > 0):
                    extended[(xs + (int(x_next),), ss + (s_next,), ys + (y,))] = (
                        py * float(Q[xs[-1], x_next])
                    )
        if len(extended) > MAX_PATHS:
            raise BudgetExceededError("brute-force enumeration too large", len(extended), MAX_PATHS)
        paths = extended
    logger.debug(f"Enumerated {len(paths)} paths for T={horizon}")
    return paths


def _entropy_of(marginal: dict, units: Units) -> float:
    return float(entropy(np.fromiter(marginal.values(), dtype=float), units))


def brute_force_leakage(
    spec: SystemSpec,
    policy: Policy,
    horizon: int,
    units: Units = "bits",
) -> float:
    """
    直接由联合分布计算 (1/T) I(X^T, S_1; Y^T) = (1/T)[H(A) + H(Y^T) − H(A, Y^T)]，A = (X^T, S_1)
    """
    joint = enumerate_joint(spec, policy, horizon)
    private: dict = defaultdict(float)
    observed: dict = defaultdict(float)
    combined: dict = defaultdict(float)
    for (xs, ss, ys), p in joint.items():
        key = (xs, ss[0])
        private[key] += p
        observed[ys] += p
        combined[(key, ys)] += p
    information = (
        _entropy_of(private, "bits") + _entropy_of(observed, "bits") - _entropy_of(combined, "bits")
    )
    return convert_units(max(information, 0.0) / horizon, units)


def state_output_marginal(
    spec: SystemSpec,
    policy: Policy,
    horizon: int,
    t: int,
) -> dict[tuple[int, int, tuple[int, ...]], float]:
    """P(X_t, S_t, Y^t)，1 ≤ t ≤ horizon"""
    joint = enumerate_joint(spec, policy, horizon)
    marginal: dict = defaultdict(float)
    for (xs, ss, ys), p in joint.items():
        marginal[(xs[t - 1], ss[t - 1], ys[:t])] += p
    return dict(marginal)


def compress_history_policy(spec: SystemSpec, q_a: Policy, horizon: int) -> MemoryCompressedPolicy:
    """
    由任意策略（通常是 Q_A）构造 Q_B 策略

    q_b(y | x_t, s_t, y^{t−1}) = P^{q_a}(Y_t = y | X_t = x_t, S_t = s_t, Y^{t−1} = y^{t−1})
    条件概率为 0 的 (x_t, s_t, y^{t−1}) 填充最小可行 y。
    """
    joint = enumerate_joint(spec, q_a, horizon)
    n_y = spec.consumption_alphabet.size
    counts: dict[tuple[int, int, int, tuple[int, ...]], np.ndarray] = {}
    for (xs, ss, ys), p in joint.items():
        for t in range(1, horizon + 1):
            key = (t, xs[t - 1], ss[t - 1], ys[: t - 1])
            if key not in counts:
                counts[key] = np.zeros(n_y)
            counts[key][ys[t - 1]] += p
    fill = smallest_feasible_rows(spec.feasibility_mask_xs)

    def callback(t: int, x: int, s: int, history: tuple) -> np.ndarray:
        row = counts.get((t, x, s, tuple(history)))
        if row is None or row.sum() <= 0:
            return fill[x, s]
        return row / row.sum()

    logger.info(f"Compressed history policy into {len(counts)} (t, x, s, y^(t-1)) rows")
    return MemoryCompressedPolicy(spec, callback)
