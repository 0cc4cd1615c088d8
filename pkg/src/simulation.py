"""
系统仿真

按联合分布 P(x_1) P(s_1) ∏ Q(x_t|x_{t−1}) q_t(y_t | …) 采样一条轨迹 (x^T, s^T, y^T)。
随机数使用计数器型的 Philox 生成器，给定种子完全可复现。
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from src.belief import Belief, filter_joint
from src.errors import ConservationError, SimulationError
from src.model import SystemSpec
from src.policy import Policy

logger = logging.getLogger(__name__)


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """基于 Philox 的随机数生成器"""
    return np.random.Generator(np.random.Philox(seed))


def _draw(rng: np.random.Generator, probs: np.ndarray) -> int:
    cumulative = np.cumsum(probs)
    index = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
    return min(index, probs.size - 1)


@dataclass(frozen=True)
class Trace:
    """仿真轨迹，三个数组长度均为 T"""

    x: np.ndarray
    s: np.ndarray
    y: np.ndarray

    @property
    def horizon(self) -> int:
        return int(self.x.size)

    def output_counts(self, n_outputs: int) -> np.ndarray:
        return np.bincount(self.y, minlength=n_outputs)

    def output_marginal(self, n_outputs: int) -> np.ndarray:
        """y 的经验分布"""
        if self.horizon == 0:
            return np.zeros(n_outputs)
        return self.output_counts(n_outputs) / self.horizon

    def to_csv(self, path: str | Path) -> None:
        """导出 CSV，表头 t,x,s,y（t 从 1 开始）"""
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["t", "x", "s", "y"])
            for t in range(self.horizon):
                writer.writerow([t + 1, int(self.x[t]), int(self.s[t]), int(self.y[t])])


def simulate(spec: SystemSpec, policy: Policy, horizon: int, seed: int) -> Trace:
    """
    采样一条长度为 horizon 的轨迹

    Args:
        spec: 系统描述
        policy: 充放电策略（任意类别，包括 Q_A）
        horizon: 时长 T，0 返回空轨迹
        seed: 随机种子

    Returns:
        Trace；每一步都满足守恒方程

    Raises:
        SimulationError: 策略给出不可行的消耗，携带出错的时间步
    """
    if horizon < 0:
        raise ValueError(f"horizon must be non-negative, got {horizon}")
    xs = np.zeros(horizon, dtype=np.int64)
    ss = np.zeros(horizon, dtype=np.int64)
    ys = np.zeros(horizon, dtype=np.int64)
    if horizon == 0:
        return Trace(xs, ss, ys)

    rng = make_rng(seed)
    Q = spec.demand_matrix
    x = _draw(rng, spec.initial_demand.probs)
    s = _draw(rng, spec.initial_battery.probs)
    belief = Belief.initial(spec) if policy.requires_belief else None

    for t in range(horizon):
        xs[t], ss[t] = x, s
        probs = policy.output_distribution(t + 1, xs[: t + 1], ss[: t + 1], ys[:t], belief)
        y = _draw(rng, np.asarray(probs, dtype=float))
        try:
            s_next = spec.step(s, x, y)
        except ConservationError as e:
            error_msg = f"policy emitted infeasible consumption at step {t + 1}: {e}"
            logger.error(error_msg)
            raise SimulationError(error_msg, step=t + 1) from e
        ys[t] = y
        if belief is not None:
            belief = filter_joint(belief, y, policy.action(t + 1, ys[:t], belief), Q)
        x = _draw(rng, Q.rows[x])
        s = s_next

    logger.debug(f"Simulated {horizon} steps for {spec.describe()} with {policy.kind} policy")
    return Trace(xs, ss, ys)
