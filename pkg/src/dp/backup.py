"""
Bellman 回溯

[ℬ_a V](π) = I(a; π) + Σ_y P(y) V(φ(π, y, a))

对一批置信同时求 min_a [ℬ_a V](π)：在可行动作集合（各行是带掩码的概率单纯形）上做
投影梯度 + Armijo 回溯，从等概率动作、可选的热启动动作以及若干随机动作出发，
每个置信保留最好的结果。零概率分支的权重为 0，不参与求和。

连续值函数项使用插值在所在小单形上的线性表示 α：P(y) V(u_y / P(y)) = α_y·u_y，
因此它对 a(y|r) 的偏导为 π(r) (K_y α_y)[r]。
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from src.belief import Belief, BeliefKernel, XiBelief, difference_kernel, joint_kernel
from src.dp.value import ValueFunction
from src.errors import ModelValidationError
from src.model import SystemSpec, TransitionMatrix
from src.policy import ActionA, ActionB
from src.utils.infotheory import LN2, mutual_information
from src.utils.simplex import project_masked_simplex, sample_masked_dirichlet

logger = logging.getLogger(__name__)

DEFAULT_RESTARTS = 3
DEFAULT_INNER_TOL = 1e-6
DEFAULT_INNER_ITERS = 200
ARMIJO_SIGMA = 1e-4
MAX_BACKTRACKS = 40
# 计算 log a 时的下限
LOG_FLOOR = 1e-12
# 置信低于该值的行不参与优化
ACTIVE_BELIEF = 1e-15


@dataclass
class BackupResult:
    """批量回溯结果：values (N,)，actions (N, R, |Y|)，gradient_norms (N,)"""

    values: np.ndarray
    actions: np.ndarray
    gradient_norms: np.ndarray

    @property
    def max_gradient_norm(self) -> float:
        return float(self.gradient_norms.max(initial=0.0))


class BackupOutcome(NamedTuple):
    """单个置信的回溯结果"""

    value: float
    action: ActionA | ActionB
    gradient_norm: float


def backup_objective(
    kernel: BeliefKernel,
    beliefs: np.ndarray,
    actions: np.ndarray,
    continuation: Optional[ValueFunction],
) -> np.ndarray:
    """[ℬ_a V](π)（bits），批量计算"""
    values = np.atleast_1d(mutual_information(beliefs, actions, "bits"))
    if continuation is None:
        return values
    probabilities, updated = kernel.update_all(beliefs, actions)
    n, n_y, n_states = updated.shape
    future = continuation.grid.interpolate(continuation.values, updated.reshape(n * n_y, n_states))
    return values + np.einsum("ny,ny->n", probabilities, future.reshape(n, n_y))


def _scaled_gradient(
    kernel: BeliefKernel,
    beliefs: np.ndarray,
    actions: np.ndarray,
    continuation: Optional[ValueFunction],
) -> np.ndarray:
    """∂[ℬ_a V]/∂a(y|r) 除以 π(r)；π(r) 过小的行置 0"""
    predictive = kernel.predictive(beliefs, actions)
    ratio = np.maximum(actions, LOG_FLOOR) / np.maximum(predictive, LOG_FLOOR)[:, None, :]
    gradient = np.log(ratio) / LN2
    if continuation is not None:
        _, updated = kernel.update_all(beliefs, actions)
        n, n_y, n_states = updated.shape
        alpha = continuation.grid.local_gradient(
            continuation.values, updated.reshape(n * n_y, n_states)
        ).reshape(n, n_y, n_states)
        gradient = gradient + np.einsum("yrs,nys->nry", kernel.transitions, alpha)
    active = beliefs > ACTIVE_BELIEF
    return np.where(active[:, :, None], gradient, 0.0)


def _projected_gradient_norm(actions: np.ndarray, gradient: np.ndarray, mask: np.ndarray) -> np.ndarray:
    step = actions - project_masked_simplex(actions - gradient, mask)
    return np.sqrt((step**2).sum(axis=(1, 2)))


def minimize_actions(
    kernel: BeliefKernel,
    beliefs: np.ndarray,
    initial: np.ndarray,
    continuation: Optional[ValueFunction],
    tol: float = DEFAULT_INNER_TOL,
    max_iters: int = DEFAULT_INNER_ITERS,
) -> BackupResult:
    """
    从给定初始动作出发的批量投影梯度下降

    Args:
        kernel: 滤波核
        beliefs: (N, R)
        initial: (N, R, |Y|) 可行初始动作
        continuation: 下一阶段值函数，None 表示 V ≡ 0
        tol: 投影梯度范数阈值
        max_iters: 最大迭代次数
    """
    mask = kernel.mask
    actions = project_masked_simplex(initial, mask)
    values = backup_objective(kernel, beliefs, actions, continuation)
    steps = np.ones(beliefs.shape[0])
    done = np.zeros(beliefs.shape[0], dtype=bool)
    norms = np.full(beliefs.shape[0], np.inf)

    for _ in range(max_iters):
        gradient = _scaled_gradient(kernel, beliefs, actions, continuation)
        norms = _projected_gradient_norm(actions, gradient, mask)
        done |= norms < tol
        if done.all():
            break
        pending = np.flatnonzero(~done)
        trial_steps = steps[pending]
        accepted = np.zeros(pending.size, dtype=bool)
        for _ in range(MAX_BACKTRACKS):
            todo = np.flatnonzero(~accepted)
            if todo.size == 0:
                break
            rows = pending[todo]
            candidate = project_masked_simplex(
                actions[rows] - trial_steps[todo, None, None] * gradient[rows], mask
            )
            candidate_values = backup_objective(kernel, beliefs[rows], candidate, continuation)
            weighted = beliefs[rows][:, :, None] * gradient[rows]
            decrease = np.einsum("nry,nry->n", weighted, candidate - actions[rows])
            ok = candidate_values <= values[rows] + ARMIJO_SIGMA * decrease
            improved = rows[ok]
            actions[improved] = candidate[ok]
            values[improved] = candidate_values[ok]
            accepted[todo[ok]] = True
            trial_steps[todo[~ok]] *= 0.5
        # 回溯失败说明已无下降方向（在数值精度内）
        done[pending[~accepted]] = True
        steps[pending] = np.minimum(trial_steps * 2.0, 1e3)
    logger.debug(
        f"inner minimization: {beliefs.shape[0]} beliefs, max |pg|={norms.max(initial=0.0):.2e}"
    )
    return BackupResult(values, actions, norms)


def equiprobable_actions(kernel: BeliefKernel, n: int) -> np.ndarray:
    mask = kernel.mask.astype(float)
    rows = mask / mask.sum(axis=1, keepdims=True)
    return np.broadcast_to(rows, (n,) + rows.shape).copy()


def backup_batch(
    kernel: BeliefKernel,
    beliefs: np.ndarray,
    continuation: Optional[ValueFunction],
    warm_start: Optional[np.ndarray] = None,
    restarts: int = DEFAULT_RESTARTS,
    rng: Optional[np.random.Generator] = None,
    tol: float = DEFAULT_INNER_TOL,
    max_iters: int = DEFAULT_INNER_ITERS,
) -> BackupResult:
    """
    批量求 min_a [ℬ_a V](π)

    初始点依次为：热启动动作（若给出）、等概率动作、restarts 个随机 Dirichlet 动作，
    每个置信保留目标值最小的结果。
    """
    beliefs = np.atleast_2d(np.asarray(beliefs, dtype=float))
    n = beliefs.shape[0]
    starts = [] if warm_start is None else [np.array(warm_start, dtype=float)]
    starts.append(equiprobable_actions(kernel, n))
    if restarts > 0:
        rng = np.random.Generator(np.random.Philox(0)) if rng is None else rng
        for _ in range(restarts):
            starts.append(sample_masked_dirichlet(rng, kernel.mask, size=n))

    best: Optional[BackupResult] = None
    for initial in starts:
        result = minimize_actions(kernel, beliefs, initial, continuation, tol, max_iters)
        if best is None:
            best = result
            continue
        better = result.values < best.values - 1e-14
        best.values[better] = result.values[better]
        best.actions[better] = result.actions[better]
        best.gradient_norms[better] = result.gradient_norms[better]
    assert best is not None
    return best


def bellman_backup(
    pi: Belief | XiBelief,
    V_next: Optional[ValueFunction],
    Q: Optional[TransitionMatrix] = None,
    spec: Optional[SystemSpec] = None,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
    tol: float = DEFAULT_INNER_TOL,
    max_iters: int = DEFAULT_INNER_ITERS,
) -> BackupOutcome:
    """
    单个置信的 Bellman 回溯 min_a [ℬ_a V_next](π)

    Args:
        pi: 联合置信 Belief（返回 ActionA）或差值置信 ξ（返回 ActionB）
        V_next: 下一阶段值函数，None 表示 V ≡ 0（此时需要 spec）
        Q: 可选的需求转移矩阵，覆盖 spec 中的需求规律
        spec: 系统描述，默认取 V_next.spec

    Returns:
        BackupOutcome(最小值（bits）, 最优动作, 投影梯度范数)
    """
    if spec is None:
        if V_next is None:
            raise ModelValidationError("bellman_backup needs a spec when V_next is omitted")
        spec = V_next.spec
    if isinstance(pi, Belief):
        kernel = joint_kernel(spec, Q)
        belief = pi.flat
    else:
        kernel = difference_kernel(spec)
        belief = pi.probs
    if V_next is not None and V_next.n_states != kernel.n_states:
        raise ModelValidationError(
            f"value function lives on {V_next.n_states} states, belief on {kernel.n_states}"
        )
    rng = np.random.Generator(np.random.Philox(seed))
    result = backup_batch(kernel, belief[None, :], V_next, None, restarts, rng, tol, max_iters)
    table = result.actions[0]
    if isinstance(pi, Belief):
        action: ActionA | ActionB = ActionA(spec, table.reshape(spec.table_shape_a))
    else:
        action = ActionB(spec, table)
    if result.gradient_norms[0] >= tol:
        logger.warning(
            f"Bellman backup stopped with |pg|={result.gradient_norms[0]:.2e} >= {tol:.1e}; "
            "returning the best iterate"
        )
    return BackupOutcome(float(result.values[0]), action, float(result.gradient_norms[0]))
