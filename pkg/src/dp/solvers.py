"""
动态规划求解器

- solve_finite_horizon：V_{T+1} ≡ 0，逐阶段回溯 V_t = min_a ℬ_a V_{t+1}，泄漏率 V_1(π_1)/T
- solve_infinite_horizon：相对值迭代，span(v_{n+1} − v_n) < tol 时停止，J 取 span 中点
- solve_iid_infinite：i.i.d. 需求时在 ξ 空间上的相对值迭代

网格点之间的回溯相互独立，按固定大小分块并行；每块的随机重启种子由
SeedSequence([seed, 阶段]) 派生，结果与线程数无关。
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.belief import Belief, BeliefKernel, BeliefSpace, kernel_for
from src.dp.backup import (
    DEFAULT_INNER_ITERS,
    DEFAULT_INNER_TOL,
    DEFAULT_RESTARTS,
    BackupResult,
    backup_batch,
)
from src.dp.grid import SimplexGrid, default_resolution
from src.dp.value import ValueFunction
from src.errors import ModelValidationError
from src.iidopt import solve_iid
from src.model import Pmf, SystemSpec
from src.policy import ActionA, ActionB, BeliefPolicy, DifferencePolicy, Policy
from src.progress_tracker import SolveStage, get_progress_tracker
from src.schemas import DPSolutionDocument
from src.settings import get_threads
from src.utils.infotheory import Units, convert_units

logger = logging.getLogger(__name__)

# 每个并行块的网格点数
GRID_CHUNK = 2048
DEFAULT_SPAN_TOL = 1e-6
DEFAULT_RVI_ITERS = 300


@dataclass
class FiniteHorizonSolution:
    """有限时长 DP 的结果，value_functions[t − 1] 对应 V_t"""

    spec: SystemSpec
    space: BeliefSpace
    grid: SimplexGrid
    horizon: int
    rate: float
    value_functions: list[ValueFunction]
    policy: Policy
    max_gradient_norm: float

    def to_document(self, units: Units = "bits") -> DPSolutionDocument:
        return DPSolutionDocument(
            space=self.space,
            resolution=self.grid.resolution,
            grid_size=self.grid.size,
            horizon=self.horizon,
            rate=convert_units(self.rate, units),
            units=units,
            max_gradient_norm=self.max_gradient_norm,
        )


@dataclass
class InfiniteHorizonSolution:
    """相对值迭代的结果；converged=False 时为部分结果"""

    spec: SystemSpec
    space: BeliefSpace
    grid: SimplexGrid
    J: float
    value_function: ValueFunction
    policy: Policy
    span: float
    iterations: int
    converged: bool
    max_gradient_norm: float

    def to_document(self, units: Units = "bits") -> DPSolutionDocument:
        return DPSolutionDocument(
            space=self.space,
            resolution=self.grid.resolution,
            grid_size=self.grid.size,
            rate=convert_units(self.J, units),
            units=units,
            converged=self.converged,
            iterations=self.iterations,
            span=convert_units(self.span, units),
            max_gradient_norm=self.max_gradient_norm,
        )


def _resolve_space(spec: SystemSpec, space: Optional[BeliefSpace], default: BeliefSpace) -> BeliefSpace:
    space = default if space is None else space
    if space == "difference" and not spec.is_iid:
        raise ModelValidationError("difference-space DP requires i.i.d. demand")
    return space


def _resolve_grid(kernel: BeliefKernel, grid: Optional[SimplexGrid], resolution: Optional[int]) -> SimplexGrid:
    if grid is not None:
        if grid.dimension != kernel.n_states:
            raise ModelValidationError(
                f"grid dimension {grid.dimension} does not match belief dimension {kernel.n_states}"
            )
        return grid
    k = default_resolution(kernel.n_states) if resolution is None else resolution
    if k < 2:
        raise ModelValidationError(f"grid resolution must be at least 2, got {k}")
    return SimplexGrid(kernel.n_states, k)


def _sweep(
    kernel: BeliefKernel,
    grid: SimplexGrid,
    continuation: Optional[ValueFunction],
    warm_start: Optional[np.ndarray],
    restarts: int,
    seed_entropy: list[int],
    tol: float,
    max_iters: int,
    threads: int,
) -> BackupResult:
    """对全部网格点做一次回溯"""
    bounds = [(lo, min(lo + GRID_CHUNK, grid.size)) for lo in range(0, grid.size, GRID_CHUNK)]
    seeds = np.random.SeedSequence(seed_entropy).spawn(len(bounds))

    def run(index: int) -> BackupResult:
        lo, hi = bounds[index]
        rng = np.random.Generator(np.random.Philox(seeds[index]))
        warm = None if warm_start is None else warm_start[lo:hi]
        return backup_batch(
            kernel, grid.points[lo:hi], continuation, warm, restarts, rng, tol, max_iters
        )

    with ThreadPoolExecutor(max_workers=threads) as executor:
        results = list(executor.map(run, range(len(bounds))))
    return BackupResult(
        values=np.concatenate([r.values for r in results]),
        actions=np.concatenate([r.actions for r in results]),
        gradient_norms=np.concatenate([r.gradient_norms for r in results]),
    )


def greedy_policy(
    spec: SystemSpec,
    space: BeliefSpace,
    stages: list[ValueFunction],
    refine: bool = False,
    restarts: int = 0,
) -> Policy:
    """
    由网格上存储的最优动作构造置信策略

    时刻 t 使用 stages[min(t, len(stages)) − 1] 的动作，按重心坐标插值；
    refine=True 时以插值动作为热启动，在精确置信处重新求解回溯。
    """
    kernel = kernel_for(spec, space)

    def batch(t: int, beliefs: np.ndarray) -> np.ndarray:
        index = min(max(t, 1), len(stages)) - 1
        actions = stages[index].interpolated_actions(beliefs)
        if not refine:
            return actions
        continuation = stages[index + 1] if index + 1 < len(stages) else None
        if len(stages) == 1 and stages[0].stage == 0:
            # 无限时长：连续值函数就是 v 本身
            continuation = stages[0]
        result = backup_batch(kernel, beliefs, continuation, actions, restarts)
        return result.actions

    stationary = len(stages) == 1
    if space == "difference":

        def single_b(t: int, xi: Pmf) -> ActionB:
            return ActionB(spec, batch(t, xi.probs[None, :])[0])

        return DifferencePolicy(spec, single_b, batch_fn=batch, stationary=stationary)

    def single_a(t: int, belief: Belief) -> ActionA:
        return ActionA(spec, batch(t, belief.flat[None, :])[0].reshape(spec.table_shape_a))

    return BeliefPolicy(spec, single_a, batch_fn=batch, stationary=stationary)


def solve_finite_horizon(
    spec: SystemSpec,
    horizon: int,
    grid: Optional[SimplexGrid] = None,
    resolution: Optional[int] = None,
    space: Optional[BeliefSpace] = None,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
    tol: float = DEFAULT_INNER_TOL,
    max_iters: int = DEFAULT_INNER_ITERS,
    refine: bool = False,
    threads: Optional[int] = None,
) -> FiniteHorizonSolution:
    """
    有限时长逆向归纳

    Args:
        spec: 系统描述
        horizon: T
        grid: 置信网格（优先于 resolution）
        resolution: 网格分辨率，默认按维数选择
        space: "joint"（默认）或 "difference"（仅 i.i.d.）
        restarts: 每个网格点的随机重启次数
        seed: 随机重启的种子
        tol: 内层投影梯度范数阈值
        max_iters: 内层最大迭代次数
        refine: 贪心策略是否在精确置信处重新求解
        threads: 并行线程数，默认 BP_THREADS

    Returns:
        FiniteHorizonSolution，rate = V_1(π_1)/T（bits），在 π_1 处精确回溯

    Raises:
        BudgetExceededError: 网格超过 BP_GRID_MAX_POINTS
    """
    if horizon < 1:
        raise ValueError(f"horizon must be positive, got {horizon}")
    space = _resolve_space(spec, space, "joint")
    kernel = kernel_for(spec, space)
    grid = _resolve_grid(kernel, grid, resolution)
    workers = get_threads() if threads is None else max(1, threads)
    logger.info(f"Finite-horizon DP: {spec.describe()}, T={horizon}, space={space}, {grid.describe()}")

    tracker = get_progress_tracker()
    tracker.update_stage(SolveStage.DP_BACKUP, total_units=horizon, detail=grid.describe())

    stages: list[ValueFunction] = []
    continuation: Optional[ValueFunction] = None
    max_norm = 0.0
    for t in range(horizon, 0, -1):
        result = _sweep(
            kernel, grid, continuation, None, restarts, [seed, t], tol, max_iters, workers
        )
        max_norm = max(max_norm, result.max_gradient_norm)
        continuation = ValueFunction(spec, space, grid, result.values, result.actions, stage=t)
        stages.append(continuation)
        tracker.advance(1)
        logger.debug(f"stage {t}: V range [{result.values.min():.6f}, {result.values.max():.6f}]")
    stages.reverse()

    # π_1 处用 V_2 精确回溯，避免 V_1 的插值误差
    next_stage = stages[1] if horizon > 1 else None
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0])))
    start = backup_batch(kernel, kernel.initial(spec)[None, :], next_stage, None, restarts, rng, tol, max_iters)
    rate = float(start.values[0]) / horizon
    policy = greedy_policy(spec, space, stages, refine=refine)
    if max_norm >= tol:
        logger.warning(f"inner minimization reached |pg|={max_norm:.2e} on some grid points")
    logger.info(f"Finite-horizon rate V_1(pi_1)/T = {rate:.6f} bits")
    tracker.update_stage(SolveStage.COMPLETE)
    return FiniteHorizonSolution(spec, space, grid, horizon, rate, stages, policy, max_norm)


def _reference_belief(spec: SystemSpec, space: BeliefSpace) -> np.ndarray:
    """相对值迭代的锚点：ξ*（或 P_X ⊗ θ*），Markov 需求时取 平稳分布 ⊗ 均匀"""
    if spec.is_iid:
        solution = solve_iid(spec, track=False)
        if space == "difference":
            return solution.xi_star.probs
        return Belief.product(spec.demand_pmf, solution.theta_star).flat
    stationary = spec.demand_matrix.stationary()
    return Belief.product(stationary, Pmf.uniform(spec.battery_alphabet)).flat


def solve_infinite_horizon(
    spec: SystemSpec,
    space: Optional[BeliefSpace] = None,
    grid: Optional[SimplexGrid] = None,
    resolution: Optional[int] = None,
    tol: float = DEFAULT_SPAN_TOL,
    max_iters: int = DEFAULT_RVI_ITERS,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
    inner_tol: float = DEFAULT_INNER_TOL,
    inner_iters: int = DEFAULT_INNER_ITERS,
    threads: Optional[int] = None,
) -> InfiniteHorizonSolution:
    """
    平均代价问题的相对值迭代

    J + v(π) = min_a [ℬ_a v](π)。每轮 w = ℬ v，span = max(w − v) − min(w − v)；
    span < tol 时停止，J 取 (max + min)/2，v 减去锚点处的值。首轮使用随机重启，
    之后以上一轮动作热启动。

    Returns:
        InfiniteHorizonSolution；达到 max_iters 仍未收敛时 converged=False（并记录 WARNING）
    """
    space = _resolve_space(spec, space, "difference" if spec.is_iid else "joint")
    kernel = kernel_for(spec, space)
    grid = _resolve_grid(kernel, grid, resolution)
    workers = get_threads() if threads is None else max(1, threads)
    reference = grid.nearest(_reference_belief(spec, space))
    logger.info(
        f"Relative value iteration: {spec.describe()}, space={space}, {grid.describe()}, "
        f"tol={tol:.1e}"
    )

    tracker = get_progress_tracker()
    tracker.update_stage(SolveStage.DP_BACKUP, total_units=max_iters, detail=grid.describe())

    values = np.zeros(grid.size)
    actions: Optional[np.ndarray] = None
    span = np.inf
    J = 0.0
    max_norm = 0.0
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        continuation = ValueFunction(spec, space, grid, values)
        result = _sweep(
            kernel,
            grid,
            continuation,
            actions,
            restarts if actions is None else 0,
            [seed, iterations],
            inner_tol,
            inner_iters,
            workers,
        )
        difference = result.values - values
        span = float(difference.max() - difference.min())
        J = float(0.5 * (difference.max() + difference.min()))
        values = result.values - result.values[reference]
        actions = result.actions
        max_norm = result.max_gradient_norm
        tracker.advance(1)
        logger.debug(f"RVI iter {iterations}: J~{J:.6f}, span={span:.3e}")
        if span < tol:
            converged = True
            break

    value_function = ValueFunction(spec, space, grid, values, actions, stage=0)
    policy = greedy_policy(spec, space, [value_function])
    if converged:
        logger.info(f"RVI converged after {iterations} iterations: J = {J:.6f} bits")
    else:
        logger.warning(
            f"RVI did not converge in {max_iters} iterations (span={span:.3e}); returning partial result"
        )
    tracker.update_stage(SolveStage.COMPLETE)
    return InfiniteHorizonSolution(
        spec, space, grid, J, value_function, policy, span, iterations, converged, max_norm
    )


def solve_iid_infinite(
    spec: SystemSpec,
    grid: Optional[SimplexGrid] = None,
    resolution: Optional[int] = None,
    **kwargs,
) -> InfiniteHorizonSolution:
    """i.i.d. 需求下 ξ 空间上的平均代价 DP"""
    if not spec.is_iid:
        raise ModelValidationError("solve_iid_infinite requires i.i.d. demand")
    return solve_infinite_horizon(spec, space="difference", grid=grid, resolution=resolution, **kwargs)
