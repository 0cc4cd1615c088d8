"""
泄漏率评估

L_T = (1/T) I(X^T, S_1; Y^T) 可分解为逐步代价之和：
    L_T = (1/T) Σ_t E[ I(a_t; π_t) ]
其中 π_t 是给定 y^{t−1} 的置信。精确评估按层展开 y 历史树，Monte Carlo 沿采样路径
平均解析的逐步代价（Rao-Blackwell 化）。

i.i.d. 需求且策略能在差值空间给出动作时，自动在 ξ 空间评估（状态数 |W| 而不是 |X||S|）。
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import numpy as np

from src.belief import Belief, BeliefKernel, BeliefSpace, XiBelief, kernel_for
from src.errors import BudgetExceededError, PolicyClassError
from src.model import SystemSpec
from src.policy import ActionA, ActionB, Policy
from src.progress_tracker import SolveStage, progress_tracker_for
from src.schemas import LeakageReport
from src.settings import get_exact_max_nodes, get_mc_chunk, get_threads
from src.utils.infotheory import LN2, Units, convert_units, mutual_information

logger = logging.getLogger(__name__)

PRUNE_THRESHOLD = 1e-15
# 精确展开时每个并行块的节点数，固定分块保证结果与线程数无关
EXACT_CHUNK = 4096


def mi_of_action(a: ActionA, pi: Belief, units: Units = "bits") -> float:
    """
    I(a; π) = Σ π(x,s) a(y|x,s) log[ a(y|x,s) / Σ π(x̃,s̃) a(y|x̃,s̃) ]，0·log 0 = 0
    """
    return float(mutual_information(pi.flat, a.flat, units))


def iid_single_letter_rate(b: ActionB, xi: XiBelief, units: Units = "bits") -> float:
    """I(b; ξ) = I(W; Y)，W ~ ξ，Y ~ b(·|W)"""
    return float(mutual_information(xi.probs, b.table, units))


def converse_floor(j_star_bits: float, spec: SystemSpec, horizon: int) -> float:
    """任意策略的有限时长下界 J* − log2|W| / T（bits）"""
    return j_star_bits - math.log2(spec.w_alphabet.size) / horizon


def evaluation_space(spec: SystemSpec, policy: Policy) -> BeliefSpace:
    """选择评估所用的置信空间"""
    if policy.policy_class == "Q_A":
        raise PolicyClassError(
            "full-history (Q_A) policies can only be evaluated by the brute-force oracle"
        )
    if spec.is_iid and "difference" in policy.spaces:
        return "difference"
    return "joint"


def _ergodicity_warnings(spec: SystemSpec) -> list[str]:
    if spec.is_iid:
        return []
    return spec.demand_matrix.ergodicity_warnings()


def _chunk_bounds(n: int, chunk: int) -> list[tuple[int, int]]:
    return [(start, min(start + chunk, n)) for start in range(0, n, chunk)]


def exact_leakage(
    spec: SystemSpec,
    policy: Policy,
    horizon: int,
    units: Units = "bits",
    max_nodes: Optional[int] = None,
    prune: float = PRUNE_THRESHOLD,
    threads: Optional[int] = None,
) -> LeakageReport:
    """
    逐层展开 y 历史树精确计算 L_T

    Args:
        spec: 系统描述
        policy: Q_B 或更细的策略
        horizon: T
        units: "bits" 或 "nats"
        max_nodes: 分支树节点预算，默认 BP_EXACT_MAX_NODES
        prune: 概率低于该值的分支被剪枝，剪掉的质量记录在报告中
        threads: 并行线程数，默认 BP_THREADS

    Returns:
        LeakageReport(method="exact")

    Raises:
        BudgetExceededError: 分支树超过预算（应改用 monte_carlo_leakage）
        PolicyClassError: Q_A 策略
    """
    if horizon < 1:
        raise ValueError(f"horizon must be positive, got {horizon}")
    space = evaluation_space(spec, policy)
    kernel = kernel_for(spec, space)
    budget = get_exact_max_nodes() if max_nodes is None else max_nodes
    workers = get_threads() if threads is None else max(1, threads)
    logger.info(
        f"Exact leakage: {spec.describe()}, policy={policy.kind}, T={horizon}, space={space}"
    )

    beliefs = kernel.initial(spec)[None, :]
    weights = np.ones(1)
    histories = np.zeros((1, 0), dtype=np.int64)
    per_step: list[float] = []
    pruned_mass = 0.0
    total_nodes = 0
    n_outputs = kernel.n_outputs

    with ThreadPoolExecutor(max_workers=workers) as executor:
        for t in range(1, horizon + 1):
            total_nodes += beliefs.shape[0]
            if total_nodes > budget:
                error_msg = (
                    f"exact leakage tree exceeds budget at t={t}; use monte_carlo_leakage instead"
                )
                logger.error(error_msg)
                raise BudgetExceededError(error_msg, required=total_nodes, allowed=budget)

            def expand(bounds: tuple[int, int], t: int = t) -> tuple[float, np.ndarray, np.ndarray]:
                lo, hi = bounds
                hist = histories[lo:hi] if policy.requires_history else None
                actions = np.asarray(policy.tables(t, hist, beliefs[lo:hi], space), dtype=float)
                costs = mutual_information(beliefs[lo:hi], actions, "nats")
                cost = float(np.dot(weights[lo:hi], np.atleast_1d(costs)))
                if t == horizon:
                    return cost, np.empty(0), np.empty(0)
                probabilities, updated = kernel.update_all(beliefs[lo:hi], actions)
                return cost, probabilities, updated

            results = list(executor.map(expand, _chunk_bounds(beliefs.shape[0], EXACT_CHUNK)))
            per_step.append(sum(cost for cost, _, _ in results) / LN2)
            if t == horizon:
                break

            probabilities = np.concatenate([p for _, p, _ in results])
            updated = np.concatenate([u for _, _, u in results])
            child_weights = weights[:, None] * probabilities
            keep = child_weights > prune
            pruned_mass += float(child_weights[~keep].sum())
            parent, y = np.nonzero(keep)
            beliefs = updated[parent, y]
            weights = child_weights[parent, y]
            histories = np.concatenate([histories[parent], y[:, None]], axis=1)

    per_step_units = [convert_units(v, units) for v in per_step]
    report = LeakageReport(
        horizon=horizon,
        per_step=per_step_units,
        total_rate=float(np.mean(per_step_units)),
        units=units,
        method="exact",
        sample_count=total_nodes,
        pruned_mass=pruned_mass,
        error_bound=convert_units(pruned_mass * math.log2(n_outputs), units),
        space=space,
        warnings=_ergodicity_warnings(spec),
    )
    logger.info(f"Exact leakage L_T = {report.total_rate:.6f} {units} ({total_nodes} nodes)")
    return report


def _sample_outputs(rng: np.random.Generator, probabilities: np.ndarray) -> np.ndarray:
    cumulative = np.cumsum(probabilities, axis=1)
    draws = rng.random(probabilities.shape[0]) * cumulative[:, -1]
    outputs = (draws[:, None] >= cumulative).sum(axis=1)
    return np.minimum(outputs, probabilities.shape[1] - 1)


def _simulate_chunk(
    spec: SystemSpec,
    policy: Policy,
    kernel: BeliefKernel,
    space: BeliefSpace,
    horizon: int,
    n_paths: int,
    seed_sequence: np.random.SeedSequence,
) -> np.ndarray:
    """一块路径的逐步代价矩阵 (n_paths, T)，单位 nats"""
    rng = np.random.Generator(np.random.Philox(seed_sequence))
    beliefs = np.tile(kernel.initial(spec), (n_paths, 1))
    histories = np.zeros((n_paths, 0), dtype=np.int64)
    costs = np.zeros((n_paths, horizon))
    for t in range(1, horizon + 1):
        hist = histories if policy.requires_history else None
        actions = np.asarray(policy.tables(t, hist, beliefs, space), dtype=float)
        if actions.shape[0] != n_paths:
            actions = np.broadcast_to(actions[0], (n_paths,) + actions.shape[1:])
        costs[:, t - 1] = mutual_information(beliefs, actions, "nats")
        if t == horizon:
            break
        probabilities = kernel.predictive(beliefs, actions)
        outputs = _sample_outputs(rng, probabilities)
        _, beliefs = kernel.update_observed(beliefs, actions, outputs)
        if policy.requires_history:
            histories = np.concatenate([histories, outputs[:, None]], axis=1)
    return costs


def monte_carlo_leakage(
    spec: SystemSpec,
    policy: Policy,
    horizon: int,
    samples: int,
    seed: int,
    units: Units = "bits",
    threads: Optional[int] = None,
    chunk: Optional[int] = None,
    track: bool = True,
) -> LeakageReport:
    """
    沿采样的 y 路径平均解析代价 I(a_t; π_t) 估计 L_T

    路径按固定大小分块，每块用 SeedSequence(seed).spawn 派生的独立种子，
    结果与线程数无关。track=False 时不更新全局进度。

    Returns:
        LeakageReport(method="monte_carlo")，ci_halfwidth = 1.96·stderr
    """
    if horizon < 1 or samples < 1:
        raise ValueError(f"horizon and samples must be positive, got T={horizon}, N={samples}")
    space = evaluation_space(spec, policy)
    kernel = kernel_for(spec, space)
    chunk_size = get_mc_chunk() if chunk is None else max(1, chunk)
    workers = get_threads() if threads is None else max(1, threads)
    bounds = _chunk_bounds(samples, chunk_size)
    seeds = np.random.SeedSequence(seed).spawn(len(bounds))
    logger.info(
        f"Monte Carlo leakage: {spec.describe()}, policy={policy.kind}, T={horizon}, "
        f"N={samples}, chunks={len(bounds)}, space={space}"
    )

    tracker = progress_tracker_for(track)
    tracker.update_stage(SolveStage.EVALUATION, total_units=len(bounds), detail=f"T={horizon}, N={samples}")

    def run(index: int) -> np.ndarray:
        lo, hi = bounds[index]
        costs = _simulate_chunk(spec, policy, kernel, space, horizon, hi - lo, seeds[index])
        tracker.advance(1)
        return costs

    with ThreadPoolExecutor(max_workers=workers) as executor:
        blocks = list(executor.map(run, range(len(bounds))))
    costs = np.concatenate(blocks, axis=0) / LN2

    path_rates = costs.mean(axis=1)
    estimate = float(path_rates.mean())
    stderr = float(path_rates.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
    per_step = costs.mean(axis=0)
    report = LeakageReport(
        horizon=horizon,
        per_step=[convert_units(v, units) for v in per_step],
        total_rate=convert_units(estimate, units),
        units=units,
        method="monte_carlo",
        ci_halfwidth=convert_units(1.96 * stderr, units),
        sample_count=samples,
        space=space,
        warnings=_ergodicity_warnings(spec),
    )
    logger.info(
        f"Monte Carlo L_T = {report.total_rate:.6f} ± {report.ci_halfwidth:.6f} {units}"
    )
    return report
