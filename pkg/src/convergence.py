"""
强可达性验证

结构化策略 b 下，提升链 U_t = (S_t, Y_{t−1}) 是有限状态 Markov 链，Y_t 是它的确定性函数。
- lifted_chain / observation_matrices：构造提升链与观测矩阵 M(z)
- subrectangular_certificate：沿"充电 m_s 次、放电 m_s 次"的观测序列检验乘积矩阵是否子矩形
- empirical_convergence：从不同的初始电池分布出发，精确传播 E[θ_t]，并用 Monte Carlo
  估计 Cesàro 平均泄漏 (1/T) Σ_t E[I(b; ξ_t)]
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import numpy as np

from src.belief import theta_to_xi
from src.errors import ModelValidationError
from src.leakage import iid_single_letter_rate, monte_carlo_leakage
from src.model import Alphabet, Pmf, SystemSpec, TransitionMatrix
from src.policy import ConstantB
from src.progress_tracker import SolveStage, get_progress_tracker
from src.schemas import ConvergenceReport, ConvergenceRun, SubrectangularityReport
from src.settings import get_threads
from src.utils.infotheory import Units, convert_units

logger = logging.getLogger(__name__)

DEFAULT_TV_TOL = 1e-3
DEFAULT_LEAKAGE_TOL = 0.01


def _require_iid(spec: SystemSpec) -> None:
    if not spec.is_iid:
        raise ModelValidationError("the lifted battery/output chain needs i.i.d. demand")


def lifted_index(spec: SystemSpec, s: int, y: int) -> int:
    """U = S × Y 上的下标 u = s·|Y| + y"""
    return s * spec.consumption_alphabet.size + y


def lifted_chain(spec: SystemSpec, b: ConstantB) -> TransitionMatrix:
    """
    提升链 U_t = (S_t, Y_{t−1}) 的转移矩阵

    P((s, ·) → (s', y)) = Σ_x P_X(x) b(y | s − x) 1{s' = s + y − x}
    """
    _require_iid(spec)
    demand = spec.demand_pmf.probs
    n_s = spec.battery_alphabet.size
    n_y = spec.consumption_alphabet.size
    table = b.b.table
    w_lo = spec.w_alphabet.lo
    row = np.zeros((n_s, n_s * n_y))
    for s in range(n_s):
        for x, p_x in enumerate(demand):
            if p_x == 0.0:
                continue
            w_index = s - x - w_lo
            for y in range(n_y):
                s_next = s + y - x
                if table[w_index, y] > 0.0 and 0 <= s_next < n_s:
                    row[s, lifted_index(spec, s_next, y)] += p_x * table[w_index, y]
    # 转移不依赖上一时刻的 y
    rows = np.repeat(row, n_y, axis=0)
    return TransitionMatrix(Alphabet(0, n_s * n_y - 1), rows)


def observation_matrices(spec: SystemSpec, chain: TransitionMatrix) -> np.ndarray:
    """M[z]_{ij} = P_{ij}·1{g(j) = z}，g(s, y) = y；返回形状 (|Y|, |U|, |U|)"""
    n_y = spec.consumption_alphabet.size
    outputs = np.arange(chain.alphabet.size) % n_y
    return np.stack([np.where(outputs[None, :] == z, chain.rows, 0.0) for z in range(n_y)])


def is_subrectangular(matrix: np.ndarray) -> bool:
    """非零矩阵中所有非零行的支撑集相同（等价于交叉元素非零）"""
    support = np.asarray(matrix) > 0.0
    nonzero_rows = support[support.any(axis=1)]
    if nonzero_rows.shape[0] == 0:
        return False
    return bool(np.all(nonzero_rows == nonzero_rows[0]))


def default_word(spec: SystemSpec) -> list[int]:
    """m_s 次消耗 1（充电）后接 m_s 次消耗 0（放电）"""
    charge = 1 if spec.consumption_alphabet.hi >= 1 else 0
    return [charge] * spec.ms + [0] * spec.ms


def subrectangular_certificate(
    spec: SystemSpec,
    b: ConstantB,
    word: Optional[Sequence[int]] = None,
) -> tuple[list[int], np.ndarray, SubrectangularityReport]:
    """
    检验 ∏_t M(z_t) 是否子矩形

    Args:
        spec: i.i.d. 需求系统
        b: 常数差值策略（通常为 b*）
        word: 观测序列，默认 default_word(spec)；空序列对应单位矩阵

    Returns:
        (word, 乘积矩阵, 报告)；ok=False 时报告标记为 inconclusive（不意味着发散）
    """
    word = default_word(spec) if word is None else [int(z) for z in word]
    chain = lifted_chain(spec, b)
    matrices = observation_matrices(spec, chain)
    product = np.eye(chain.alphabet.size)
    flags: list[bool] = []
    for z in word:
        if not 0 <= z < matrices.shape[0]:
            raise ModelValidationError(f"observation symbol {z} outside the consumption alphabet")
        product = product @ matrices[z]
        flags.append(is_subrectangular(product))
    ok = is_subrectangular(product)
    report = SubrectangularityReport(
        word=word,
        ok=ok,
        size=chain.alphabet.size,
        prefix_flags=flags,
        inconclusive=not ok,
    )
    logger.info(f"Subrectangularity for word {word}: {'ok' if ok else 'inconclusive'}")
    return word, product, report


def battery_marginal_step(spec: SystemSpec, b: ConstantB, theta: np.ndarray) -> np.ndarray:
    """E[θ_{t+1}](s') = Σ_{w + y = s'} ξ(w) b(y|w)，ξ = θ ∗ P_{−X}"""
    xi = np.convolve(theta, spec.demand_pmf.probs[::-1])
    joint = xi[:, None] * b.b.table
    w_values = spec.w_alphabet.values[:, None]
    y_values = spec.consumption_alphabet.values[None, :]
    s_next = np.broadcast_to(w_values + y_values, joint.shape)
    inside = (s_next >= 0) & (s_next <= spec.ms)
    theta_next = np.zeros(spec.battery_alphabet.size)
    np.add.at(theta_next, s_next[inside], joint[inside])
    return theta_next


def _run_from(
    spec: SystemSpec,
    b: ConstantB,
    init: Pmf,
    target: Pmf,
    horizon: int,
    tol: float,
    samples: int,
    seed: int,
    units: Units,
) -> ConvergenceRun:
    theta = init.probs.copy()
    history: list[float] = []
    first_hit: Optional[int] = None
    for t in range(1, horizon + 1):
        theta = battery_marginal_step(spec, b, theta)
        distance = float(0.5 * np.abs(theta - target.probs).sum())
        history.append(distance)
        if first_hit is None and distance < tol:
            first_hit = t

    target_leakage = iid_single_letter_rate(b.b, theta_to_xi(target, spec.demand_pmf))
    report = monte_carlo_leakage(
        spec.with_initial_battery(init), b, horizon, samples, seed, units="bits", threads=1, track=False
    )
    return ConvergenceRun(
        initial_theta=init.to_list(),
        tv_distance=history[-1],
        tv_history=history,
        reached_tolerance=history[-1] < tol,
        steps_to_tolerance=first_hit,
        cesaro_leakage=convert_units(report.total_rate, units),
        cesaro_ci=convert_units(report.ci_halfwidth or 0.0, units),
        target_leakage=convert_units(target_leakage, units),
    )


def empirical_convergence(
    spec: SystemSpec,
    b: ConstantB,
    theta_inits: Sequence[Pmf],
    horizon: int = 300,
    metric_tol: float = DEFAULT_TV_TOL,
    target: Optional[Pmf] = None,
    samples: int = 2000,
    seed: int = 0,
    leakage_tol: float = DEFAULT_LEAKAGE_TOL,
    units: Units = "bits",
    threads: Optional[int] = None,
) -> ConvergenceReport:
    """
    从多个初始电池分布出发验证收敛

    Args:
        spec: i.i.d. 需求系统
        b: 结构化策略（target 省略时使用 b.theta 作为 θ°）
        theta_inits: 初始电池分布列表
        horizon: T
        metric_tol: E[θ_T] 与 θ° 的全变差容差
        target: θ°
        samples: 估计 Cesàro 平均泄漏的 Monte Carlo 路径数
        seed: 随机种子（第 i 个初始分布使用 seed + i）
        leakage_tol: Cesàro 平均泄漏与 I(b; ξ°) 的容差（再加上置信区间半宽）

    Returns:
        ConvergenceReport；未达到容差时如实报告最终距离，不抛异常
    """
    _require_iid(spec)
    target = b.theta if target is None else target
    if target is None:
        raise ModelValidationError("empirical_convergence needs the invariant battery distribution")
    workers = get_threads() if threads is None else max(1, threads)
    logger.info(
        f"Empirical convergence: {spec.describe()}, {len(theta_inits)} initial distributions, T={horizon}"
    )
    tracker = get_progress_tracker()
    tracker.update_stage(SolveStage.CONVERGENCE, total_units=len(theta_inits), detail=f"T={horizon}")

    def run(index: int) -> ConvergenceRun:
        result = _run_from(
            spec, b, theta_inits[index], target, horizon, metric_tol, samples, seed + index, units
        )
        tracker.advance(1)
        return result

    with ThreadPoolExecutor(max_workers=workers) as executor:
        runs = list(executor.map(run, range(len(theta_inits))))

    tolerance = convert_units(leakage_tol, units)
    passed = all(
        run.reached_tolerance
        and abs(run.cesaro_leakage - run.target_leakage) <= tolerance + (run.cesaro_ci or 0.0)
        for run in runs
    )
    for run in runs:
        if not run.reached_tolerance:
            logger.warning(
                f"initial theta {run.initial_theta} ends at TV distance {run.tv_distance:.3e} >= {metric_tol:.1e}"
            )
    return ConvergenceReport(
        horizon=horizon,
        tolerance=metric_tol,
        theta_target=target.to_list(),
        runs=runs,
        units=units,
        passed=passed,
    )


def extreme_initial_distributions(spec: SystemSpec, count: int = 5, seed: int = 0) -> list[Pmf]:
    """两端的点分布、均匀分布以及若干随机 Dirichlet 分布"""
    battery = spec.battery_alphabet
    inits = [Pmf.point(battery, battery.lo), Pmf.point(battery, battery.hi), Pmf.uniform(battery)]
    rng = np.random.Generator(np.random.Philox(seed))
    while len(inits) < count:
        inits.append(Pmf.normalized(battery, rng.dirichlet(np.ones(battery.size))))
    return inits[:count]
