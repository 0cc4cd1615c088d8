"""
i.i.d. 需求下的单字母优化

J* = min_{θ ∈ 𝒫_S} I(S − X; X) = min_θ { H(ξ) − H(θ) }，S ⊥ X，ξ = θ ∗ P_{−X}

目标函数在 θ 上严格凸，最优解位于单纯形内部。求解器：
1. 从均匀 θ 出发的指数梯度（熵镜像下降）+ Armijo 回溯，迭代始终保持在内部
2. 在单纯形切空间上的 Newton 精修（解析 Hessian），把投影梯度范数压到 tol 以下
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import entr

from src.belief import XiBelief, theta_to_xi
from src.errors import DomainError
from src.leakage import iid_single_letter_rate
from src.model import Alphabet, Pmf, SystemSpec
from src.policy import ConstantB, structured_policy
from src.progress_tracker import SolveStage, progress_tracker_for
from src.schemas import ConvexityReport, PropertyCertificate, PropertyCheck, SolutionDocument
from src.utils.infotheory import LN2, Units, convert_units

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITERS = 20_000
# 指数梯度阶段的目标精度，之后交给 Newton 精修
MIRROR_STAGE_TOL = 1e-6
ARMIJO_SIGMA = 1e-4


# ===== 目标函数与导数（原始数组，单位 nats） =====
def objective_values(theta: np.ndarray, demand: np.ndarray) -> float:
    """H(ξ) − H(θ)（nats），θ 可以是未归一化的正向量（有限差分使用）"""
    xi = np.convolve(theta, demand[::-1])
    return float(entr(xi).sum() - entr(theta).sum())


def gradient_values(theta: np.ndarray, demand: np.ndarray) -> np.ndarray:
    """∂/∂θ(s) = log θ(s) − Σ_x P_X(x) log ξ(s − x)（nats）"""
    xi = np.convolve(theta, demand[::-1])
    # ξ 的下标 k 对应 w = k − m_x；correlate 给出 Σ_x P_X(x) log ξ[s − x + m_x]
    log_xi = np.log(np.where(xi > 0, xi, 1.0))
    expected = np.correlate(log_xi, demand[::-1], mode="valid")
    return np.log(theta) - expected


def hessian_values(theta: np.ndarray, demand: np.ndarray) -> np.ndarray:
    """Hessian = diag(1/θ) − Aᵀ diag(1/ξ) A，A[w, s] = P_X(s − w)（nats）"""
    n_s = theta.size
    n_x = demand.size
    xi = np.convolve(theta, demand[::-1])
    A = np.zeros((xi.size, n_s))
    for s in range(n_s):
        for x in range(n_x):
            A[s - x + n_x - 1, s] = demand[x]
    inverse_xi = np.where(xi > 0, 1.0 / np.where(xi > 0, xi, 1.0), 0.0)
    return np.diag(1.0 / theta) - A.T @ (A * inverse_xi[:, None])


def _projected_norm(gradient: np.ndarray) -> float:
    """内部点处投影到单纯形切空间的梯度范数"""
    return float(np.linalg.norm(gradient - gradient.mean()))


def _scale(units: Units) -> float:
    return 1.0 / LN2 if units == "bits" else 1.0


def objective(theta: Pmf, demand: Pmf, units: Units = "bits") -> float:
    """I(S − X; X) = H(ξ) − H(θ)，ξ = theta_to_xi(θ, P_X)"""
    return max(objective_values(theta.probs, demand.probs), 0.0) * _scale(units)


def gradient(theta: Pmf, demand: Pmf, units: Units = "bits") -> np.ndarray:
    """
    目标函数对 θ 的解析梯度

    Raises:
        DomainError: θ 位于单纯形边界（log 0）
    """
    if np.any(theta.probs <= 0):
        error_msg = "gradient is undefined on the simplex boundary (theta has zero entries)"
        logger.error(error_msg)
        raise DomainError(error_msg)
    return gradient_values(theta.probs, demand.probs) * _scale(units)


@dataclass(frozen=True, eq=False)
class SingleLetterSolution:
    """单字母问题的解，J_star 以 bits 表示"""

    theta_star: Pmf
    xi_star: XiBelief
    J_star: float
    b_star: ConstantB
    iterations: int
    gradient_norm: float
    converged: bool
    demand: Pmf
    spec: SystemSpec

    @property
    def J_star_nats(self) -> float:
        return self.J_star * LN2

    def to_document(self, units: Units = "bits") -> SolutionDocument:
        return SolutionDocument(
            mx=self.spec.mx,
            my=self.spec.my,
            ms=self.spec.ms,
            theta_star=self.theta_star.to_list(),
            xi_star=self.xi_star.to_list(),
            w_lo=self.spec.w_alphabet.lo,
            b_star=[[float(v) for v in row] for row in self.b_star.b.table],
            J_star=convert_units(self.J_star, units),
            J_star_bits=self.J_star,
            J_star_nats=self.J_star_nats,
            units=units,
            iterations=self.iterations,
            gradient_norm=self.gradient_norm,
            converged=self.converged,
        )


def _mirror_descent(
    theta: np.ndarray,
    demand: np.ndarray,
    tol: float,
    max_iters: int,
) -> tuple[np.ndarray, int]:
    """指数梯度 + Armijo 回溯，返回 (θ, 迭代次数)"""
    value = objective_values(theta, demand)
    step = 1.0
    iterations = 0
    for iterations in range(1, max_iters + 1):
        grad = gradient_values(theta, demand)
        if _projected_norm(grad) < tol:
            break
        direction = grad - grad @ theta
        while True:
            candidate = theta * np.exp(-step * (grad - grad.max()))
            candidate /= candidate.sum()
            new_value = objective_values(candidate, demand)
            decrease = ARMIJO_SIGMA * step * float(theta @ direction**2)
            if new_value <= value - decrease or step < 1e-12:
                break
            step *= 0.5
        theta, value = candidate, new_value
        step = min(step * 2.0, 1e3)
        if iterations % 1000 == 0:
            logger.debug(f"mirror descent iter {iterations}: value={value:.12f}")
    return theta, iterations


def _newton_polish(
    theta: np.ndarray,
    demand: np.ndarray,
    tol: float,
    max_iters: int,
) -> tuple[np.ndarray, int]:
    """单纯形切空间上的阻尼 Newton 法"""
    n = theta.size
    iterations = 0
    for iterations in range(1, max_iters + 1):
        grad = gradient_values(theta, demand)
        norm = _projected_norm(grad)
        if norm < tol:
            break
        kkt = np.zeros((n + 1, n + 1))
        kkt[:n, :n] = hessian_values(theta, demand)
        kkt[:n, n] = 1.0
        kkt[n, :n] = 1.0
        rhs = np.concatenate([-grad, [0.0]])
        try:
            direction = np.linalg.solve(kkt, rhs)[:n]
        except np.linalg.LinAlgError:
            logger.warning("Newton system is singular; stopping polish")
            break
        alpha = 1.0
        while alpha > 1e-10:
            candidate = theta + alpha * direction
            if np.all(candidate > 0):
                candidate /= candidate.sum()
                if _projected_norm(gradient_values(candidate, demand)) < norm:
                    break
            alpha *= 0.5
        else:
            break
        theta = candidate
    return theta, iterations


def minimize(
    demand: Pmf,
    battery_alphabet: Alphabet,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    initial: Optional[Pmf] = None,
    consumption_alphabet: Optional[Alphabet] = None,
    track: bool = True,
) -> SingleLetterSolution:
    """
    求解 J* = min_θ I(S − X; X)

    Args:
        demand: 需求分布 P_X
        battery_alphabet: 电池字母表 S
        tol: 投影梯度范数（nats）的停止阈值
        max_iters: 最大迭代次数（两阶段合计）
        initial: 初始 θ（默认均匀分布）
        consumption_alphabet: Y（默认等于 X），决定 b* 表的列数
        track: 是否更新全局进度（嵌套调用时为 False）

    Returns:
        SingleLetterSolution；未收敛时 converged=False 并保留最佳迭代
    """
    tracker = progress_tracker_for(track)
    tracker.update_stage(SolveStage.SINGLE_LETTER, detail=f"|S|={battery_alphabet.size}")
    p_x = demand.probs
    theta = (
        np.full(battery_alphabet.size, 1.0 / battery_alphabet.size)
        if initial is None
        else np.clip(initial.probs, 1e-12, None) / np.clip(initial.probs, 1e-12, None).sum()
    )
    logger.info(f"Minimizing I(S-X;X): |X|={demand.support.size}, |S|={battery_alphabet.size}")

    theta, mirror_iters = _mirror_descent(theta, p_x, max(tol, MIRROR_STAGE_TOL), max_iters)
    theta, newton_iters = _newton_polish(theta, p_x, tol, max(1, max_iters - mirror_iters))
    norm = _projected_norm(gradient_values(theta, p_x))
    if norm >= tol:
        # Newton 失败时继续镜像下降
        theta, extra = _mirror_descent(theta, p_x, tol, max(1, max_iters - mirror_iters - newton_iters))
        newton_iters += extra
        norm = _projected_norm(gradient_values(theta, p_x))
    converged = norm < tol
    iterations = mirror_iters + newton_iters

    theta_star = Pmf.normalized(battery_alphabet, theta)
    spec = SystemSpec(
        demand_alphabet=demand.support,
        consumption_alphabet=consumption_alphabet or demand.support,
        battery_alphabet=battery_alphabet,
        demand_law=demand,
        initial_demand=demand,
        initial_battery=theta_star,
    )
    b_star = structured_policy(theta_star, demand, spec)
    solution = SingleLetterSolution(
        theta_star=theta_star,
        xi_star=theta_to_xi(theta_star, demand),
        J_star=objective(theta_star, demand, "bits"),
        b_star=b_star,
        iterations=iterations,
        gradient_norm=norm,
        converged=converged,
        demand=demand,
        spec=spec,
    )
    if converged:
        logger.info(f"J* = {solution.J_star:.6f} bits after {iterations} iterations (|pg|={norm:.2e})")
    else:
        logger.warning(
            f"single-letter solver stopped after {iterations} iterations with |pg|={norm:.2e} >= {tol:.1e}"
        )
    tracker.update_stage(SolveStage.COMPLETE)
    return solution


def solve_iid(
    spec: SystemSpec,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    track: bool = True,
) -> SingleLetterSolution:
    """对 i.i.d. 系统求解单字母问题（b* 使用 spec 的消耗字母表）"""
    return minimize(
        spec.demand_pmf,
        spec.battery_alphabet,
        tol=tol,
        max_iters=max_iters,
        consumption_alphabet=spec.consumption_alphabet,
        track=track,
    )


# ===== 性质证书 =====
def _interleaved_sequence(values: np.ndarray, center: int) -> np.ndarray:
    """μ(m*), μ(m*+1), μ(m*−1), μ(m*+2), μ(m*−2), …（字母表外取 0）"""
    n = values.size
    sequence = [values[center]]
    for k in range(1, n + 1):
        for index in (center + k, center - k):
            sequence.append(values[index] if 0 <= index < n else 0.0)
    return np.array(sequence)


def almost_symmetric_unimodal(values: np.ndarray, center: int, slack: float = 1e-8) -> bool:
    """交错序列单调不增"""
    sequence = _interleaved_sequence(values, center)
    return bool(np.all(np.diff(sequence) <= slack))


def symmetric_unimodal(values: np.ndarray, center: int, slack: float = 1e-8) -> bool:
    """μ(m*) ≥ μ(m*+1) = μ(m*−1) ≥ μ(m*+2) = μ(m*−2) ≥ …"""
    sequence = _interleaved_sequence(values, center)
    pairs_equal = np.all(np.abs(sequence[1::2] - sequence[2::2][: sequence[1::2].size]) <= slack)
    return bool(pairs_equal and almost_symmetric_unimodal(values, center, slack))


def interleaved_unimodal_chain(theta: np.ndarray, slack: float = 1e-8, equality_tol: float = 1e-6) -> bool:
    """
    最优 θ* 的交错序列：
    - m_s 偶数：θ(m*) ≥ θ(m*+1) = θ(m*−1) ≥ θ(m*+2) = θ(m*−2) ≥ …
    - m_s 奇数：θ(m*) = θ(m*+1) ≥ θ(m*−1) = θ(m*+2) ≥ θ(m*−2) = …
    其中 m* = ⌊m_s/2⌋
    """
    ms = theta.size - 1
    center = ms // 2
    sequence = _interleaved_sequence(theta, center)
    ordered = bool(np.all(np.diff(sequence) <= slack))
    start = 0 if ms % 2 == 1 else 1
    equal = all(
        abs(sequence[i] - sequence[i + 1]) <= equality_tol
        for i in range(start, sequence.size - 1, 2)
    )
    return ordered and equal


def certify_properties(
    solution: SingleLetterSolution,
    demand: Optional[Pmf] = None,
    symmetry_tol: float = 1e-6,
    chain_slack: float = 1e-8,
) -> PropertyCertificate:
    """
    最优解的数值性质证书

    - 内部性：θ* 所有分量 > 0
    - 输出不可区分：Σ_w ξ*(w) b*(y|w) = P_X(y)
    - 对称性：需求对称时 θ*(s) = θ*(m_s − s)
    - 近似对称单峰：需求关于 ⌊m_x/2⌋ 对称单峰时的交错序列
    """
    demand = solution.demand if demand is None else demand
    theta = solution.theta_star.probs
    checks: list[PropertyCheck] = []

    checks.append(
        PropertyCheck(
            name="interior",
            applicable=True,
            passed=bool(np.all(theta > 0)),
            value=float(theta.min()),
        )
    )

    marginal = solution.xi_star.probs @ solution.b_star.b.table
    deviation = float(np.abs(marginal[: demand.support.size] - demand.probs).max())
    deviation = max(deviation, float(np.abs(marginal[demand.support.size :]).sum()))
    checks.append(
        PropertyCheck(name="output_marginal", applicable=True, passed=deviation < 1e-9, value=deviation)
    )

    symmetric_demand = demand.is_symmetric()
    asymmetry = float(np.abs(theta - theta[::-1]).max())
    checks.append(
        PropertyCheck(
            name="symmetry",
            applicable=symmetric_demand,
            passed=asymmetry <= symmetry_tol if symmetric_demand else None,
            value=asymmetry,
        )
    )

    unimodal_demand = symmetric_unimodal(demand.probs, demand.support.hi // 2, slack=1e-12)
    chain_ok = interleaved_unimodal_chain(theta, slack=chain_slack, equality_tol=symmetry_tol)
    checks.append(
        PropertyCheck(
            name="almost_symmetric_unimodal",
            applicable=unimodal_demand,
            passed=chain_ok if unimodal_demand else None,
            value=None,
        )
    )

    single_letter = iid_single_letter_rate(solution.b_star.b, solution.xi_star)
    gap = abs(single_letter - solution.J_star)
    checks.append(
        PropertyCheck(name="single_letter_equality", applicable=True, passed=gap < 1e-9, value=gap)
    )

    all_passed = all(check.passed for check in checks if check.applicable)
    logger.info(f"Property certificate: {'PASS' if all_passed else 'FAIL'}")
    return PropertyCertificate(checks=checks, all_passed=all_passed)


def convexity_probe(
    demand: Pmf,
    battery_alphabet: Alphabet,
    trials: int = 1000,
    seed: int = 0,
    min_distance: float = 1e-3,
    min_slack: float = 1e-12,
) -> ConvexityReport:
    """
    随机检验严格凸性：f(λθ₁ + (1−λ)θ₂) < λf(θ₁) + (1−λ)f(θ₂)

    ‖θ₁ − θ₂‖ ≤ min_distance 的样本对只要求不等式非严格成立。
    """
    rng = np.random.Generator(np.random.Philox(seed))
    n = battery_alphabet.size
    failures = 0
    strict_trials = 0
    smallest_slack = math.inf
    for _ in range(trials):
        theta_1 = rng.dirichlet(np.ones(n))
        theta_2 = rng.dirichlet(np.ones(n))
        lam = float(rng.uniform(0.05, 0.95))
        mix = lam * theta_1 + (1 - lam) * theta_2
        slack = (
            lam * objective_values(theta_1, demand.probs)
            + (1 - lam) * objective_values(theta_2, demand.probs)
            - objective_values(mix, demand.probs)
        ) / LN2
        if np.linalg.norm(theta_1 - theta_2) > min_distance:
            strict_trials += 1
            smallest_slack = min(smallest_slack, slack)
            if slack <= min_slack:
                failures += 1
        elif slack < -1e-12:
            failures += 1

    reflected_gain = None
    if demand.is_symmetric() and n > 1:
        theta = rng.dirichlet(np.ones(n))
        midpoint = 0.5 * (theta + theta[::-1])
        reflected_gain = (objective_values(theta, demand.probs) - objective_values(midpoint, demand.probs)) / LN2

    report = ConvexityReport(
        trials=trials,
        strict_trials=strict_trials,
        failures=failures,
        min_slack=None if math.isinf(smallest_slack) else float(smallest_slack),
        reflected_midpoint_gain=reflected_gain,
        passed=failures == 0,
    )
    logger.info(f"Convexity probe: {trials} trials, {failures} failures")
    return report


def uniqueness_probe(
    demand: Pmf,
    battery_alphabet: Alphabet,
    starts: int = 2,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
) -> float:
    """从多个随机内部点出发求解，返回各解之间的最大差异"""
    rng = np.random.Generator(np.random.Philox(seed))
    solutions = []
    for _ in range(starts):
        initial = Pmf.normalized(battery_alphabet, rng.dirichlet(np.ones(battery_alphabet.size)))
        solution = minimize(demand, battery_alphabet, tol=tol, initial=initial, track=False)
        solutions.append(solution.theta_star.probs)
    return float(max(np.abs(a - b).max() for a in solutions for b in solutions))
