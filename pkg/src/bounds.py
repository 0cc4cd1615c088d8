"""
连续字母表的闭式界

需求 X ~ Unif[0, 1]，电池容量 B ≥ 2：
- 下界（熵幂不等式）：½ log2(1 + 1/B²)
- 电池状态均匀分布时的可达泄漏率：1/(2B ln 2)

W = S − X 的密度为梯形：
    ξ(w) = (1 + w)/B, w ∈ [−1, 0]；1/B, w ∈ [0, B − 1]；(B − w)/B, w ∈ [B − 1, B]
可达率等于 h(W) − log2 B，用数值积分和 Monte Carlo 两种方式独立核对。
"""

import logging
import math
from typing import Iterable, Optional

import numpy as np
from scipy import integrate
from scipy.special import entr

from src.errors import DomainError
from src.schemas import ContinuousBoundReport, QuadratureCheck

logger = logging.getLogger(__name__)

QUADRATURE_TOL = 1e-6


def _check_capacity(B: float) -> None:
    if not math.isfinite(B) or B < 2.0:
        error_msg = f"battery capacity must satisfy B >= 2, got {B}"
        logger.error(error_msg)
        raise DomainError(error_msg)


def epi_lower_bound(B: float) -> float:
    """½ log2(1 + 1/B²)（bits）"""
    _check_capacity(B)
    return 0.5 * math.log2(1.0 + 1.0 / B**2)


def uniform_achievable_rate(B: float) -> float:
    """1/(2B ln 2)（bits）"""
    _check_capacity(B)
    return 1.0 / (2.0 * B * math.log(2.0))


def difference_density(w: np.ndarray | float, B: float) -> np.ndarray:
    """S ~ Unif[0, B] 与 X ~ Unif[0, 1] 独立时 W = S − X 的密度"""
    w = np.asarray(w, dtype=float)
    density = np.where(w < 0.0, (1.0 + w) / B, np.where(w <= B - 1.0, 1.0 / B, (B - w) / B))
    return np.where((w >= -1.0) & (w <= B), density, 0.0)


def _pieces(B: float) -> list[tuple[float, float]]:
    return [(-1.0, 0.0), (0.0, B - 1.0), (B - 1.0, B)]


def _integrand(w: np.ndarray | float, B: float) -> np.ndarray:
    """−ξ log2 ξ"""
    return entr(difference_density(w, B)) / math.log(2.0)


def quadrature_rate(B: float, nodes: Optional[int] = None) -> tuple[float, float]:
    """
    数值积分计算 h(W) − log2 B

    Args:
        B: 电池容量
        nodes: None 时在三段上分别使用自适应 quad；否则使用 nodes 点 Gauss-Legendre

    Returns:
        (积分值, 误差估计)；固定阶规则的误差估计取与 2·nodes 点规则之差
    """
    _check_capacity(B)
    total = 0.0
    error = 0.0
    for lo, hi in _pieces(B):
        if nodes is None:
            value, piece_error = integrate.quad(_integrand, lo, hi, args=(B,), epsabs=1e-13, epsrel=1e-13)
        else:
            value, _ = integrate.fixed_quad(_integrand, lo, hi, args=(B,), n=nodes)
            refined, _ = integrate.fixed_quad(_integrand, lo, hi, args=(B,), n=2 * nodes)
            piece_error = abs(refined - value)
        total += value
        error += piece_error
    return total - math.log2(B), error


def monte_carlo_rate(B: float, samples: int, seed: int) -> tuple[float, float]:
    """
    采样 W = S − X 估计 −E[log2 ξ(W)] − log2 B

    Returns:
        (估计值, 标准误差)
    """
    _check_capacity(B)
    rng = np.random.Generator(np.random.Philox(seed))
    w = rng.uniform(0.0, B, size=samples) - rng.uniform(0.0, 1.0, size=samples)
    terms = -np.log2(difference_density(w, B)) - math.log2(B)
    stderr = float(terms.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
    return float(terms.mean()), stderr


def monte_carlo_continuous_check(
    B: float,
    samples: int = 100_000,
    seed: int = 0,
    nodes: Optional[int] = None,
) -> QuadratureCheck:
    """
    用数值积分（以及 Monte Carlo）核对 uniform_achievable_rate

    数值积分与闭式解之差超过 1e-6 时 sufficient=False（例如 1 点求积）。
    """
    closed_form = uniform_achievable_rate(B)
    value, error = quadrature_rate(B, nodes)
    sufficient = abs(value - closed_form) <= QUADRATURE_TOL
    mc_estimate, mc_stderr = (None, None)
    if samples > 0:
        mc_estimate, mc_stderr = monte_carlo_rate(B, samples, seed)
    if not sufficient:
        logger.warning(
            f"quadrature with nodes={nodes} misses the closed form by {abs(value - closed_form):.3e}"
        )
    return QuadratureCheck(
        B=B,
        closed_form=closed_form,
        quadrature=value,
        quadrature_error=error,
        nodes=nodes,
        sufficient=sufficient,
        mc_estimate=mc_estimate,
        mc_stderr=mc_stderr,
        samples=max(samples, 0),
    )


def bound_report(B: float) -> ContinuousBoundReport:
    lower = epi_lower_bound(B)
    achievable = uniform_achievable_rate(B)
    return ContinuousBoundReport(B=B, lower=lower, achievable=achievable, gap=achievable - lower)


def bound_table(B_values: Iterable[float]) -> list[ContinuousBoundReport]:
    """对一组 B 计算上下界"""
    rows = [bound_report(float(B)) for B in B_values]
    logger.info(f"Computed continuous bounds for {len(rows)} capacities")
    return rows


def capacity_range(start: float, stop: float, step: float) -> list[float]:
    """start, start + step, …, ≤ stop（按步数生成，避免浮点累积）"""
    if step <= 0:
        raise DomainError(f"step must be positive, got {step}")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 12) for i in range(max(count, 0))]
