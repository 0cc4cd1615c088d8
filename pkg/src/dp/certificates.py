"""
值函数的数值证书

- verify_concavity：随机检验插值值函数的凹性，容差为网格插值误差 ε_grid
- verify_dp_converse：i.i.d. 需求下以 v(ξ) = H(ξ) 检验平均代价最优性不等式
  I(b; ξ) + Σ_y P(y) H(φ̃(ξ, y, b)) − H(ξ) ≥ J*
"""

import logging
from typing import Optional

import numpy as np

from src.belief import difference_kernel
from src.dp.value import ValueFunction
from src.errors import ModelValidationError
from src.model import SystemSpec
from src.policy import ActionB
from src.schemas import ConcavityReport, ConverseReport
from src.utils.infotheory import entropy, mutual_information
from src.utils.simplex import sample_masked_dirichlet

logger = logging.getLogger(__name__)

CONVERSE_TOLERANCE = 1e-9


def interpolation_tolerance(V: ValueFunction) -> float:
    """
    ε_grid = (d − 1) · max |V(p + δ) + V(p − δ) − 2V(p)|，δ = (e_i − e_j)/k

    最大值取遍所有网格点和所有坐标对。
    """
    grid = V.grid
    d = grid.dimension
    if d == 1:
        return 1e-12
    counts = grid.counts
    largest = 0.0
    for i in range(d):
        for j in range(d):
            if i == j:
                continue
            step = np.zeros(d, dtype=np.int64)
            step[i], step[j] = 1, -1
            plus = counts + step
            minus = counts - step
            valid = np.all(plus >= 0, axis=1) & np.all(minus >= 0, axis=1)
            if not valid.any():
                continue
            second = (
                V.values[grid.rank_counts(plus[valid])]
                + V.values[grid.rank_counts(minus[valid])]
                - 2.0 * V.values[valid]
            )
            largest = max(largest, float(np.abs(second).max()))
    return (d - 1) * largest + 1e-12


def verify_concavity(V: ValueFunction, trials: int = 500, seed: int = 0) -> ConcavityReport:
    """
    随机检验 V(λπ₁ + (1−λ)π₂) ≥ λV(π₁) + (1−λ)V(π₂) − ε_grid

    Args:
        V: 网格值函数
        trials: 随机三元组 (π₁, π₂, λ) 的个数
        seed: 随机种子

    Returns:
        ConcavityReport，violations 为超过容差的样本数
    """
    rng = np.random.Generator(np.random.Philox(seed))
    d = V.grid.dimension
    first = rng.dirichlet(np.ones(d), size=trials)
    second = rng.dirichlet(np.ones(d), size=trials)
    lam = rng.uniform(0.0, 1.0, size=trials)
    mixed = lam[:, None] * first + (1.0 - lam[:, None]) * second
    chord = lam * V(first) + (1.0 - lam) * V(second)
    gaps = chord - V(mixed)
    tolerance = interpolation_tolerance(V)
    violations = int(np.sum(gaps > tolerance))
    report = ConcavityReport(
        trials=trials,
        violations=violations,
        tolerance=tolerance,
        max_violation=float(gaps.max(initial=0.0)),
        passed=violations == 0,
    )
    logger.info(f"Concavity check: {violations}/{trials} violations (eps={tolerance:.3e})")
    return report


def converse_slack(
    spec: SystemSpec,
    xis: np.ndarray,
    tables: np.ndarray,
    j_star: float,
) -> np.ndarray:
    """
    批量计算 I(b; ξ) + Σ_y P(y) H(φ̃(ξ, y, b)) − H(ξ) − J*（bits）

    零概率的 y 分支权重为 0。
    """
    kernel = difference_kernel(spec)
    xis = np.atleast_2d(xis)
    tables = np.asarray(tables, dtype=float)
    if tables.ndim == 2:
        tables = np.broadcast_to(tables, (xis.shape[0],) + tables.shape)
    probabilities, updated = kernel.update_all(xis, tables)
    future = np.einsum("ny,ny->n", probabilities, entropy(updated, "bits", axis=-1))
    return (
        np.atleast_1d(mutual_information(xis, tables, "bits"))
        + future
        - np.atleast_1d(entropy(xis, "bits", axis=-1))
        - j_star
    )


def verify_dp_converse(
    spec: SystemSpec,
    J_star: float,
    samples: int = 1000,
    seed: int = 0,
    xi_star: Optional[np.ndarray] = None,
    b_star: Optional[ActionB] = None,
) -> ConverseReport:
    """
    在随机 (ξ, b) 上检验 [ℬ̃_b H](ξ) − H(ξ) ≥ J*

    Args:
        spec: i.i.d. 需求系统
        J_star: 单字母最优值（bits）
        samples: 随机样本数
        seed: 随机种子
        xi_star, b_star: 可选，给出时额外计算等号情形的余量
    """
    if not spec.is_iid:
        raise ModelValidationError("the DP converse check needs i.i.d. demand")
    rng = np.random.Generator(np.random.Philox(seed))
    n_w = spec.w_alphabet.size
    xis = rng.dirichlet(np.ones(n_w), size=samples)
    tables = sample_masked_dirichlet(rng, spec.feasibility_mask_w, size=samples)
    slack = converse_slack(spec, xis, tables, J_star)

    equality = None
    if xi_star is not None and b_star is not None:
        equality = float(converse_slack(spec, np.asarray(xi_star)[None, :], b_star.table, J_star)[0])

    violations = int(np.sum(slack < -CONVERSE_TOLERANCE))
    passed = violations == 0 and (equality is None or abs(equality) < CONVERSE_TOLERANCE)
    report = ConverseReport(
        trials=samples,
        J_star=J_star,
        min_slack=float(slack.min()),
        equality_slack=equality,
        violations=violations,
        passed=passed,
    )
    logger.info(
        f"DP converse: min slack {report.min_slack:.3e} over {samples} samples, "
        f"equality slack {equality}"
    )
    return report
