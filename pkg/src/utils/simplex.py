"""
概率单纯形上的投影与采样

所有函数都支持掩码：mask 为 False 的坐标固定为 0，只在剩余坐标构成的子单纯形上操作。
"""

import numpy as np


def project_masked_simplex(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """
    欧氏投影到（带掩码的）概率单纯形，按最后一维批量处理

    采用排序阈值算法：找到 τ 使 Σ max(v_i − τ, 0) = 1。

    Args:
        values: 形状 (..., n) 的待投影向量
        mask: 与 values 同形（或可广播）的布尔掩码，每行至少一个 True

    Returns:
        投影结果，被掩码的坐标为 0
    """
    values = np.asarray(values, dtype=float)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), values.shape)
    masked = np.where(mask, values, -np.inf)
    ordered = -np.sort(-masked, axis=-1)
    finite = np.isfinite(ordered)
    cumulative = np.cumsum(np.where(finite, ordered, 0.0), axis=-1)
    ranks = np.arange(1, values.shape[-1] + 1)
    candidates = finite & (ordered - (cumulative - 1.0) / ranks > 0)
    # 满足条件的最大下标
    rho = values.shape[-1] - 1 - np.argmax(candidates[..., ::-1], axis=-1)
    cum_rho = np.take_along_axis(cumulative, rho[..., None], axis=-1)[..., 0]
    tau = (cum_rho - 1.0) / (rho + 1)
    projected = np.maximum(values - tau[..., None], 0.0)
    return np.where(mask, projected, 0.0)


def sample_masked_dirichlet(
    rng: np.random.Generator,
    mask: np.ndarray,
    size: int | None = None,
    concentration: float = 1.0,
) -> np.ndarray:
    """
    在掩码支撑上采样 Dirichlet(concentration) 分布

    Args:
        rng: numpy 随机数生成器
        mask: 形状 (..., n) 的布尔掩码，每行至少一个 True
        size: 额外的批量维度（放在最前面）
        concentration: Dirichlet 参数

    Returns:
        形状 (size, ..., n) 或 (..., n) 的概率向量
    """
    mask = np.asarray(mask, dtype=bool)
    shape = mask.shape if size is None else (size,) + mask.shape
    draws = rng.gamma(concentration, 1.0, size=shape)
    draws = np.where(mask, draws, 0.0)
    totals = draws.sum(axis=-1, keepdims=True)
    # gamma 采样几乎不可能全部为 0，退化时回到均匀分布
    uniform = np.where(mask, 1.0, 0.0)
    uniform = uniform / uniform.sum(axis=-1, keepdims=True)
    safe = np.where(totals > 0, draws / np.where(totals > 0, totals, 1.0), uniform)
    return safe
