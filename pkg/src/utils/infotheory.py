"""
信息论基础函数

约定：
- 0·log 0 = 0（通过 scipy.special.entr 实现）
- 内部一律以 nats 计算，对外默认返回 bits
"""

from typing import Literal

import numpy as np
from scipy.special import entr

Units = Literal["bits", "nats"]

LN2 = float(np.log(2.0))


def convert_units(value_bits: float, units: Units = "bits") -> float:
    """把以 bits 表示的信息量转换为指定单位"""
    if units == "bits":
        return float(value_bits)
    if units == "nats":
        return float(value_bits) * LN2
    raise ValueError(f"unknown units: {units}")


def _scale(units: Units) -> float:
    if units == "bits":
        return 1.0 / LN2
    if units == "nats":
        return 1.0
    raise ValueError(f"unknown units: {units}")


def entropy(probs: np.ndarray, units: Units = "bits", axis: int = -1) -> np.ndarray | float:
    """
    计算离散分布的熵（沿 axis 求和）

    Args:
        probs: 概率向量或批量概率向量
        units: "bits" 或 "nats"
        axis: 求和的维度

    Returns:
        熵值，标量输入时返回 float
    """
    values = entr(np.asarray(probs, dtype=float)).sum(axis=axis) * _scale(units)
    if np.ndim(values) == 0:
        return float(values)
    return values


def mutual_information(
    prior: np.ndarray,
    channel: np.ndarray,
    units: Units = "bits",
) -> np.ndarray | float:
    """
    计算输入分布 prior 经过信道 channel 后的互信息 I(R;Y)

    支持批量：prior 形状 (..., R)，channel 形状 (..., R, nY)。
    使用 I = H(Y) − Σ_r prior(r) H(channel(·|r))，结果截断到非负。

    Args:
        prior: 输入分布
        channel: 条件分布，每行是一个输出分布
        units: "bits" 或 "nats"

    Returns:
        互信息，标量输入时返回 float
    """
    prior = np.asarray(prior, dtype=float)
    channel = np.asarray(channel, dtype=float)
    output = np.einsum("...r,...ry->...y", prior, channel)
    h_output = entr(output).sum(axis=-1)
    h_conditional = np.einsum("...r,...r->...", prior, entr(channel).sum(axis=-1))
    values = np.maximum(h_output - h_conditional, 0.0) * _scale(units)
    if np.ndim(values) == 0:
        return float(values)
    return values
