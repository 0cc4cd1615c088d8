"""
概率单纯形上的规则网格

网格点是 k 拆分为 d 个非负整数之和的全部组合，再除以 k。
点的编号使用组合数系统（累计坐标对应 d − 1 个递增的"隔板"位置），
查询点按 Freudenthal 剖分定位所在小单形，并给出重心坐标。
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from math import comb

import numpy as np

from src.errors import BudgetExceededError, ModelValidationError
from src.settings import get_grid_max_points

logger = logging.getLogger(__name__)


def grid_size(dimension: int, resolution: int) -> int:
    """C(k + d − 1, d − 1)"""
    return comb(resolution + dimension - 1, dimension - 1)


def default_resolution(dimension: int) -> int:
    """默认分辨率：d ≤ 3 取 40，d ≤ 6 取 12，其余取 6"""
    if dimension <= 3:
        return 40
    if dimension <= 6:
        return 12
    return 6


@dataclass(frozen=True, eq=False)
class SimplexGrid:
    """
    d 维概率单纯形上分辨率为 k 的网格

    Attributes:
        dimension: 坐标个数 d
        resolution: 分辨率 k
        max_points: 点数预算，默认 BP_GRID_MAX_POINTS
    """

    dimension: int
    resolution: int
    max_points: int = field(default_factory=get_grid_max_points)

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ModelValidationError(f"grid dimension must be positive, got {self.dimension}")
        if self.resolution < 1:
            raise ModelValidationError(f"grid resolution must be positive, got {self.resolution}")
        size = grid_size(self.dimension, self.resolution)
        if size > self.max_points:
            error_msg = (
                f"simplex grid d={self.dimension}, k={self.resolution} has {size} points"
            )
            logger.error(error_msg)
            raise BudgetExceededError(error_msg, required=size, allowed=self.max_points)

    @property
    def size(self) -> int:
        return grid_size(self.dimension, self.resolution)

    @cached_property
    def _binomials(self) -> np.ndarray:
        """_binomials[n, j] = C(n, j)"""
        k, d = self.resolution, self.dimension
        table = np.zeros((k + d + 1, d + 1), dtype=np.int64)
        for n in range(k + d + 1):
            for j in range(min(n, d) + 1):
                table[n, j] = comb(n, j)
        return table

    def rank_counts(self, counts: np.ndarray) -> np.ndarray:
        """整数组合 (..., d) → 网格编号"""
        counts = np.asarray(counts, dtype=np.int64)
        d = self.dimension
        if d == 1:
            return np.zeros(counts.shape[:-1], dtype=np.int64)
        bars = np.cumsum(counts[..., :-1], axis=-1) + np.arange(d - 1)
        return self._binomials[bars, np.arange(1, d)].sum(axis=-1)

    @cached_property
    def counts(self) -> np.ndarray:
        """全部网格点的整数坐标 (size, d)，第 i 行的编号为 i"""
        k, d = self.resolution, self.dimension
        if d == 1:
            return np.array([[k]], dtype=np.int64)
        # 每个 (d − 1) 元隔板集合对应一个组合
        bars = np.array(list(combinations(range(k + d - 1), d - 1)), dtype=np.int64)
        padded = np.concatenate(
            [np.full((bars.shape[0], 1), -1), bars, np.full((bars.shape[0], 1), k + d - 1)], axis=1
        )
        parts = np.diff(padded, axis=1) - 1
        ordered = np.empty_like(parts)
        ordered[self.rank_counts(parts)] = parts
        ordered.setflags(write=False)
        return ordered

    @cached_property
    def points(self) -> np.ndarray:
        """网格点的概率坐标 (size, d)"""
        points = self.counts / self.resolution
        points.setflags(write=False)
        return points

    def nearest(self, point: np.ndarray) -> int:
        """欧氏距离最近的网格点编号"""
        distances = np.linalg.norm(self.points - np.asarray(point, dtype=float), axis=1)
        return int(np.argmin(distances))

    def locate(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """
        Freudenthal 剖分下的小单形顶点与重心坐标

        Args:
            queries: (N, d) 概率向量

        Returns:
            (vertices, weights)：形状均为 (N, d)，vertices 为网格编号，weights 非负且和为 1
        """
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        n, d = queries.shape
        if d != self.dimension:
            raise ModelValidationError(f"queries have dimension {d}, grid has {self.dimension}")
        if d == 1:
            return np.zeros((n, 1), dtype=np.int64), np.ones((n, 1))

        k = self.resolution
        # 尾部累计坐标 y_i = k Σ_{j≥i} p_j，i = 1..d−1，单调不增且 ≤ k
        tails = k * np.cumsum(queries[:, ::-1], axis=1)[:, ::-1][:, 1:]
        tails = np.clip(np.minimum.accumulate(tails, axis=1), 0.0, float(k))
        base = np.minimum(np.floor(tails), k - 1).astype(np.int64)
        fractions = tails - base
        order = np.argsort(-fractions, axis=1, kind="stable")
        sorted_fractions = np.take_along_axis(fractions, order, axis=1)

        weights = np.empty((n, d))
        weights[:, 0] = 1.0 - sorted_fractions[:, 0]
        weights[:, 1:-1] = sorted_fractions[:, :-1] - sorted_fractions[:, 1:]
        weights[:, -1] = sorted_fractions[:, -1]
        weights = np.clip(weights, 0.0, None)
        weights /= weights.sum(axis=1, keepdims=True)

        # 第 j 个顶点在 base 基础上把前 j 个（按小数部分排序）坐标加 1
        steps = np.zeros((n, d, d - 1), dtype=np.int64)
        rows = np.arange(n)
        for j in range(1, d):
            steps[:, j] = steps[:, j - 1]
            steps[rows, j, order[:, j - 1]] += 1
        vertex_tails = base[:, None, :] + steps
        # 由累计坐标恢复组合：c_0 = k − y_1，c_i = y_i − y_{i+1}，c_{d−1} = y_{d−1}
        padded = np.concatenate(
            [np.full((n, d, 1), k), vertex_tails, np.zeros((n, d, 1), dtype=np.int64)], axis=2
        )
        vertex_counts = padded[:, :, :-1] - padded[:, :, 1:]
        return self.rank_counts(vertex_counts), weights

    def interpolate(self, values: np.ndarray, queries: np.ndarray) -> np.ndarray:
        """网格值的分片线性插值，values 形状 (size,) 或 (size, ...)"""
        vertices, weights = self.locate(queries)
        gathered = np.asarray(values)[vertices]
        return np.einsum("nd,nd...->n...", weights, gathered)

    def local_gradient(self, values: np.ndarray, queries: np.ndarray) -> np.ndarray:
        """
        查询点所在小单形上插值函数的线性表示 α：V(p) = α·p

        插值在每个小单形上是线性的，且顶点线性无关，因此 α 唯一。

        Returns:
            (N, d) 的 α 向量
        """
        vertices, _ = self.locate(queries)
        matrices = self.points[vertices]
        rhs = np.asarray(values, dtype=float)[vertices]
        return np.linalg.solve(matrices, rhs[..., None])[..., 0]

    def describe(self) -> str:
        return f"SimplexGrid(d={self.dimension}, k={self.resolution}, points={self.size})"
