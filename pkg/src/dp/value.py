"""
网格值函数

值与对应的最优动作都存储在 SimplexGrid 的网格点上，查询时做重心插值。
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from src.belief import BeliefSpace, kernel_for
from src.dp.grid import SimplexGrid
from src.errors import ModelValidationError
from src.model import SystemSpec
from src.schemas import ValueFunctionDocument

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ValueFunction:
    """
    置信单纯形上的值函数 V_t

    Attributes:
        spec: 系统描述
        space: "joint"（π 在 X×S 上）或 "difference"（ξ 在 W 上）
        grid: 网格
        values: (grid.size,) 网格点上的值（bits）
        actions: (grid.size, R, |Y|) 每个网格点的最优动作，可为 None
        stage: 时间下标 t，无限时长问题为 0
    """

    spec: SystemSpec
    space: BeliefSpace
    grid: SimplexGrid
    values: np.ndarray
    actions: Optional[np.ndarray] = None
    stage: int = 0

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.size,):
            raise ModelValidationError(
                f"value function needs {self.grid.size} values, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ModelValidationError("value function has non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.actions is not None:
            actions = np.array(self.actions, dtype=float)
            expected = (self.grid.size, self.grid.dimension, self.spec.consumption_alphabet.size)
            if actions.shape != expected:
                raise ModelValidationError(f"actions must have shape {expected}, got {actions.shape}")
            actions.setflags(write=False)
            object.__setattr__(self, "actions", actions)

    @classmethod
    def zeros(cls, spec: SystemSpec, space: BeliefSpace, grid: SimplexGrid, stage: int = 0) -> "ValueFunction":
        """V ≡ 0（终端条件）"""
        return cls(spec, space, grid, np.zeros(grid.size), stage=stage)

    @classmethod
    def from_function(
        cls,
        spec: SystemSpec,
        space: BeliefSpace,
        grid: SimplexGrid,
        fn,
        stage: int = 0,
    ) -> "ValueFunction":
        """在网格点上对 fn(points (N, d)) -> (N,) 取值"""
        return cls(spec, space, grid, np.asarray(fn(grid.points), dtype=float), stage=stage)

    @property
    def n_states(self) -> int:
        return self.grid.dimension

    def __call__(self, beliefs: np.ndarray) -> np.ndarray | float:
        """插值求值，单个置信返回 float"""
        beliefs = np.asarray(beliefs, dtype=float)
        values = self.grid.interpolate(self.values, np.atleast_2d(beliefs))
        if beliefs.ndim == 1:
            return float(values[0])
        return values

    def local_gradient(self, beliefs: np.ndarray) -> np.ndarray:
        return self.grid.local_gradient(self.values, beliefs)

    def interpolated_actions(self, beliefs: np.ndarray) -> np.ndarray:
        """
        网格动作的重心组合 (N, R, |Y|)

        可行动作的凸组合仍然可行，行和仍为 1。
        """
        if self.actions is None:
            raise ModelValidationError("value function carries no actions")
        vertices, weights = self.grid.locate(np.atleast_2d(beliefs))
        return np.einsum("nd,ndry->nry", weights, self.actions[vertices])

    # ===== 序列化 =====
    def to_document(self) -> ValueFunctionDocument:
        actions = [] if self.actions is None else self.actions.tolist()
        return ValueFunctionDocument(
            space=self.space,
            resolution=self.grid.resolution,
            dimension=self.grid.dimension,
            stage=self.stage,
            counts=self.grid.counts.tolist(),
            values=[float(v) for v in self.values],
            actions=actions,
        )

    def save(self, path: str | Path) -> None:
        payload = self.to_document().model_dump()
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info(f"Saved value function ({self.grid.describe()}, stage {self.stage}) to {path}")

    @classmethod
    def load(cls, path: str | Path, spec: SystemSpec) -> "ValueFunction":
        """
        从 JSON 读取值函数

        Raises:
            ModelValidationError: 网格与系统不匹配或网格点顺序不一致
        """
        document = ValueFunctionDocument.model_validate_json(Path(path).read_text(encoding="utf-8"))
        expected_dimension = kernel_for(spec, document.space).n_states
        if document.dimension != expected_dimension:
            raise ModelValidationError(
                f"value function dimension {document.dimension} does not match the "
                f"{document.space} belief space of size {expected_dimension}"
            )
        grid = SimplexGrid(document.dimension, document.resolution)
        if not np.array_equal(np.asarray(document.counts), grid.counts):
            raise ModelValidationError("stored grid points are not in canonical order")
        actions = np.asarray(document.actions, dtype=float) if document.actions else None
        return cls(spec, document.space, grid, np.asarray(document.values), actions, document.stage)
