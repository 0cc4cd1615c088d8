"""
系统模型 - 字母表、概率分布、电池动态与可行集

核心类型：
- Alphabet: 连续整数字母表 {lo, …, hi}
- Pmf: 有限字母表上的概率质量函数（需求分布 P_X、电池分布 θ、差值分布 ξ）
- TransitionMatrix: Markov 需求的转移矩阵 Q
- SystemSpec: 完整的系统描述（X、Y、S 字母表，需求规律，初始分布）

守恒方程：s_{t+1} = s_t + y_t − x_t，差值 w = s − x 决定可行消耗集合
𝒴∘(w) = { y ∈ Y : w + y ∈ S }。
"""

import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components
from scipy.stats import binom

from src.errors import ConservationError, DomainError, ModelValidationError
from src.schemas import DemandDocument, MarkovDemandDocument, SpecDocument
from src.utils.infotheory import Units, entropy

logger = logging.getLogger(__name__)

PMF_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Alphabet:
    """连续整数字母表 {lo, …, hi}"""

    lo: int
    hi: int

    def __post_init__(self) -> None:
        if int(self.lo) != self.lo or int(self.hi) != self.hi:
            raise ModelValidationError(f"alphabet bounds must be integers: [{self.lo}, {self.hi}]")
        if self.lo > self.hi:
            raise ModelValidationError(f"empty alphabet: lo={self.lo} > hi={self.hi}")

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1

    @property
    def values(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)

    def contains(self, value: int) -> bool:
        return self.lo <= value <= self.hi

    def index(self, value: int) -> int:
        """符号在数组中的下标"""
        if not self.contains(value):
            raise DomainError(f"{value} is outside alphabet [{self.lo}:{self.hi}]")
        return int(value) - self.lo

    def issubset(self, other: "Alphabet") -> bool:
        return other.lo <= self.lo and self.hi <= other.hi

    def __iter__(self) -> Iterator[int]:
        return iter(range(self.lo, self.hi + 1))

    def __len__(self) -> int:
        return self.size

    def __str__(self) -> str:
        return f"[{self.lo}:{self.hi}]"


def _validate_distribution(probs: np.ndarray, what: str, tolerance: float = PMF_TOLERANCE) -> None:
    if not np.all(np.isfinite(probs)):
        raise ModelValidationError(f"{what} contains non-finite entries")
    if np.any(probs < 0):
        raise ModelValidationError(f"{what} has negative entries: min={probs.min():.3e}")
    total = probs.sum(axis=-1)
    if np.any(np.abs(total - 1.0) > tolerance):
        worst = float(np.max(np.abs(total - 1.0)))
        raise ModelValidationError(f"{what} does not sum to 1 (max deviation {worst:.3e})")


@dataclass(frozen=True, eq=False)
class Pmf:
    """有限整数字母表上的概率质量函数，probs 构造后只读"""

    support: Alphabet
    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.array(self.probs, dtype=float).reshape(-1)
        if probs.shape != (self.support.size,):
            raise ModelValidationError(
                f"pmf over {self.support} needs {self.support.size} entries, got {probs.size}"
            )
        _validate_distribution(probs, f"pmf over {self.support}")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    # ===== 构造方法 =====
    @classmethod
    def normalized(cls, support: Alphabet, weights: Sequence[float] | np.ndarray) -> "Pmf":
        """对非负权重归一化（用于消除累积误差的 renormalize 操作）"""
        weights = np.clip(np.asarray(weights, dtype=float).reshape(-1), 0.0, None)
        total = weights.sum()
        if total <= 0 or not np.isfinite(total):
            raise ModelValidationError(f"cannot normalize weights over {support}: total={total}")
        return cls(support, weights / total)

    @classmethod
    def uniform(cls, support: Alphabet) -> "Pmf":
        return cls(support, np.full(support.size, 1.0 / support.size))

    @classmethod
    def point(cls, support: Alphabet, value: int) -> "Pmf":
        probs = np.zeros(support.size)
        probs[support.index(value)] = 1.0
        return cls(support, probs)

    @classmethod
    def binomial(cls, n: int, p: float) -> "Pmf":
        """Binomial(n, p) 分布，支撑为 {0, …, n}"""
        if n < 0 or not 0.0 <= p <= 1.0:
            raise ModelValidationError(f"invalid binomial parameters n={n}, p={p}")
        support = Alphabet(0, n)
        return cls.normalized(support, binom.pmf(support.values, n, p))

    def renormalize(self) -> "Pmf":
        return Pmf.normalized(self.support, self.probs)

    # ===== 查询 =====
    def prob(self, value: int) -> float:
        if not self.support.contains(value):
            return 0.0
        return float(self.probs[value - self.support.lo])

    def entropy(self, units: Units = "bits") -> float:
        return float(entropy(self.probs, units))

    def mean(self) -> float:
        return float(self.probs @ self.support.values)

    def is_symmetric(self, tolerance: float = 1e-12) -> bool:
        """P(lo + k) = P(hi − k) 对所有 k 成立"""
        return bool(np.max(np.abs(self.probs - self.probs[::-1])) <= tolerance)

    def total_variation(self, other: "Pmf") -> float:
        if self.support != other.support:
            raise ModelValidationError(
                f"total variation needs equal supports: {self.support} vs {other.support}"
            )
        return float(0.5 * np.abs(self.probs - other.probs).sum())

    def to_list(self) -> list[float]:
        return [float(p) for p in self.probs]

    def __len__(self) -> int:
        return self.support.size

    def __repr__(self) -> str:
        values = ", ".join(f"{p:.4f}" for p in self.probs)
        return f"Pmf({self.support}, [{values}])"


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """行随机矩阵 Q(x'|x)，rows[i, j] = Q(alphabet[j] | alphabet[i])"""

    alphabet: Alphabet
    rows: np.ndarray

    def __post_init__(self) -> None:
        rows = np.array(self.rows, dtype=float)
        n = self.alphabet.size
        if rows.shape != (n, n):
            raise ModelValidationError(f"transition matrix over {self.alphabet} must be {n}x{n}")
        _validate_distribution(rows, "transition matrix rows")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @classmethod
    def from_iid(cls, pmf: Pmf) -> "TransitionMatrix":
        """i.i.d. 需求对应的秩一转移矩阵"""
        return cls(pmf.support, np.tile(pmf.probs, (pmf.support.size, 1)))

    def row(self, value: int) -> Pmf:
        return Pmf(self.alphabet, self.rows[self.alphabet.index(value)])

    @cached_property
    def _graph(self) -> csr_matrix:
        return csr_matrix((self.rows > 0).astype(np.int8))

    def is_irreducible(self) -> bool:
        n_components, _ = connected_components(self._graph, directed=True, connection="strong")
        return bool(n_components == 1)

    def period(self) -> int:
        """
        不可约链的周期：所有边 (u→v) 上 level(u) + 1 − level(v) 的最大公约数

        Returns:
            周期；链可约时返回 0
        """
        if not self.is_irreducible():
            return 0
        order, predecessors = breadth_first_order(self._graph, 0, directed=True)
        level = np.zeros(self.alphabet.size, dtype=int)
        for node in order[1:]:
            level[node] = level[predecessors[node]] + 1
        sources, targets = self._graph.nonzero()
        gaps = np.abs(level[sources] + 1 - level[targets])
        period = 0
        for gap in gaps:
            period = math.gcd(period, int(gap))
        return period

    def is_aperiodic(self) -> bool:
        return self.period() == 1

    def ergodicity_warnings(self) -> list[str]:
        """不可约性 / 非周期性检查，失败时返回警告文本（不抛异常）"""
        warnings: list[str] = []
        if not self.is_irreducible():
            warnings.append("demand transition matrix is not irreducible")
        elif not self.is_aperiodic():
            warnings.append(f"demand transition matrix is periodic (period {self.period()})")
        return warnings

    def stationary(self) -> Pmf:
        """平稳分布（左特征向量，特征值 1）"""
        eigenvalues, eigenvectors = np.linalg.eig(self.rows.T)
        k = int(np.argmin(np.abs(eigenvalues - 1.0)))
        vector = np.real(eigenvectors[:, k])
        return Pmf.normalized(self.alphabet, np.abs(vector))


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """
    带电池的智能电表系统描述

    字母表约定：X = {0,…,m_x}，Y = {0,…,m_y}，S = {0,…,m_s}，要求 m_x ≤ m_y。
    demand_law 为 Pmf 时表示 i.i.d. 需求，为 TransitionMatrix 时表示一阶 Markov 需求。
    对象按身份哈希，可作为缓存键。
    """

    demand_alphabet: Alphabet
    consumption_alphabet: Alphabet
    battery_alphabet: Alphabet
    demand_law: Pmf | TransitionMatrix
    initial_demand: Pmf
    initial_battery: Pmf
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, alphabet in (
            ("demand", self.demand_alphabet),
            ("consumption", self.consumption_alphabet),
            ("battery", self.battery_alphabet),
        ):
            if alphabet.lo != 0:
                raise ModelValidationError(f"{name} alphabet must start at 0, got {alphabet}")
        if not self.demand_alphabet.issubset(self.consumption_alphabet):
            raise ModelValidationError(
                f"demand alphabet {self.demand_alphabet} must be contained in consumption "
                f"alphabet {self.consumption_alphabet} (m_x <= m_y)"
            )
        law_support = (
            self.demand_law.support if isinstance(self.demand_law, Pmf) else self.demand_law.alphabet
        )
        if law_support != self.demand_alphabet:
            raise ModelValidationError(f"demand law is over {law_support}, expected {self.demand_alphabet}")
        if self.initial_demand.support != self.demand_alphabet:
            raise ModelValidationError("initial demand pmf must be over the demand alphabet")
        if self.initial_battery.support != self.battery_alphabet:
            raise ModelValidationError("initial battery pmf must be over the battery alphabet")

    # ===== 构造方法 =====
    @classmethod
    def iid(
        cls,
        demand: Pmf | Sequence[float],
        ms: int,
        my: Optional[int] = None,
        initial_battery: Optional[Pmf | Sequence[float]] = None,
    ) -> "SystemSpec":
        """
        i.i.d. 需求系统

        Args:
            demand: 需求分布 P_X（支撑 {0,…,m_x}）
            ms: 电池容量 m_s
            my: 最大消耗 m_y，默认等于 m_x
            initial_battery: 初始电池分布，默认均匀
        """
        if not isinstance(demand, Pmf):
            weights = np.asarray(demand, dtype=float)
            demand = Pmf(Alphabet(0, weights.size - 1), weights)
        mx = demand.support.hi
        battery = Alphabet(0, ms)
        return cls(
            demand_alphabet=demand.support,
            consumption_alphabet=Alphabet(0, mx if my is None else my),
            battery_alphabet=battery,
            demand_law=demand,
            initial_demand=demand,
            initial_battery=_as_pmf(initial_battery, battery),
        )

    @classmethod
    def markov(
        cls,
        transition: TransitionMatrix | Sequence[Sequence[float]],
        initial_demand: Pmf | Sequence[float],
        ms: int,
        my: Optional[int] = None,
        initial_battery: Optional[Pmf | Sequence[float]] = None,
    ) -> "SystemSpec":
        """一阶 Markov 需求系统"""
        if not isinstance(transition, TransitionMatrix):
            rows = np.asarray(transition, dtype=float)
            transition = TransitionMatrix(Alphabet(0, rows.shape[0] - 1), rows)
        demand_alphabet = transition.alphabet
        battery = Alphabet(0, ms)
        spec = cls(
            demand_alphabet=demand_alphabet,
            consumption_alphabet=Alphabet(0, demand_alphabet.hi if my is None else my),
            battery_alphabet=battery,
            demand_law=transition,
            initial_demand=_as_pmf(initial_demand, demand_alphabet),
            initial_battery=_as_pmf(initial_battery, battery),
        )
        for warning in transition.ergodicity_warnings():
            logger.warning(f"Markov demand: {warning}")
        return spec

    def with_initial_battery(self, initial_battery: Pmf | Sequence[float]) -> "SystemSpec":
        """替换初始电池分布，其余保持不变"""
        return SystemSpec(
            demand_alphabet=self.demand_alphabet,
            consumption_alphabet=self.consumption_alphabet,
            battery_alphabet=self.battery_alphabet,
            demand_law=self.demand_law,
            initial_demand=self.initial_demand,
            initial_battery=_as_pmf(initial_battery, self.battery_alphabet),
            metadata=dict(self.metadata),
        )

    # ===== 基本属性 =====
    @property
    def mx(self) -> int:
        return self.demand_alphabet.hi

    @property
    def my(self) -> int:
        return self.consumption_alphabet.hi

    @property
    def ms(self) -> int:
        return self.battery_alphabet.hi

    @property
    def is_iid(self) -> bool:
        return isinstance(self.demand_law, Pmf)

    @property
    def w_alphabet(self) -> Alphabet:
        """差值字母表 W = {s − x} = {−m_x, …, m_s}"""
        return Alphabet(self.battery_alphabet.lo - self.demand_alphabet.hi, self.battery_alphabet.hi)

    @property
    def demand_pmf(self) -> Pmf:
        """i.i.d. 需求分布 P_X"""
        if not isinstance(self.demand_law, Pmf):
            raise ModelValidationError("demand is Markov; no single-letter demand pmf")
        return self.demand_law

    @cached_property
    def demand_matrix(self) -> TransitionMatrix:
        """需求转移矩阵；i.i.d. 需求时为秩一矩阵"""
        if isinstance(self.demand_law, Pmf):
            return TransitionMatrix.from_iid(self.demand_law)
        return self.demand_law

    @property
    def joint_size(self) -> int:
        return self.demand_alphabet.size * self.battery_alphabet.size

    @property
    def table_shape_a(self) -> tuple[int, int, int]:
        """ActionA 表的形状 (|X|, |S|, |Y|)"""
        return (
            self.demand_alphabet.size,
            self.battery_alphabet.size,
            self.consumption_alphabet.size,
        )

    # ===== 可行性与守恒 =====
    def feasible_outputs(self, w: int) -> frozenset[int]:
        """
        可行消耗集合 𝒴∘(w) = { y ∈ Y : w + y ∈ S }

        Raises:
            DomainError: w 不在 W 字母表中
        """
        if not self.w_alphabet.contains(w):
            raise DomainError(f"w={w} is outside the difference alphabet {self.w_alphabet}")
        lo = max(self.consumption_alphabet.lo, self.battery_alphabet.lo - w)
        hi = min(self.consumption_alphabet.hi, self.battery_alphabet.hi - w)
        return frozenset(range(lo, hi + 1))

    @cached_property
    def feasibility_mask_w(self) -> np.ndarray:
        """布尔矩阵 (|W|, |Y|)，mask[w, y] = (w + y ∈ S)"""
        w = self.w_alphabet.values[:, None]
        y = self.consumption_alphabet.values[None, :]
        mask = (w + y >= self.battery_alphabet.lo) & (w + y <= self.battery_alphabet.hi)
        mask.setflags(write=False)
        return mask

    @cached_property
    def w_index_xs(self) -> np.ndarray:
        """整数矩阵 (|X|, |S|)，元素为 s − x 在 W 中的下标"""
        x = self.demand_alphabet.values[:, None]
        s = self.battery_alphabet.values[None, :]
        index = s - x - self.w_alphabet.lo
        index.setflags(write=False)
        return index

    @cached_property
    def feasibility_mask_xs(self) -> np.ndarray:
        """布尔数组 (|X|, |S|, |Y|)，mask[x, s, y] = (s + y − x ∈ S)"""
        mask = self.feasibility_mask_w[self.w_index_xs]
        mask.setflags(write=False)
        return mask

    def step(self, s: int, x: int, y: int) -> int:
        """
        守恒方程 s' = s + y − x

        Raises:
            ConservationError: y 不在 𝒴∘(s − x) 中，或 s、x 越界
        """
        if not self.battery_alphabet.contains(s):
            raise ConservationError(f"battery level s={s} outside {self.battery_alphabet}")
        if not self.demand_alphabet.contains(x):
            raise ConservationError(f"demand x={x} outside {self.demand_alphabet}")
        if not self.consumption_alphabet.contains(y):
            raise ConservationError(f"consumption y={y} outside {self.consumption_alphabet}")
        s_next = s + y - x
        if not self.battery_alphabet.contains(s_next):
            raise ConservationError(
                f"infeasible consumption y={y} for s={s}, x={x}: next level {s_next} "
                f"outside {self.battery_alphabet}"
            )
        return s_next

    # ===== 序列化 =====
    def to_document(self) -> SpecDocument:
        if isinstance(self.demand_law, Pmf):
            demand = DemandDocument(iid=self.demand_law.to_list())
        else:
            demand = DemandDocument(
                markov=MarkovDemandDocument(
                    Q=[[float(v) for v in row] for row in self.demand_law.rows],
                    init=self.initial_demand.to_list(),
                )
            )
        return SpecDocument(
            mx=self.mx,
            my=self.my,
            ms=self.ms,
            demand=demand,
            initial_battery=self.initial_battery.to_list(),
        )

    @classmethod
    def from_document(cls, document: SpecDocument) -> "SystemSpec":
        battery = Alphabet(0, document.ms)
        demand_alphabet = Alphabet(0, document.mx)
        initial_battery = (
            Pmf.uniform(battery)
            if document.initial_battery is None
            else Pmf(battery, document.initial_battery)
        )
        if document.demand.iid is not None:
            demand = Pmf(demand_alphabet, document.demand.iid)
            return cls(
                demand_alphabet=demand_alphabet,
                consumption_alphabet=Alphabet(0, document.my),
                battery_alphabet=battery,
                demand_law=demand,
                initial_demand=demand,
                initial_battery=initial_battery,
            )
        markov = document.demand.markov
        assert markov is not None
        transition = TransitionMatrix(demand_alphabet, markov.Q)
        return cls.markov(
            transition,
            Pmf(demand_alphabet, markov.init),
            ms=document.ms,
            my=document.my,
            initial_battery=initial_battery,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_document().model_dump(exclude_none=True), indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SystemSpec":
        text = Path(path).read_text(encoding="utf-8")
        return cls.from_document(SpecDocument.model_validate_json(text))

    def describe(self) -> str:
        kind = "iid" if self.is_iid else "markov"
        return f"SystemSpec(mx={self.mx}, my={self.my}, ms={self.ms}, demand={kind})"


def _as_pmf(value: Optional[Pmf | Sequence[float]], support: Alphabet) -> Pmf:
    if value is None:
        return Pmf.uniform(support)
    if isinstance(value, Pmf):
        return value
    return Pmf(support, value)


def binary_spec(p: float = 0.5, initial_battery: Optional[Sequence[float]] = None) -> SystemSpec:
    """m_x = m_y = m_s = 1 的二元模型，需求 Bernoulli(p)"""
    return SystemSpec.iid(Pmf(Alphabet(0, 1), [1.0 - p, p]), ms=1, initial_battery=initial_battery)


def binomial_spec(
    n: int,
    ms: int,
    p: float = 0.5,
    initial_battery: Optional[Sequence[float]] = None,
) -> SystemSpec:
    """Binomial(n, p) 需求，Y = X，S = [0:m_s]"""
    return SystemSpec.iid(Pmf.binomial(n, p), ms=ms, initial_battery=initial_battery)
