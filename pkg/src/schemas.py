"""
Pydantic 数据模型

所有 JSON 输入输出（系统描述、策略、求解结果、各类证书与报告）都定义在此，
CLI 读写文件时统一经过这些模型校验。
"""

import csv
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, Field, model_validator


# ===== 输入文档 =====
class MarkovDemandDocument(BaseModel):
    """Markov 需求：转移矩阵与初始分布"""

    Q: list[list[float]] = Field(..., description="转移矩阵 Q[x][x']，每行和为 1")
    init: list[float] = Field(..., description="初始需求分布 P_{X_1}")


class DemandDocument(BaseModel):
    """需求规律，iid 与 markov 二选一"""

    iid: Optional[list[float]] = Field(None, description="i.i.d. 需求分布 P_X")
    markov: Optional[MarkovDemandDocument] = Field(None, description="Markov 需求")

    @model_validator(mode="after")
    def check_exactly_one(self) -> "DemandDocument":
        if (self.iid is None) == (self.markov is None):
            raise ValueError("demand must specify exactly one of 'iid' or 'markov'")
        return self


class SpecDocument(BaseModel):
    """系统描述文件（--spec）"""

    mx: int = Field(..., ge=0, description="需求字母表 X = {0..mx}")
    my: int = Field(..., ge=0, description="消耗字母表 Y = {0..my}，要求 my ≥ mx")
    ms: int = Field(..., ge=0, description="电池字母表 S = {0..ms}")
    demand: DemandDocument = Field(..., description="需求规律")
    initial_battery: Optional[list[float]] = Field(
        None, description="初始电池分布 P_{S_1}，省略时取均匀分布"
    )

    @model_validator(mode="after")
    def check_alphabets(self) -> "SpecDocument":
        if self.my < self.mx:
            raise ValueError(f"consumption alphabet must contain demand alphabet (my={self.my} < mx={self.mx})")
        return self


class PolicyDocument(BaseModel):
    """策略文件（--policy）"""

    kind: Literal["structured", "equiprobable", "table_b", "table_a", "passthrough"] = Field(
        ..., description="策略类型"
    )
    theta: Optional[list[float]] = Field(None, description="structured 策略的电池分布 θ")
    table: Optional[list] = Field(
        None, description="table_b: [|W|][|Y|]；table_a: [|X|][|S|][|Y|]"
    )

    @model_validator(mode="after")
    def check_payload(self) -> "PolicyDocument":
        if self.kind in ("table_a", "table_b") and self.table is None:
            raise ValueError(f"policy kind '{self.kind}' needs 'table'")
        if self.kind == "structured" and self.theta is None:
            raise ValueError("policy kind 'structured' needs 'theta'")
        return self


# ===== 泄漏评估 =====
class LeakageReport(BaseModel):
    """泄漏率评估结果"""

    horizon: int = Field(..., ge=1, description="时长 T")
    per_step: list[float] = Field(..., description="逐步代价 E[I(a_t; π_t)]")
    total_rate: float = Field(..., description="L_T = (1/T) Σ_t per_step")
    units: Literal["bits", "nats"] = Field(default="bits")
    method: Literal["exact", "monte_carlo"] = Field(..., description="评估方法")
    ci_halfwidth: Optional[float] = Field(None, description="Monte Carlo 95% 置信区间半宽")
    sample_count: int = Field(default=0, description="Monte Carlo 路径数或精确展开的节点数")
    pruned_mass: float = Field(default=0.0, description="被剪枝分支的概率质量")
    error_bound: float = Field(default=0.0, description="剪枝导致的误差上界")
    space: Literal["joint", "difference"] = Field(default="joint", description="评估使用的置信空间")
    warnings: list[str] = Field(default_factory=list, description="遍历性等警告")

    def to_csv(self, path: str | Path) -> None:
        """逐步代价导出为 CSV（t, cost）"""
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["t", "cost"])
            for t, cost in enumerate(self.per_step, start=1):
                writer.writerow([t, repr(float(cost))])


# ===== 单字母问题 =====
class SolutionDocument(BaseModel):
    """solve-iid 的输出"""

    mx: int
    my: int
    ms: int
    theta_star: list[float] = Field(..., description="最优电池分布 θ*")
    xi_star: list[float] = Field(..., description="对应的差值分布 ξ*")
    w_lo: int = Field(..., description="ξ* 第一个分量对应的 w")
    b_star: list[list[float]] = Field(..., description="结构化策略表 b*(y|w)")
    J_star: float = Field(..., description="按 units 表示的 J*")
    J_star_bits: float
    J_star_nats: float
    units: Literal["bits", "nats"] = "bits"
    iterations: int
    gradient_norm: float = Field(..., description="最终投影梯度范数（nats）")
    converged: bool


class PropertyCheck(BaseModel):
    """单项性质检查；applicable 为 False 时 passed 为 None"""

    name: str
    applicable: bool
    passed: Optional[bool] = None
    value: Optional[float] = Field(None, description="检查使用的数值（最大偏差、最小分量等）")


class PropertyCertificate(BaseModel):
    checks: list[PropertyCheck]
    all_passed: bool


class ConvexityReport(BaseModel):
    """目标函数严格凸性的随机检验"""

    trials: int
    strict_trials: int = Field(..., description="两点距离足够大、要求严格不等式的样本数")
    failures: int
    min_slack: Optional[float] = Field(None, description="严格样本中的最小凸性余量（bits）")
    reflected_midpoint_gain: Optional[float] = Field(
        None, description="对称需求下 f(θ) − f((θ + θ反转)/2)，应 ≥ 0"
    )
    passed: bool


# ===== 动态规划 =====
class ValueFunctionDocument(BaseModel):
    """网格值函数的持久化格式"""

    space: Literal["joint", "difference"]
    resolution: int = Field(..., ge=1)
    dimension: int = Field(..., ge=1)
    stage: int = Field(..., description="时间下标 t；无限时长问题为 0")
    counts: list[list[int]] = Field(..., description="网格点（整数分量，和为 resolution），行优先")
    values: list[float]
    actions: list[list[list[float]]] = Field(..., description="每个网格点的最优动作表 (R, |Y|)")


class DPSolutionDocument(BaseModel):
    """solve-dp 的输出"""

    space: Literal["joint", "difference"]
    resolution: int
    grid_size: int
    horizon: Optional[int] = Field(None, description="有限时长 T；无限时长时为空")
    rate: float = Field(..., description="有限时长 V_1(π_1)/T 或无限时长 J")
    units: Literal["bits", "nats"] = "bits"
    converged: bool = True
    iterations: int = 0
    span: Optional[float] = Field(None, description="相对值迭代最后一轮的 span")
    max_gradient_norm: float = Field(default=0.0, description="内层优化的最大投影梯度范数")


class ConcavityReport(BaseModel):
    """值函数凹性检验"""

    trials: int
    violations: int
    tolerance: float = Field(..., description="插值容差 ε_grid")
    max_violation: float = Field(..., description="λV(π₁) + (1−λ)V(π₂) − V(混合) 的最大值")
    passed: bool


class ConverseReport(BaseModel):
    """平均代价最优性不等式检验：[ℬ̃_b H](ξ) − H(ξ) − J* ≥ 0"""

    trials: int
    J_star: float
    min_slack: float
    equality_slack: Optional[float] = Field(None, description="(ξ*, b*) 处的余量，应为 0")
    violations: int
    passed: bool


# ===== 收敛性 =====
class SubrectangularityReport(BaseModel):
    word: list[int] = Field(..., description="观测序列 z^m")
    ok: bool
    size: int = Field(..., description="提升链状态数 |S||Y|")
    prefix_flags: list[bool] = Field(default_factory=list, description="每个前缀乘积是否子矩形")
    inconclusive: bool = Field(default=False, description="ok=False 时无法据此判定发散")


class ConvergenceRun(BaseModel):
    initial_theta: list[float]
    tv_distance: float = Field(..., description="最终 E[θ_T] 到 θ° 的全变差距离")
    tv_history: list[float] = Field(default_factory=list, description="第 t 步传播后的全变差距离，t = 1..T")
    reached_tolerance: bool
    steps_to_tolerance: Optional[int] = None
    cesaro_leakage: float = Field(..., description="(1/T) Σ_t E[I(b; ξ_t)]")
    cesaro_ci: Optional[float] = None
    target_leakage: float = Field(..., description="I(b; ξ°)")


class ConvergenceReport(BaseModel):
    horizon: int
    tolerance: float
    theta_target: list[float]
    runs: list[ConvergenceRun]
    units: Literal["bits", "nats"] = "bits"
    passed: bool


# ===== 连续字母表界 =====
class ContinuousBoundReport(BaseModel):
    B: float = Field(..., ge=2.0, description="电池容量")
    lower: float
    achievable: float
    gap: float


class QuadratureCheck(BaseModel):
    B: float
    closed_form: float = Field(..., description="1/(2B ln2)")
    quadrature: float = Field(..., description="h(ξ) − log2 B 的数值积分")
    quadrature_error: float
    nodes: Optional[int] = Field(None, description="固定阶 Gauss-Legendre 节点数；None 为自适应")
    sufficient: bool = Field(..., description="数值积分与闭式解之差 ≤ 1e-6")
    mc_estimate: Optional[float] = None
    mc_stderr: Optional[float] = None
    samples: int = 0


# ===== 扫描 =====
class SweepRow(BaseModel):
    m_x: int
    m_s: int
    J_star: Optional[float] = None
    J_eq_estimate: Optional[float] = None
    ci: Optional[float] = None
    error: Optional[str] = Field(None, description="该单元失败时的错误信息")


# ===== 认证流程 =====
class CertificateDocument(BaseModel):
    """certify 命令输出的综合证书"""

    solution: Optional[SolutionDocument] = None
    properties: Optional[PropertyCertificate] = None
    convexity: Optional[ConvexityReport] = None
    converse: Optional[ConverseReport] = None
    subrectangularity: Optional[SubrectangularityReport] = None
    convergence: Optional[ConvergenceReport] = None
    errors: list[str] = Field(default_factory=list)
    passed: bool = False


# ===== CLI 配置 =====
class RunConfig(BaseModel):
    """一次 CLI 调用的已校验参数"""

    command: Literal[
        "solve-iid", "solve-dp", "eval", "simulate", "verify-convergence", "certify", "bounds", "sweep"
    ]
    spec_path: Optional[Path] = None
    policy_path: Optional[Path] = None
    solution_path: Optional[Path] = None
    horizon: Optional[int] = Field(None, ge=1)
    samples: Optional[int] = Field(None, ge=1)
    seed: int = Field(default=0, ge=0)
    resolution: Optional[int] = Field(None, ge=2)
    tol: float = Field(default=1e-6, gt=0)
    output_path: Optional[Path] = None
    units: Literal["bits", "nats"] = "bits"

    @model_validator(mode="after")
    def check_files(self) -> "RunConfig":
        for name in ("spec_path", "policy_path", "solution_path"):
            path = getattr(self, name)
            if path is not None and not path.is_file():
                raise ValueError(f"{name}: file not found: {path}")
        return self
