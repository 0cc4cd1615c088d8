"""
LangGraph CertificationState definition

定义认证工作流的全局状态结构
"""

from operator import add
from typing import Annotated, Optional

from typing_extensions import TypedDict

from src.iidopt import SingleLetterSolution
from src.model import SystemSpec
from src.schemas import (
    ConvergenceReport,
    ConverseReport,
    ConvexityReport,
    PropertyCertificate,
    SubrectangularityReport,
)


class CertificationState(TypedDict, total=False):
    """Graph 的全局状态"""

    # ===== 输入 =====
    spec: SystemSpec  # i.i.d. 需求系统
    horizon: int  # 收敛验证时长 T
    samples: int  # Monte Carlo 路径数
    seed: int
    tol: float  # 单字母求解容差
    initial_count: int  # 初始电池分布个数

    # ===== solve 输出 =====
    solution: Optional[SingleLetterSolution]

    # ===== properties 输出 =====
    properties: Optional[PropertyCertificate]
    convexity: Optional[ConvexityReport]

    # ===== converse 输出 =====
    converse: Optional[ConverseReport]

    # ===== convergence 输出 =====
    subrectangularity: Optional[SubrectangularityReport]
    convergence: Optional[ConvergenceReport]

    # 各节点累加的错误信息
    errors: Annotated[list[str], add]

    # ===== report 输出 =====
    passed: bool
