"""
异常定义模块

所有领域异常都继承自 BatteryPrivacyError，并携带 CLI 退出码：
- 2: 输入校验失败（字母表、概率分布、策略可行性、文档格式）
- 3: 数值迭代未收敛
- 4: 计算预算超限
"""

from typing import Any, Optional


class BatteryPrivacyError(Exception):
    """所有领域异常的基类"""

    exit_code: int = 1

    def to_payload(self) -> dict[str, Any]:
        """转换为机器可读的错误描述（CLI 写入 stderr）"""
        return {"error": type(self).__name__, "message": str(self), "exit_code": self.exit_code}


class ModelValidationError(BatteryPrivacyError, ValueError):
    """模型或输入数据不满足约束"""

    exit_code = 2


class DomainError(ModelValidationError):
    """参数超出函数定义域（如 w ∉ W、B < 2、θ 位于单纯形边界）"""


class ConservationError(ModelValidationError):
    """消耗 y 不满足能量守恒 s + y − x ∈ S"""


class SimulationError(ConservationError):
    """仿真过程中策略输出不可行的消耗"""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step

    def to_payload(self) -> dict[str, Any]:
        payload = super().to_payload()
        payload["step"] = self.step
        return payload


class PolicyClassError(ModelValidationError):
    """策略类别不满足调用方要求的结构（例如 Q_A 策略用于置信递推）"""


class ConditioningError(BatteryPrivacyError, ValueError):
    """对零概率观测做条件化"""

    exit_code = 2

    def __init__(self, y: int, probability: float = 0.0):
        super().__init__(f"cannot condition on y={y}: predicted probability {probability:.3e}")
        self.y = y
        self.probability = probability


class ConvergenceError(BatteryPrivacyError, RuntimeError):
    """迭代算法在最大迭代次数内未收敛，partial 保存最佳迭代结果"""

    exit_code = 3

    def __init__(self, message: str, partial: Optional[Any] = None):
        super().__init__(message)
        self.partial = partial


class BudgetExceededError(BatteryPrivacyError, RuntimeError):
    """所需计算规模超过配置的预算"""

    exit_code = 4

    def __init__(self, message: str, required: int, allowed: int):
        super().__init__(f"{message} (required={required}, allowed={allowed})")
        self.required = required
        self.allowed = allowed

    def to_payload(self) -> dict[str, Any]:
        payload = super().to_payload()
        payload.update({"required": self.required, "allowed": self.allowed})
        return payload
