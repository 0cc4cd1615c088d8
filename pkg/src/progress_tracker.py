"""
进度追踪模块 - 线程安全的求解进度与时间预估

核心功能：
- 记录当前求解阶段（单字母优化、DP 回溯、评估、收敛验证、扫描）
- 记录阶段内已完成 / 总工作单元数，按平均速度预估剩余时间
- 线程安全设计（Monte Carlo 分块、扫描单元在线程池中更新进度）
"""

import copy
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional


class SolveStage(Enum):
    """求解阶段枚举"""
    INITIALIZING = "initializing"
    SINGLE_LETTER = "single_letter"
    DP_BACKUP = "dp_backup"
    EVALUATION = "evaluation"
    CONVERGENCE = "convergence"
    SWEEP = "sweep"
    COMPLETE = "complete"
    ERROR = "error"


# 阶段显示名称映射
STAGE_DISPLAY_NAMES = {
    SolveStage.INITIALIZING: "⚙️ 初始化",
    SolveStage.SINGLE_LETTER: "📐 求解单字母问题",
    SolveStage.DP_BACKUP: "🔁 动态规划回溯",
    SolveStage.EVALUATION: "📊 评估泄漏率",
    SolveStage.CONVERGENCE: "🔎 验证收敛性",
    SolveStage.SWEEP: "🧮 电池容量扫描",
    SolveStage.COMPLETE: "✅ 完成",
    SolveStage.ERROR: "❌ 失败",
}


@dataclass
class ProgressState:
    """进度状态数据结构"""
    current_stage: str = SolveStage.INITIALIZING.value
    current_stage_display: str = STAGE_DISPLAY_NAMES[SolveStage.INITIALIZING]
    total_units: int = 0  # 阶段内总工作单元（网格回溯轮数、Monte Carlo 分块、扫描单元）
    completed_units: int = 0
    detail: str = ""
    estimated_remaining_seconds: float = 0.0
    stage_start_time: float = field(default_factory=time.time)

    @property
    def progress_percent(self) -> float:
        if self.total_units <= 0:
            return 0.0
        return 100.0 * min(self.completed_units, self.total_units) / self.total_units

    def get_formatted_remaining_time(self) -> str:
        """获取格式化的剩余时间"""
        if self.estimated_remaining_seconds < 60:
            return f"{int(self.estimated_remaining_seconds)}秒"
        elif self.estimated_remaining_seconds < 3600:
            minutes = int(self.estimated_remaining_seconds / 60)
            seconds = int(self.estimated_remaining_seconds % 60)
            return f"{minutes}分{seconds}秒"
        else:
            hours = int(self.estimated_remaining_seconds / 3600)
            minutes = int((self.estimated_remaining_seconds % 3600) / 60)
            return f"{hours}小时{minutes}分"


class ProgressTracker:
    """
    线程安全的进度追踪器

    使用说明：
        1. 在开始求解前调用 reset() 重置状态
        2. 在每个阶段开始时调用 update_stage()
        3. 工作单元完成时调用 advance()
        4. CLI 线程调用 get_state() 获取当前进度
    """

    def __init__(self):
        self._state = ProgressState()
        self._lock = threading.Lock()

    def reset(self):
        """重置进度状态"""
        with self._lock:
            self._state = ProgressState()

    def update_stage(self, stage: SolveStage, total_units: int = 0, detail: str = ""):
        """
        进入新阶段

        Args:
            stage: 求解阶段
            total_units: 该阶段预计的工作单元数（未知时为 0）
            detail: 附加说明（例如网格规模）
        """
        with self._lock:
            self._state.current_stage = stage.value
            self._state.current_stage_display = STAGE_DISPLAY_NAMES.get(stage, stage.value)
            self._state.total_units = total_units
            self._state.completed_units = 0
            self._state.detail = detail
            self._state.estimated_remaining_seconds = 0.0
            self._state.stage_start_time = time.time()

    def advance(self, units: int = 1, total_units: Optional[int] = None):
        """
        记录完成的工作单元并更新剩余时间

        Args:
            units: 本次完成的单元数
            total_units: 可选，修正总单元数
        """
        with self._lock:
            if total_units is not None:
                self._state.total_units = total_units
            self._state.completed_units += units
            self._update_time_estimate()

    def _update_time_estimate(self):
        """按阶段内平均速度预估剩余时间"""
        done = self._state.completed_units
        remaining = self._state.total_units - done
        if done <= 0 or remaining <= 0:
            self._state.estimated_remaining_seconds = 0.0
            return
        elapsed = time.time() - self._state.stage_start_time
        self._state.estimated_remaining_seconds = remaining * elapsed / done

    def get_state(self) -> ProgressState:
        """
        获取当前进度状态（线程安全）

        Returns:
            ProgressState 的副本（避免外部修改）
        """
        with self._lock:
            return copy.copy(self._state)


# 全局单例模式（所有线程共享同一个实例）
_global_progress_tracker = None
_tracker_lock = threading.Lock()


def get_progress_tracker() -> ProgressTracker:
    """
    获取全局唯一的进度追踪器实例（线程安全）

    Returns:
        全局唯一的 ProgressTracker 实例
    """
    global _global_progress_tracker
    if _global_progress_tracker is None:
        with _tracker_lock:
            # 双重检查锁定模式（Double-Checked Locking）
            if _global_progress_tracker is None:
                _global_progress_tracker = ProgressTracker()
    return _global_progress_tracker


def reset_progress_tracker():
    """重置全局进度追踪器"""
    tracker = get_progress_tracker()
    tracker.reset()


class _SilentProgressTracker(ProgressTracker):
    """嵌套调用使用的追踪器：不修改全局进度"""

    def update_stage(self, stage: SolveStage, total_units: int = 0, detail: str = ""):
        pass

    def advance(self, units: int = 1, total_units: Optional[int] = None):
        pass


_silent_tracker = _SilentProgressTracker()


def progress_tracker_for(track: bool = True) -> ProgressTracker:
    """
    track=False 时返回不记录进度的追踪器

    外层操作（扫描、收敛验证）调用内层求解器时传 track=False，
    全局进度只反映外层的阶段和工作单元。
    """
    return get_progress_tracker() if track else _silent_tracker
