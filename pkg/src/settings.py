"""
运行配置

从环境变量（以及 .env 文件）读取默认值，函数参数显式传入时优先。
"""

import os

from dotenv import load_dotenv

load_dotenv()


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(float(raw))
    except ValueError:
        return default


def get_threads() -> int:
    """并行线程数上限（BP_THREADS，默认 1）"""
    return max(1, _int_env("BP_THREADS", 1))


def get_exact_max_nodes() -> int:
    """精确泄漏计算的分支树节点预算（BP_EXACT_MAX_NODES）"""
    return max(1, _int_env("BP_EXACT_MAX_NODES", 10**7))


def get_grid_max_points() -> int:
    """单纯形网格点数预算（BP_GRID_MAX_POINTS）"""
    return max(1, _int_env("BP_GRID_MAX_POINTS", 2_000_000))


def get_mc_chunk() -> int:
    """Monte Carlo 每个分块的路径数（BP_MC_CHUNK），分块方式与线程数无关"""
    return max(1, _int_env("BP_MC_CHUNK", 1024))


def get_log_level() -> str:
    """日志级别（BP_LOG_LEVEL，默认 INFO）"""
    return os.getenv("BP_LOG_LEVEL", "INFO").upper()
