"""
置信状态动态规划

网格值迭代（联合置信 π 或差值置信 ξ）、相对值迭代以及相应的数值证书。
"""

from src.dp.backup import BackupOutcome, BackupResult, backup_batch, bellman_backup
from src.dp.certificates import converse_slack, interpolation_tolerance, verify_concavity, verify_dp_converse
from src.dp.grid import SimplexGrid, default_resolution, grid_size
from src.dp.solvers import (
    FiniteHorizonSolution,
    InfiniteHorizonSolution,
    greedy_policy,
    solve_finite_horizon,
    solve_iid_infinite,
    solve_infinite_horizon,
)
from src.dp.value import ValueFunction

__all__ = [
    "BackupOutcome",
    "BackupResult",
    "FiniteHorizonSolution",
    "InfiniteHorizonSolution",
    "SimplexGrid",
    "ValueFunction",
    "backup_batch",
    "bellman_backup",
    "converse_slack",
    "default_resolution",
    "greedy_policy",
    "grid_size",
    "interpolation_tolerance",
    "solve_finite_horizon",
    "solve_iid_infinite",
    "solve_infinite_horizon",
    "verify_concavity",
    "verify_dp_converse",
]
