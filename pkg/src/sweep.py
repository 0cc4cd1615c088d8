"""
电池容量扫描

对固定的需求分布和一组 m_s，求单字母最优值 J*，并用 Monte Carlo 估计等概率策略的泄漏率，
输出可直接绘图的 CSV 表 (m_x, m_s, J_star, J_eq_estimate, ci)。
每个单元的种子由 SeedSequence([seed, m_x, m_s]) 派生，结果与线程数和执行顺序无关。
"""

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from src.errors import BatteryPrivacyError
from src.iidopt import solve_iid
from src.leakage import monte_carlo_leakage
from src.model import Pmf, SystemSpec
from src.policy import equiprobable_policy
from src.progress_tracker import SolveStage, get_progress_tracker
from src.schemas import SweepRow
from src.settings import get_threads
from src.utils.infotheory import Units, convert_units

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ["m_x", "m_s", "J_star", "J_eq_estimate", "ci"]


def cell_seed(seed: int, mx: int, ms: int) -> int:
    """单元种子，只依赖 (seed, m_x, m_s)"""
    return int(np.random.SeedSequence([seed, mx, ms]).generate_state(1)[0])


def _run_cell(
    demand: Pmf,
    ms: int,
    horizon: int,
    samples: int,
    seed: int,
    units: Units,
) -> SweepRow:
    mx = demand.support.hi
    try:
        spec = SystemSpec.iid(demand, ms=ms)
        solution = solve_iid(spec, track=False)
        report = monte_carlo_leakage(
            spec,
            equiprobable_policy(spec),
            horizon,
            samples,
            cell_seed(seed, mx, ms),
            units=units,
            threads=1,
            track=False,
        )
        return SweepRow(
            m_x=mx,
            m_s=ms,
            J_star=convert_units(solution.J_star, units),
            J_eq_estimate=report.total_rate,
            ci=report.ci_halfwidth,
        )
    except (BatteryPrivacyError, ValueError) as e:
        logger.error(f"sweep cell (m_x={mx}, m_s={ms}) failed: {e}")
        return SweepRow(m_x=mx, m_s=ms, error=str(e))


def sweep_battery_sizes(
    demand: Pmf,
    ms_range: Iterable[int],
    horizon: int = 200,
    samples: int = 10_000,
    seed: int = 0,
    units: Units = "bits",
    threads: Optional[int] = None,
) -> list[SweepRow]:
    """
    逐个电池容量比较最优泄漏率与等概率策略

    Args:
        demand: i.i.d. 需求分布
        ms_range: 电池容量列表
        horizon: Monte Carlo 评估时长
        samples: Monte Carlo 路径数
        seed: 基础种子
        units: 输出单位
        threads: 并行单元数，默认 BP_THREADS

    Returns:
        按 ms_range 顺序排列的行；失败的单元记录 error 并继续
    """
    sizes = [int(ms) for ms in ms_range]
    if any(ms < 0 for ms in sizes):
        raise ValueError(f"battery sizes must be non-negative, got {sizes}")
    workers = get_threads() if threads is None else max(1, threads)
    logger.info(
        f"Sweeping m_s in {sizes} for m_x={demand.support.hi} (T={horizon}, N={samples})"
    )
    tracker = get_progress_tracker()
    tracker.update_stage(SolveStage.SWEEP, total_units=len(sizes), detail=f"m_x={demand.support.hi}")

    def run(ms: int) -> SweepRow:
        row = _run_cell(demand, ms, horizon, samples, seed, units)
        tracker.advance(1)
        return row

    with ThreadPoolExecutor(max_workers=workers) as executor:
        rows = list(executor.map(run, sizes))
    failed = sum(row.error is not None for row in rows)
    if failed:
        logger.warning(f"{failed} sweep cells failed")
    tracker.update_stage(SolveStage.COMPLETE)
    return rows


def write_sweep_csv(rows: list[SweepRow], path: str | Path) -> None:
    """固定列顺序写出 CSV，失败单元的数值列留空"""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row.m_x,
                    row.m_s,
                    "" if row.J_star is None else repr(row.J_star),
                    "" if row.J_eq_estimate is None else repr(row.J_eq_estimate),
                    "" if row.ci is None else repr(row.ci),
                ]
            )
