"""
Node 1: Single-letter Solver

求解 J* = min_θ I(S − X; X)，得到 θ*、ξ* 和结构化策略 b*
"""

import logging

from src.errors import BatteryPrivacyError
from src.iidopt import DEFAULT_TOL, solve_iid
from src.progress_tracker import SolveStage, get_progress_tracker
from src.state import CertificationState

logger = logging.getLogger(__name__)


def solve_node(state: CertificationState) -> CertificationState:
    """
    求解单字母问题

    输入:
        - spec: i.i.d. 需求系统
        - tol: 求解容差

    输出:
        - solution: SingleLetterSolution；失败时为 None 并记录 errors
    """
    logger.info("Running solve_node...")

    tracker = get_progress_tracker()
    tracker.update_stage(SolveStage.SINGLE_LETTER, detail=state["spec"].describe())

    try:
        solution = solve_iid(state["spec"], tol=state.get("tol", DEFAULT_TOL), track=False)
    except BatteryPrivacyError as e:
        logger.error(f"single-letter solve failed: {e}")
        return {"solution": None, "errors": [f"solve: {e}"]}

    errors = []
    if not solution.converged:
        errors.append(f"solve: not converged (gradient norm {solution.gradient_norm:.3e})")
    logger.info(f"J* = {solution.J_star:.6f} bits after {solution.iterations} iterations")
    return {"solution": solution, "errors": errors}
