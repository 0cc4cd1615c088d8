"""
Node 5: Reporter

汇总各节点结果，生成 CertificateDocument
"""

import logging

from src.progress_tracker import SolveStage, get_progress_tracker
from src.schemas import CertificateDocument
from src.state import CertificationState

logger = logging.getLogger(__name__)


def report_node(state: CertificationState) -> CertificationState:
    """所有步骤都已运行且无错误时 passed=True"""
    logger.info("Running report_node...")

    completed = all(
        state.get(key) is not None
        for key in ("solution", "properties", "convexity", "converse", "subrectangularity", "convergence")
    )
    passed = completed and not state.get("errors")

    tracker = get_progress_tracker()
    tracker.update_stage(SolveStage.COMPLETE if passed else SolveStage.ERROR)
    logger.info(f"Certificate: {'PASS' if passed else 'FAIL'} ({len(state.get('errors', []))} errors)")
    return {"passed": passed}


def to_certificate(state: CertificationState, units: str = "bits") -> CertificateDocument:
    """把最终状态转换为可序列化的证书"""
    solution = state.get("solution")
    return CertificateDocument(
        solution=solution.to_document(units) if solution is not None else None,
        properties=state.get("properties"),
        convexity=state.get("convexity"),
        converse=state.get("converse"),
        subrectangularity=state.get("subrectangularity"),
        convergence=state.get("convergence"),
        errors=list(state.get("errors", [])),
        passed=bool(state.get("passed", False)),
    )
