"""
LangGraph 工作流定义

定义 certify 命令的执行流程：
1. Solve -> 2. Properties -> 3. Converse -> 4. Convergence -> 5. Report
单字母求解失败或未收敛时直接跳到 Report。
"""

from typing import Optional

from langgraph.graph import END, START, StateGraph
from langgraph.graph.state import CompiledStateGraph

from src.errors import ModelValidationError
from src.model import SystemSpec
from src.nodes import (
    convergence_node,
    converse_node,
    properties_node,
    report_node,
    solve_node,
)
from src.state import CertificationState


def should_continue(state: CertificationState) -> str:
    """
    判断单字母解是否可以继续认证

    Args:
        state: 当前认证状态

    Returns:
        "continue" 或 "report"
    """
    solution = state.get("solution")
    if solution is None or not solution.converged:
        return "report"
    return "continue"


def build_graph() -> CompiledStateGraph:
    """
    构建认证工作流

    工作流结构:
                    ┌──────────────────────────────────┐
                    │              Solve               │
                    └──────────────────────────────────┘
                              │            │ (未收敛)
                              ▼            │
                    ┌──────────────────┐   │
                    │    Properties    │   │
                    └──────────────────┘   │
                              ▼            │
                    ┌──────────────────┐   │
                    │     Converse     │   │
                    └──────────────────┘   │
                              ▼            │
                    ┌──────────────────┐   │
                    │   Convergence    │   │
                    └──────────────────┘   │
                              ▼            │
                    ┌──────────────────────────────────┐
                    │              Report              │◄┘
                    └──────────────────────────────────┘
    """
    builder = StateGraph(CertificationState)

    builder.add_node("solve", solve_node)
    builder.add_node("properties", properties_node)
    builder.add_node("converse", converse_node)
    builder.add_node("convergence", convergence_node)
    builder.add_node("report", report_node)

    builder.add_edge(START, "solve")
    builder.add_conditional_edges(
        "solve",
        should_continue,
        {
            "continue": "properties",
            "report": "report",
        },
    )
    builder.add_edge("properties", "converse")
    builder.add_edge("converse", "convergence")
    builder.add_edge("convergence", "report")
    builder.add_edge("report", END)

    return builder.compile()


def run_certification(
    spec: SystemSpec,
    horizon: int = 300,
    samples: int = 2000,
    seed: int = 0,
    tol: float = 1e-10,
    initial_count: int = 5,
    graph: Optional[CompiledStateGraph] = None,
) -> CertificationState:
    """运行完整认证流程，返回最终状态"""
    if not spec.is_iid:
        raise ModelValidationError("certification needs i.i.d. demand")
    graph = build_graph() if graph is None else graph
    initial_state: CertificationState = {
        "spec": spec,
        "horizon": horizon,
        "samples": samples,
        "seed": seed,
        "tol": tol,
        "initial_count": initial_count,
        "errors": [],
    }
    return graph.invoke(initial_state)
