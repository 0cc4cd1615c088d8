"""Nodes for the certification workflow"""

from .checker import converse_node, properties_node
from .reporter import report_node, to_certificate
from .solver import solve_node
from .verifier import convergence_node

__all__ = [
    "solve_node",
    "properties_node",
    "converse_node",
    "convergence_node",
    "report_node",
    "to_certificate",
]
