"""
工具模块
"""

from src.utils.infotheory import (
    LN2,
    convert_units,
    entropy,
    mutual_information,
)
from src.utils.simplex import project_masked_simplex, sample_masked_dirichlet

__all__ = [
    "LN2",
    "convert_units",
    "entropy",
    "mutual_information",
    "project_masked_simplex",
    "sample_masked_dirichlet",
]
