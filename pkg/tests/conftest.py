"""
pytest 共享 fixture

常用的系统描述：二元模型、Binomial(6, 0.5) 需求配 m_s = 5 / 6。
"""

import pytest

from src.model import SystemSpec, binary_spec, binomial_spec
from src.progress_tracker import reset_progress_tracker


@pytest.fixture
def binary() -> SystemSpec:
    """m_x = m_y = m_s = 1，需求 Bernoulli(0.5)"""
    return binary_spec()


@pytest.fixture
def binomial_six_five() -> SystemSpec:
    return binomial_spec(6, 5)


@pytest.fixture
def binomial_six_six() -> SystemSpec:
    return binomial_spec(6, 6)


@pytest.fixture(autouse=True)
def fresh_tracker():
    """每个测试前重置全局进度追踪器"""
    reset_progress_tracker()
    yield
