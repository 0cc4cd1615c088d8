"""
Node 2 & 3: Property and Converse Checkers

- properties_node：内部性、输出不可区分、对称性、近似对称单峰，以及目标函数的严格凸性
- converse_node：以 v(ξ) = H(ξ) 检验平均代价最优性不等式
"""

import logging

from src.dp.certificates import verify_dp_converse
from src.iidopt import certify_properties, convexity_probe
from src.state import CertificationState

logger = logging.getLogger(__name__)

CONVERSE_SAMPLES = 1000
CONVEXITY_TRIALS = 1000


def properties_node(state: CertificationState) -> CertificationState:
    """
    输入:
        - solution

    输出:
        - properties: PropertyCertificate
        - convexity: ConvexityReport
    """
    logger.info("Running properties_node...")
    solution = state["solution"]
    spec = state["spec"]

    properties = certify_properties(solution)
    convexity = convexity_probe(
        spec.demand_pmf, spec.battery_alphabet, trials=CONVEXITY_TRIALS, seed=state.get("seed", 0)
    )

    errors = []
    if not properties.all_passed:
        failed = [check.name for check in properties.checks if check.applicable and not check.passed]
        errors.append(f"properties: failed {failed}")
    if not convexity.passed:
        errors.append(f"convexity: {convexity.failures} failures")
    return {"properties": properties, "convexity": convexity, "errors": errors}


def converse_node(state: CertificationState) -> CertificationState:
    """
    输入:
        - solution

    输出:
        - converse: ConverseReport（含 (ξ*, b*) 处的等号余量）
    """
    logger.info("Running converse_node...")
    solution = state["solution"]

    report = verify_dp_converse(
        state["spec"],
        solution.J_star,
        samples=CONVERSE_SAMPLES,
        seed=state.get("seed", 0),
        xi_star=solution.xi_star.probs,
        b_star=solution.b_star.b,
    )

    errors = [] if report.passed else [f"converse: min slack {report.min_slack:.3e}"]
    return {"converse": report, "errors": errors}
