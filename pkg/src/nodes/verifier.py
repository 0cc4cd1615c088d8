"""
Node 4: Convergence Verifier

b* 下的强可达性：子矩形证书 + 从多个初始电池分布出发的经验收敛
"""

import logging

from src.convergence import empirical_convergence, extreme_initial_distributions, subrectangular_certificate
from src.state import CertificationState

logger = logging.getLogger(__name__)

DEFAULT_HORIZON = 300
DEFAULT_SAMPLES = 2000
DEFAULT_INITIAL_COUNT = 5


def convergence_node(state: CertificationState) -> CertificationState:
    """
    输入:
        - solution
        - horizon / samples / seed / initial_count

    输出:
        - subrectangularity: SubrectangularityReport
        - convergence: ConvergenceReport
    """
    logger.info("Running convergence_node...")
    spec = state["spec"]
    b_star = state["solution"].b_star
    seed = state.get("seed", 0)

    _, _, subrectangularity = subrectangular_certificate(spec, b_star)
    inits = extreme_initial_distributions(spec, count=state.get("initial_count", DEFAULT_INITIAL_COUNT), seed=seed)
    convergence = empirical_convergence(
        spec,
        b_star,
        inits,
        horizon=state.get("horizon", DEFAULT_HORIZON),
        samples=state.get("samples", DEFAULT_SAMPLES),
        seed=seed,
    )

    errors = []
    if not subrectangularity.ok:
        errors.append(f"subrectangularity: inconclusive for word {subrectangularity.word}")
    if not convergence.passed:
        errors.append("convergence: tolerance not reached from every initial distribution")
    return {"subrectangularity": subrectangularity, "convergence": convergence, "errors": errors}
