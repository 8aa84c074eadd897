from .bvls import (BoundedLsqProblem, BoundedLsqResult, NumericFail, kkt_violation,
                   solve_box_qp, solve_bounded_lsq)
from .sqp import NlpProblem, NlpSolution, SolverStatus, rollout, solve_nlp

__all__ = [
    "BoundedLsqProblem", "BoundedLsqResult", "NumericFail", "kkt_violation", "solve_box_qp",
    "solve_bounded_lsq", "NlpProblem", "NlpSolution", "SolverStatus", "rollout", "solve_nlp",
]
