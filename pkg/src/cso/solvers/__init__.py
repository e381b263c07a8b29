"""Numerical engines: dense LP, ADMM QP, preconditioned CG."""

from cso.solvers.cg import cg_solve, jacobi
from cso.solvers.lp import FEASIBLE, INFEASIBLE, UNBOUNDED, LpProblem, LpResult, lp_solve
from cso.solvers.qp import QpProblem, QpResult, kkt_residuals, qp_solve

__all__ = [
    "FEASIBLE",
    "INFEASIBLE",
    "UNBOUNDED",
    "LpProblem",
    "LpResult",
    "QpProblem",
    "QpResult",
    "cg_solve",
    "jacobi",
    "kkt_residuals",
    "lp_solve",
    "qp_solve",
]
