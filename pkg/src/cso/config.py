"""Centralized numerical tolerances and defaults."""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    cg_rtol: float = 1e-10
    cg_max_iter: int = 10_000
    lp_feas: float = 1e-9
    qp_tol: float = 1e-8
    qp_max_iter: int = 20_000
    # relative KKT tolerance of the descent subproblem
    descent_qp_tol: float = 1e-6
    # local convexity certification
    certify_eps: float = 1e-3
    certify_k_max: int = 20
    certify_tol: float = 1e-12
    hull_tol: float = 1e-9
    # isoparametric checks
    psd_tol: float = 1e-10
    jump_tol: float = 1e-10
    surface_samples: int = 14


DEFAULT = Tolerances()
