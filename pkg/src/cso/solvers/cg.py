"""Preconditioned conjugate gradients."""

from __future__ import annotations

import numpy as np

from cso.config import DEFAULT
from cso.errors import SolverError


def jacobi(diagonal):
    inv = 1.0 / np.asarray(diagonal, dtype=float)
    return lambda r: inv * r


def cg_solve(matvec, b, precond=None, tol=DEFAULT.cg_rtol, max_iter=DEFAULT.cg_max_iter, x0=None):
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    ``matvec`` may be a callable or anything supporting ``@``. Stops when
    ``||b - A x|| <= tol ||b||``; the residual is recomputed explicitly at
    exit so the bound holds for the returned iterate.

    Returns
    -------
    x : ndarray
    info : dict
        ``iterations`` and ``residuals`` (relative, per iteration).
    """
    if not callable(matvec):
        op = matvec
        matvec = lambda v: op @ v  # noqa: E731
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    history = []
    if bnorm == 0.0:
        return np.zeros_like(b), {"iterations": 0, "residuals": [0.0]}
    M = precond if precond is not None else (lambda r: r)
    r = b - matvec(x)
    rel = np.linalg.norm(r) / bnorm
    history.append(rel)
    if rel <= tol:
        return x, {"iterations": 0, "residuals": history}
    z = M(r)
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        Ap = matvec(p)
        pAp = p @ Ap
        if pAp <= 0:
            raise SolverError("operator is not positive definite on the Krylov space", history)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rel = np.linalg.norm(r) / bnorm
        history.append(rel)
        if rel <= tol:
            # guard against drift of the recursive residual
            r = b - matvec(x)
            rel = np.linalg.norm(r) / bnorm
            history[-1] = rel
            if rel <= tol:
                return x, {"iterations": it, "residuals": history}
        z = M(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"CG did not converge in {max_iter} iterations (residual {rel:.3e})", history)
