"""Dense two-phase simplex method with Bland's anti-cycling rule.

Meant for the tiny linear programs arising per boundary vertex (tens of
variables); there is no sparsity handling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cso.config import DEFAULT
from cso.errors import SolverError

MAX_DENSE_VARIABLES = 500

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass
class LpProblem:
    """``min c.x`` s.t. ``G x <= g``, ``E x = e``, ``x >= lower``.

    Entries of ``lower`` may be ``-inf`` (free variable); ``lower=None``
    means all variables are free.
    """

    c: np.ndarray
    G: np.ndarray | None = None
    g: np.ndarray | None = None
    E: np.ndarray | None = None
    e: np.ndarray | None = None
    lower: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        n = len(self.c)
        self.G, self.g = _rows(self.G, self.g, n, "G/g")
        self.E, self.e = _rows(self.E, self.e, n, "E/e")
        if self.lower is None:
            self.lower = np.full(n, -np.inf)
        else:
            self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (n,)).copy()
        if n > MAX_DENSE_VARIABLES:
            raise ValueError(f"dense LP limited to {MAX_DENSE_VARIABLES} variables, got {n}")


def _rows(M, b, n, name):
    if M is None:
        return np.zeros((0, n)), np.zeros(0)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if M.shape[1] != n or M.shape[0] != len(b):
        raise ValueError(f"dimension mismatch in {name}: {M.shape} vs {len(b)} rows, {n} columns")
    return M, b


@dataclass
class LpResult:
    status: str
    x: np.ndarray | None = None
    objective: float | None = None
    iterations: int = 0

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE


def _pivot(T, row, col):
    T[row] /= T[row, col]
    others = np.flatnonzero(T[:, col])
    others = others[others != row]
    T[others] -= np.outer(T[others, col], T[row])


def _run_simplex(T, basis, allowed, tol, max_iter):
    """Minimize with reduced costs in the last row of the tableau.

    Returns ``"optimal"`` or ``"unbounded"`` and the iteration count.
    """
    m = T.shape[0] - 1
    for it in range(max_iter):
        red = T[-1, :-1]
        candidates = np.flatnonzero((red < -tol) & allowed)
        if len(candidates) == 0:
            return "optimal", it
        col = candidates[0]  # Bland: lowest index enters
        column = T[:m, col]
        pos = np.flatnonzero(column > tol)
        if len(pos) == 0:
            return "unbounded", it
        ratios = T[pos, -1] / column[pos]
        best = ratios.min()
        ties = pos[ratios <= best + tol * max(1.0, abs(best))]
        row = ties[np.argmin(basis[ties])]  # Bland: lowest basic index leaves
        _pivot(T, row, col)
        basis[row] = col
    raise SolverError(f"simplex exceeded {max_iter} iterations")


def lp_solve(problem: LpProblem, tol: float = DEFAULT.lp_feas, max_iter: int = 10_000) -> LpResult:
    """Solve a small dense LP by the two-phase simplex method."""
    p = problem
    n = len(p.c)
    bounded = np.isfinite(p.lower)
    shift = np.where(bounded, p.lower, 0.0)
    # column map: x = shift + P y, y >= 0; free variables are split
    free = np.flatnonzero(~bounded)
    P = np.hstack([np.eye(n), -np.eye(n)[:, free]])
    ny = P.shape[1]
    Gy, gy = p.G @ P, p.g - p.G @ shift
    Ey, ey = p.E @ P, p.e - p.E @ shift
    mi, me = len(gy), len(ey)
    m = mi + me
    # rows: [Gy I | gy], [Ey 0 | ey]
    A = np.zeros((m, ny + mi))
    A[:mi, :ny] = Gy
    A[:mi, ny:] = np.eye(mi)
    A[mi:, :ny] = Ey
    b = np.concatenate([gy, ey])
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1
    ncols = ny + mi
    basis = np.full(m, -1, dtype=np.int64)
    for i in range(mi):
        if not neg[i]:
            basis[i] = ny + i
    need_art = np.flatnonzero(basis < 0)
    na = len(need_art)
    T = np.zeros((m + 1, ncols + na + 1))
    T[:m, :ncols] = A
    T[:m, -1] = b
    for k, i in enumerate(need_art):
        T[i, ncols + k] = 1.0
        basis[i] = ncols + k
    iters = 0
    if na:
        # phase 1: minimize the sum of artificials
        T[-1, ncols : ncols + na] = 1.0
        for i in need_art:
            T[-1] -= T[i]
        allowed = np.ones(ncols + na, dtype=bool)
        _, it = _run_simplex(T, basis, allowed, tol * 1e-3, max_iter)
        iters += it
        if -T[-1, -1] > tol:
            return LpResult(INFEASIBLE, iterations=iters)
        # drive remaining artificials out of the basis
        for row in np.flatnonzero(basis >= ncols):
            nz = np.flatnonzero(np.abs(T[row, :ncols]) > tol)
            if len(nz):
                _pivot(T, row, nz[0])
                basis[row] = nz[0]
        keep = basis < ncols
        T = np.vstack([T[:m][keep], T[-1:]])
        basis = basis[keep]
        m = len(basis)
        T = np.delete(T, np.s_[ncols : ncols + na], axis=1)
    # phase 2
    cy = P.T @ p.c
    T[-1] = 0.0
    T[-1, :ny] = cy
    for i, bi in enumerate(basis):
        if T[-1, bi] != 0.0:
            T[-1] -= T[-1, bi] * T[i]
    status, it = _run_simplex(T, basis, np.ones(ncols, dtype=bool), tol * 1e-3, max_iter)
    iters += it
    if status == "unbounded":
        return LpResult(UNBOUNDED, iterations=iters)
    y = np.zeros(ncols)
    y[basis] = T[:m, -1]
    y = np.maximum(y, 0.0)
    x = shift + P @ y[:ny]
    return LpResult(FEASIBLE, x, float(p.c @ x), iters)
