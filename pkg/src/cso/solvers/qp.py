"""Convex QP by operator splitting (ADMM) with active-set polishing.

Solves ``min 1/2 x'Ax + q'x  s.t.  G x <= g`` with ``A`` symmetric positive
definite. The ADMM iteration follows the splitting popularized by OSQP:
one factorization of ``A + sigma I + rho G'G`` per penalty value, with the
penalty adapted to balance primal and dual residuals. The ADMM iterate is
then polished by solving the equality-constrained KKT system on the
estimated active set, which recovers the exact solution whenever the
active set has been identified.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from cso.config import DEFAULT
from cso.errors import SolverError


@dataclass
class QpProblem:
    A: object
    q: np.ndarray
    G: object = None
    g: np.ndarray | None = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        n = len(self.q)
        self.A = sp.csc_matrix(self.A, dtype=float)
        if self.A.shape != (n, n):
            raise ValueError(f"A has shape {self.A.shape}, expected {(n, n)}")
        if self.G is None:
            self.G = sp.csr_matrix((0, n))
            self.g = np.zeros(0)
        else:
            self.G = sp.csr_matrix(self.G, dtype=float)
            self.g = np.atleast_1d(np.asarray(self.g, dtype=float))
        if self.G.shape[1] != n or self.G.shape[0] != len(self.g):
            raise ValueError("dimension mismatch between G, g and q")


@dataclass
class QpResult:
    x: np.ndarray
    multipliers: np.ndarray
    active: np.ndarray
    residuals: dict
    iterations: int
    polished: bool
    history: list = field(default_factory=list, repr=False)
    objective: float = 0.0


def kkt_residuals(p: QpProblem, x, mu) -> dict:
    Gx = p.G @ x
    slack = Gx - p.g
    return {
        "stationarity": float(np.abs(p.A @ x + p.q + p.G.T @ mu).max(initial=0.0)),
        "primal": float(max(slack.max(initial=0.0), 0.0)),
        "dual": float(max(-mu.min(initial=0.0), 0.0)),
        "complementarity": float(abs(mu @ slack)) if len(mu) else 0.0,
    }


def _solve_kkt(A, Ga, rhs_x, rhs_c, reg):
    n = A.shape[0]
    k = Ga.shape[0]
    if k == 0:
        lu = spla.splu(sp.csc_matrix(A))
        return lu.solve(rhs_x), np.zeros(0)
    K = sp.bmat([[A, Ga.T], [Ga, -reg * sp.identity(k)]], format="csc")
    Kexact = sp.bmat([[A, Ga.T], [Ga, None]], format="csc")
    lu = spla.splu(K)
    rhs = np.concatenate([rhs_x, rhs_c])
    sol = lu.solve(rhs)
    for _ in range(5):
        sol = sol + lu.solve(rhs - Kexact @ sol)
    return sol[:n], sol[n:]


class _SchurSolver:
    """Equality-constrained KKT solves on active sets through one factorization of ``A``."""

    def __init__(self, p: QpProblem):
        self.p = p
        self.lu = spla.splu(sp.csc_matrix(p.A))
        self.x_free = self.lu.solve(-p.q)
        self.Gd = p.G.tocsr()
        self._cols: dict[int, np.ndarray] = {}

    def column(self, i: int) -> np.ndarray:
        col = self._cols.get(i)
        if col is None:
            col = self.lu.solve(self.Gd[i].toarray().ravel())
            self._cols[i] = col
        return col

    def solve(self, idx: np.ndarray):
        p = self.p
        if len(idx) == 0:
            return self.x_free.copy(), np.zeros(0)
        Z = np.column_stack([self.column(i) for i in idx])
        Ga = self.Gd[idx]
        S = np.asarray(Ga @ Z)
        rhs = Ga @ self.x_free - p.g[idx]
        try:
            mu = np.linalg.solve(S, rhs)
            if not np.all(np.isfinite(mu)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            mu = np.linalg.lstsq(S, rhs, rcond=None)[0]
        return self.x_free - Z @ mu, mu


def _polish(p: QpProblem, x, y, tol, schur: _SchurSolver, max_rounds=60):
    """Active-set refinement started from a primal/dual estimate.

    Primal-dual active set updates (all sign changes at once) are tried
    first; if they cycle, single add/drop moves take over.
    """
    m = len(p.g)
    active = ((y > tol) | (p.G @ x - p.g > -tol)) & (y >= 0)
    seen = set()
    for r in range(max_rounds):
        idx = np.flatnonzero(active)
        xs, mus = schur.solve(idx)
        mu = np.zeros(m)
        mu[idx] = mus
        slack = p.G @ xs - p.g
        negative = idx[mus < -tol]
        violated = np.flatnonzero(slack > tol)
        if len(negative) == 0 and len(violated) == 0:
            return xs, np.maximum(mu, 0.0), idx
        key = idx.tobytes()
        batch = key not in seen and r < max_rounds // 2
        seen.add(key)
        if batch:
            active = (mu + slack) > 0
        else:
            if len(negative):
                active[idx[np.argmin(mus)]] = False
            if len(violated):
                active[violated[np.argmax(slack[violated])]] = True
    return None


def qp_solve(
    p: QpProblem,
    tol: float = DEFAULT.qp_tol,
    max_iter: int = DEFAULT.qp_max_iter,
    rho: float = 0.1,
    sigma: float = 1e-6,
    alpha: float = 1.6,
    x0=None,
    polish: bool = True,
) -> QpResult:
    """Solve the QP; raises ``SolverError`` if the scaled KKT residuals exceed ``tol``.

    See ``relative_residuals`` for the scaling.
    """
    n, m = len(p.q), len(p.g)
    A, G, q, g = p.A, p.G, p.q, p.g
    history = []
    if m == 0:
        x, _ = _solve_kkt(A, G, -q, g, 0.0)
        mu = np.zeros(0)
        res = kkt_residuals(p, x, mu)
        return QpResult(x, mu, np.zeros(0, dtype=np.int64), res, 0, True, history,
                        objective=float(0.5 * x @ (A @ x) + q @ x))
    schur = _SchurSolver(p) if polish else None
    if polish and np.count_nonzero(G @ schur.x_free - g > 0) <= max(20, m // 20):
        # cheap path: active-set iteration from the unconstrained minimizer
        pol = _polish(p, schur.x_free, np.zeros(m), tol, schur)
        if pol is not None and _kkt_ok(p, pol[0], pol[1], tol):
            x, mu, active = pol
            return QpResult(x, mu, active, kkt_residuals(p, x, mu), 0, True, history,
                            objective=float(0.5 * x @ (A @ x) + q @ x))
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    z = np.minimum(G @ x, g)
    y = np.zeros(m)
    GT = G.T.tocsc()
    GtG = (GT @ G).tocsc()
    I = sp.identity(n, format="csc")

    def factor(r):
        return spla.splu((A + sigma * I + r * GtG).tocsc())

    lu = factor(rho)
    eps = 0.1 * tol
    it = 0
    for it in range(1, max_iter + 1):
        rhs = sigma * x - q + GT @ (rho * z - y)
        xt = lu.solve(rhs)
        zt = G @ xt
        x = alpha * xt + (1 - alpha) * x
        zh = alpha * zt + (1 - alpha) * z
        z_new = np.minimum(zh + y / rho, g)
        y = y + rho * (zh - z_new)
        z = z_new
        if it % 10 == 0 or it == max_iter:
            Gx = G @ x
            Ax = A @ x
            GTy = GT @ y
            r_prim = np.abs(Gx - z).max()
            r_dual = np.abs(Ax + q + GTy).max()
            history.append((it, float(r_prim), float(r_dual)))
            sp_ = max(np.abs(Gx).max(), np.abs(z).max(), 1e-30)
            sd_ = max(np.abs(Ax).max(), np.abs(GTy).max(), np.abs(q).max(), 1e-30)
            if r_prim <= eps * sp_ and r_dual <= eps * sd_:
                break
            if it % 50 == 0:
                ratio = np.sqrt((r_prim / sp_) / max(r_dual / sd_, 1e-30))
                new_rho = float(np.clip(rho * ratio, 1e-6, 1e6))
                if new_rho > 5 * rho or new_rho < rho / 5:
                    rho = new_rho
                    lu = factor(rho)
    mu = np.maximum(y, 0.0)
    polished = False
    if polish:
        pol = _polish(p, x, y, tol, schur)
        if pol is not None and _kkt_ok(p, pol[0], pol[1], tol):
            x, mu, polished = pol[0], pol[1], True
    if not _kkt_ok(p, x, mu, tol):
        raise SolverError(f"QP did not reach KKT tolerance {tol:g}: {relative_residuals(p, x, mu)}", history)
    slack = G @ x - g
    active = np.flatnonzero((mu > 0) | (slack > -tol * max(np.abs(g).max(initial=0.0), 1.0)))
    return QpResult(x, mu, active, kkt_residuals(p, x, mu), it, polished, history,
                    objective=float(0.5 * x @ (A @ x) + q @ x))


def relative_residuals(p: QpProblem, x, mu) -> dict:
    """KKT residuals divided by ``max(scale, 1)`` of the terms they balance.

    For problems of unit size this is the absolute residual.
    """
    res = kkt_residuals(p, x, mu)
    Gx = p.G @ x
    s_d = max(np.abs(p.q).max(initial=0.0), np.abs(p.A @ x).max(initial=0.0),
              np.abs(p.G.T @ mu).max(initial=0.0), 1.0)
    s_p = max(np.abs(p.g).max(initial=0.0), np.abs(Gx).max(initial=0.0), 1.0)
    s_mu = max(np.abs(mu).max(initial=0.0), 1.0)
    comp = float(np.abs(mu * (Gx - p.g)).max(initial=0.0))
    return {
        "stationarity": res["stationarity"] / s_d,
        "primal": res["primal"] / s_p,
        "dual": res["dual"] / s_mu,
        "complementarity": comp / (s_mu * s_p),
    }


def _kkt_ok(p, x, mu, tol):
    return all(v <= tol for v in relative_residuals(p, x, mu).values())
