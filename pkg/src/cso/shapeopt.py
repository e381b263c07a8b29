"""Convexity-constrained shape optimization by perturbation of identity.

Each iteration computes the discrete shape gradient ``G`` (so that
``G . W`` is the derivative of the discrete objective along the vertex
displacement ``W``), solves the elasticity-metric QP with linearized
support-plane constraints, and takes a backtracking step followed by the
hull projection of :func:`cso.dconvex.post_process`.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from cso import dconvex
from cso.config import DEFAULT, Tolerances
from cso.errors import AssemblyError, InversionError, SolverError
from cso.fem import (
    QUAD_BARY,
    REACTION_NEUMANN,
    StateProblem,
    element_data,
    evaluate_at_quadrature,
    objective,
    solve,
    solve_state,
)
from cso.mesh import TetMesh, element_quality
from cso.solvers import QpProblem, qp_solve

log = logging.getLogger(__name__)

LOG_COLUMNS = ["k", "J", "volume", "tau", "dJ", "max_C", "t", "qp_iterations"]


@dataclass(frozen=True)
class ElasticityParams:
    E: float = 0.5
    nu: float = 0.2
    delta: float = 0.5

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError("E must be positive")
        if not 0 <= self.nu < 0.5:
            raise ValueError("nu out of range [0, 0.5)")
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    @property
    def mu(self) -> float:
        return self.E / (2 * (1 + self.nu))

    @property
    def lame(self) -> float:
        return self.E * self.nu / ((1 + self.nu) * (1 - 2 * self.nu))


def elasticity_matrix(mesh: TetMesh, params: ElasticityParams = ElasticityParams()) -> sp.csr_matrix:
    """``a(V, W) = int 2 mu eps(V):eps(W) + lam div V div W + delta V.W``.

    Dofs are vertex-major, ``3 * vertex + component``.
    """
    ed = element_data(mesh)
    g, vol = ed.grads, ed.volumes
    mu, lam = params.mu, params.lame
    dot = np.einsum("mai,mbi->mab", g, g)
    # local[m, a, i, b, j]
    local = mu * np.einsum("mab,ij->maibj", dot, np.eye(3))
    local += mu * np.einsum("maj,mbi->maibj", g, g)
    local += lam * np.einsum("mai,mbj->maibj", g, g)
    mass = (np.ones((4, 4)) + np.eye(4)) / 20.0
    local += params.delta * np.einsum("ab,ij->aibj", mass, np.eye(3))[None]
    local *= vol[:, None, None, None, None]
    dof = (3 * mesh.tets[:, :, None] + np.arange(3)).reshape(len(vol), 12)
    rows = np.repeat(dof, 12, axis=1).ravel()
    cols = np.tile(dof, (1, 12)).ravel()
    n = 3 * mesh.n_vertices
    return sp.csr_matrix((local.reshape(len(vol), 144).ravel(), (rows, cols)), shape=(n, n))


def shape_gradient(mesh: TetMesh, problem: StateProblem, u: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Vector ``G`` with ``G . W = J'(Omega_h; W)`` for vertex displacements ``W``.

    Derivative of the discrete Lagrangian ``J(u) + a(u, p) - l(p)`` with the
    nodal values of ``u`` and ``p`` held fixed, evaluated with the same
    quadrature as the state equation.
    """
    ed = element_data(mesh)
    w, x, grads, vol = ed.qweights, ed.qpoints, ed.grads, ed.volumes
    uq, gu = evaluate_at_quadrature(mesh, u, ed)
    pq, gp = evaluate_at_quadrature(mesh, p, ed)
    gq = np.broadcast_to(gu[:, None, :], x.shape)
    itg = problem.integrand
    j = itg.j(x, uq, gq)
    jx = itg.j_x(x, uq, gq)
    jv = itg.j_v(x, uq, gq)
    f = problem.forcing(x)
    gf = problem.forcing.gradient(x)

    # objective: j_x . V + j div V - j_v . DV^T grad u
    loc = np.einsum("mq,mqi,qa->mai", w, jx, QUAD_BARY)
    loc += (w * j).sum(axis=1)[:, None, None] * grads
    loc -= np.einsum("mq,mqk,mak->ma", w, jv, grads)[:, :, None] * gu[:, None, :]
    # stiffness: grad p^T [div V I - DV - DV^T] grad u
    pu = np.einsum("mi,mi->m", gp, gu)
    loc += vol[:, None, None] * (
        pu[:, None, None] * grads
        - np.einsum("mai,mi->ma", grads, gu)[:, :, None] * gp[:, None, :]
        - np.einsum("mai,mi->ma", grads, gp)[:, :, None] * gu[:, None, :]
    )
    # load: - div(f V) p
    loc -= np.einsum("mq,mqi,qa->mai", w * pq, gf, QUAD_BARY)
    loc -= (w * pq * f).sum(axis=1)[:, None, None] * grads
    if problem.equation == REACTION_NEUMANN:
        loc += (w * uq * pq).sum(axis=1)[:, None, None] * grads
    G = np.zeros((mesh.n_vertices, 3))
    np.add.at(G, mesh.tets, loc)
    return G.ravel()


def symmetry_plane_vertices(mesh: TetMesh, tol: float = 1e-12) -> np.ndarray:
    """Boundary vertices on ``x3 = 0`` (gliding boundary of half domains)."""
    bv = mesh.boundary_vertices
    scale = max(np.abs(mesh.vertices).max(), 1.0)
    return bv[np.abs(mesh.vertices[bv, 2]) <= tol * scale]


def free_dofs(mesh: TetMesh, half: bool) -> np.ndarray:
    n = 3 * mesh.n_vertices
    if not half:
        return np.arange(n)
    mask = np.ones(n, dtype=bool)
    mask[3 * symmetry_plane_vertices(mesh) + 2] = False
    return np.flatnonzero(mask)


@dataclass
class DescentResult:
    V: np.ndarray
    qp_iterations: int
    t0: float
    multipliers: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))


def descent_step(
    mesh: TetMesh,
    G: np.ndarray,
    A,
    certificates,
    t0: float = 1.0,
    half: bool = False,
    tol: Tolerances = DEFAULT,
    retries: int = 5,
) -> DescentResult:
    """Solve ``min 1/2 V'AV + G'V`` s.t. ``C + t0 DC V <= 0``.

    Constraint rows are scaled to unit gradient norm. On QP failure ``t0``
    is halved, at most ``retries`` times, before the error propagates.
    """
    n = 3 * mesh.n_vertices
    if not np.any(G):
        return DescentResult(np.zeros(n), 0, t0)
    free = free_dofs(mesh, half)
    C, DC = dconvex.constraint_jacobian(certificates, mesh.n_vertices)
    Af = sp.csc_matrix(A)[free][:, free]
    Gf = G[free]
    D = DC.tocsc()[:, free].tocsr()
    norms = np.sqrt(np.asarray(D.multiply(D).sum(axis=1)).ravel())
    keep = norms > 1e-14 * max(norms.max(initial=0.0), 1e-300)
    if np.any(~keep & (C > 0)):
        log.warning("%d violated constraints have zero gradient", int(np.sum(~keep & (C > 0))))
    D, C, norms = D[keep], C[keep], norms[keep]
    inv = sp.diags(1.0 / norms)
    last = None
    for _ in range(retries + 1):
        prob = QpProblem(Af, Gf, inv @ D * t0, -C / norms)
        try:
            res = qp_solve(prob, tol=tol.descent_qp_tol, max_iter=tol.qp_max_iter)
        except SolverError as exc:
            last = exc
            t0 *= 0.5
            continue
        V = np.zeros(n)
        V[free] = res.x
        return DescentResult(V, res.iterations, t0, res.multipliers)
    raise SolverError(f"descent QP failed after {retries} retries: {last}", getattr(last, "history", None))


def max_constraint(mesh: TetMesh, certificates) -> float:
    """Largest ``C^z_i`` with the multipliers of ``certificates`` frozen."""
    X = mesh.vertices
    out = -np.inf
    for c in certificates:
        vals = dconvex.constraint_values_at(X, c.patch.center, c.patch.ring, c.lam)
        out = max(out, float(vals.max()))
    return out


@dataclass
class LineSearchResult:
    t: float | None
    mesh: TetMesh
    J: float
    u: np.ndarray | None
    max_C: float
    trials: int
    reason: str = ""


def line_search(
    mesh: TetMesh,
    problem: StateProblem,
    V: np.ndarray,
    J: float,
    dJ: float,
    certificates,
    quality_floor: float = 0.0,
    c1: float = 1e-4,
    delta_c: float | None = None,
    max_halvings: int = 30,
) -> LineSearchResult:
    """Largest ``t = 2^-k`` passing Armijo, convexity cap and mesh checks."""
    if not np.any(V):
        return LineSearchResult(1.0, mesh, J, None, max_constraint(mesh, certificates), 0)
    delta_c = 1e-3 * mesh.h if delta_c is None else delta_c
    W = V.reshape(-1, 3)
    reason = ""
    for k in range(max_halvings + 1):
        t = 0.5**k
        trial = mesh.with_vertices(mesh.vertices + t * W)
        vol = trial.volumes
        if np.any(vol <= 0):
            reason = "inversion"
            continue
        if quality_floor > 0 and element_quality(trial).min() < quality_floor:
            reason = "quality"
            continue
        mc = max_constraint(trial, certificates)
        if mc > delta_c:
            reason = "convexity"
            continue
        try:
            u = solve_state(trial, problem).u
        except (AssemblyError, SolverError):
            reason = "state"
            continue
        Jt = objective(trial, problem, u)
        if Jt <= J + c1 * t * dJ:
            return LineSearchResult(t, trial, Jt, u, mc, k + 1)
        reason = "armijo"
    return LineSearchResult(None, mesh, J, None, max_constraint(mesh, certificates), max_halvings + 1, reason)


@dataclass
class OptimizationState:
    mesh: TetMesh
    u: np.ndarray
    p: np.ndarray
    J: float
    G: np.ndarray
    V: np.ndarray
    tau: float
    k: int
    certificates: list
    report: dconvex.ConvexityReport | None
    history: list = field(default_factory=list)
    status: str = "running"
    J0: float = float("nan")
    volume0: float = float("nan")

    @property
    def max_C(self) -> float:
        return max(float(c.values.max()) for c in self.certificates)

    def write_log(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
            w.writeheader()
            for row in self.history:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def optimize(
    mesh: TetMesh,
    problem: StateProblem,
    params: ElasticityParams = ElasticityParams(),
    eps_stop: float = 1e-4,
    max_iter: int = 200,
    relative: bool = True,
    t0: float = 1.0,
    half: bool = False,
    quality_factor: float = 0.1,
    post_process: bool = True,
    tol: Tolerances = DEFAULT,
    callback=None,
) -> OptimizationState:
    """Run the descent loop until ``tau = |J'(Omega; V)| < eps_stop``.

    With ``relative`` the threshold is ``eps_stop`` times the first ``tau``.
    Steps must keep element quality above ``quality_factor`` times the
    initial minimum. The returned state carries ``status`` in
    {"converged", "stagnated", "max_iter"} and the per-iteration log.
    """
    quality_floor = quality_factor * float(element_quality(mesh).min())
    certs = dconvex.certify_mesh(mesh, tol.certify_eps, tol.certify_k_max)
    sol = solve(mesh, problem, tol.cg_rtol)
    J = objective(mesh, problem, sol.u)
    state = OptimizationState(mesh, sol.u, sol.p, J, np.zeros(3 * mesh.n_vertices),
                              np.zeros(3 * mesh.n_vertices), math.inf, 0, certs, None,
                              J0=J, volume0=mesh.volume)
    threshold = None
    for k in range(1, max_iter + 1):
        state.k = k
        A = elasticity_matrix(state.mesh, params)
        G = shape_gradient(state.mesh, problem, state.u, state.p)
        step = descent_step(state.mesh, G, A, state.certificates, t0, half, tol)
        dJ = float(G @ step.V)
        tau = abs(dJ)
        state.G, state.V, state.tau = G, step.V, tau
        if threshold is None:
            threshold = eps_stop * tau if relative else eps_stop
        row = {"k": k, "J": state.J, "volume": state.mesh.volume, "tau": tau, "dJ": dJ,
               "max_C": state.max_C, "t": 0.0, "qp_iterations": step.qp_iterations}
        if tau < threshold:
            state.history.append(row)
            state.status = "converged"
            break
        ls = line_search(state.mesh, problem, step.V, state.J, dJ, state.certificates, quality_floor)
        if ls.t is None:
            state.history.append(row)
            state.status = "stagnated"
            log.info("line search failed at k=%d (%s)", k, ls.reason)
            break
        new_mesh = ls.mesh
        certs = dconvex.certify_mesh(new_mesh, tol.certify_eps, tol.certify_k_max)
        if post_process:
            report = dconvex.check_global(new_mesh, certificates=certs)
            if len(report.violating):
                try:
                    new_mesh = dconvex.post_process(new_mesh, report)
                    certs = dconvex.certify_mesh(new_mesh, tol.certify_eps, tol.certify_k_max)
                    report = dconvex.check_global(new_mesh, certificates=certs)
                except InversionError as exc:
                    log.warning("post-processing skipped: %s", exc)
            state.report = report
        sol = solve(new_mesh, problem, tol.cg_rtol)
        state.mesh, state.u, state.p, state.certificates = new_mesh, sol.u, sol.p, certs
        state.J = objective(new_mesh, problem, sol.u)
        row.update(J=state.J, volume=new_mesh.volume, max_C=state.max_C, t=ls.t)
        state.history.append(row)
        log.debug("k=%d J=%.6g |Omega|=%.6g tau=%.3g t=%g", k, state.J, new_mesh.volume, tau, ls.t)
        if callback is not None:
            callback(state)
    else:
        state.status = "max_iter"
    return state
