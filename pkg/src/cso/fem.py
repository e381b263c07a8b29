"""P1 finite elements on tetrahedral meshes: state, adjoint and objective.

Every integral involving the forcing or the objective integrand is evaluated
with the same 4-point degree-2 rule, so that the discrete shape derivative in
:mod:`cso.shapeopt` is the exact derivative of the discrete objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from cso.config import DEFAULT
from cso.errors import AssemblyError
from cso.mesh import TetMesh
from cso.solvers import cg_solve, jacobi

REACTION_NEUMANN = "reaction_neumann"
POISSON_DIRICHLET = "poisson_dirichlet"
EQUATIONS = (REACTION_NEUMANN, POISSON_DIRICHLET)

_QA = 0.5854101966249685
_QB = 0.1381966011250105
QUAD_BARY = np.array(
    [[_QA, _QB, _QB, _QB], [_QB, _QA, _QB, _QB], [_QB, _QB, _QA, _QB], [_QB, _QB, _QB, _QA]]
)
QUAD_WEIGHTS = np.full(4, 0.25)


# ---------------------------------------------------------------------------
# forcing polynomials


class Polynomial:
    """Polynomial in (x1, x2, x3) stored as ``{(i, j, k): coefficient}``."""

    def __init__(self, terms: dict):
        self.terms = {tuple(int(e) for e in k): float(v) for k, v in terms.items() if v != 0.0}

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for (i, j, k), c in self.terms.items():
            out = out + c * x[..., 0] ** i * x[..., 1] ** j * x[..., 2] ** k
        return out

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for (i, j, k), c in self.terms.items():
            p = [x[..., 0] ** i, x[..., 1] ** j, x[..., 2] ** k]
            for d, e in enumerate((i, j, k)):
                if e == 0:
                    continue
                q = list(p)
                q[d] = e * x[..., d] ** (e - 1)
                out[..., d] += c * q[0] * q[1] * q[2]
        return out

    def __add__(self, other: "Polynomial") -> "Polynomial":
        terms = dict(self.terms)
        for k, v in other.terms.items():
            terms[k] = terms.get(k, 0.0) + v
        return Polynomial(terms)

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            return Polynomial({k: v * other for k, v in self.terms.items()})
        terms: dict = {}
        for k1, v1 in self.terms.items():
            for k2, v2 in other.terms.items():
                k = tuple(a + b for a, b in zip(k1, k2))
                terms[k] = terms.get(k, 0.0) + v1 * v2
        return Polynomial(terms)

    __rmul__ = __mul__

    @property
    def degree(self) -> int:
        return max((sum(k) for k in self.terms), default=0)

    def __repr__(self):
        return f"Polynomial({self.terms})"


def constant(c: float) -> Polynomial:
    return Polynomial({(0, 0, 0): c})


def forcing_p1() -> Polynomial:
    """x1^2 + x2^2 + x3^2 - 1."""
    return Polynomial({(2, 0, 0): 1.0, (0, 2, 0): 1.0, (0, 0, 2): 1.0, (0, 0, 0): -1.0})


def forcing_p2() -> Polynomial:
    """20 (x1 + 0.4 - x2^2)^2 + x1^2 + x2^2 + x3^2 - 1."""
    inner = Polynomial({(1, 0, 0): 1.0, (0, 0, 0): 0.4, (0, 2, 0): -1.0})
    return 20.0 * (inner * inner) + forcing_p1()


FORCINGS = {"P1": forcing_p1, "P2": forcing_p2}


# ---------------------------------------------------------------------------
# objective integrands


@dataclass(frozen=True)
class Integrand:
    """``j(x, u, grad u)`` with its partial derivatives, vectorized over points."""

    j: Callable
    j_x: Callable
    j_u: Callable
    j_v: Callable
    name: str = "custom"


def _zeros_like_u(x, u, g):
    return np.zeros_like(u)


def _zeros_like_g(x, u, g):
    return np.zeros_like(g)


def _zeros_like_x(x, u, g):
    return np.zeros_like(x)


def integrand_u() -> Integrand:
    return Integrand(
        j=lambda x, u, g: u,
        j_x=_zeros_like_x,
        j_u=lambda x, u, g: np.ones_like(u),
        j_v=_zeros_like_g,
        name="u",
    )


def integrand_grad_squared() -> Integrand:
    return Integrand(
        j=lambda x, u, g: np.einsum("...i,...i->...", g, g),
        j_x=_zeros_like_x,
        j_u=_zeros_like_u,
        j_v=lambda x, u, g: 2.0 * g,
        name="grad_squared",
    )


def integrand_tracking(target: Polynomial) -> Integrand:
    """``(u - u_d(x))^2`` for a polynomial target ``u_d``."""
    return Integrand(
        j=lambda x, u, g: (u - target(x)) ** 2,
        j_x=lambda x, u, g: -2.0 * (u - target(x))[..., None] * target.gradient(x),
        j_u=lambda x, u, g: 2.0 * (u - target(x)),
        j_v=_zeros_like_g,
        name="tracking",
    )


def integrand_zero() -> Integrand:
    return Integrand(
        j=lambda x, u, g: np.zeros_like(u),
        j_x=_zeros_like_x,
        j_u=_zeros_like_u,
        j_v=_zeros_like_g,
        name="zero",
    )


@dataclass(frozen=True)
class StateProblem:
    equation: str = REACTION_NEUMANN
    forcing: Polynomial = field(default_factory=forcing_p1)
    integrand: Integrand = field(default_factory=integrand_u)

    def __post_init__(self):
        if self.equation not in EQUATIONS:
            raise ValueError(f"unknown equation {self.equation!r}; expected one of {EQUATIONS}")


@dataclass
class FemSolution:
    u: np.ndarray
    p: np.ndarray | None = None
    residuals: dict = field(default_factory=dict)
    iterations: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# geometry and assembly


@dataclass
class ElementData:
    """Per-element P1 data: volumes, basis gradients and quadrature points."""

    volumes: np.ndarray  # (M,)
    grads: np.ndarray  # (M, 4, 3)
    qpoints: np.ndarray  # (M, Q, 3)
    qweights: np.ndarray  # (M, Q) absolute weights


def element_data(mesh: TetMesh) -> ElementData:
    p = mesh.vertices[mesh.tets]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=2)  # columns
    det = np.linalg.det(J)
    vol = det / 6.0
    bad = np.flatnonzero(vol <= 0)
    if len(bad):
        raise AssemblyError(f"degenerate or inverted element {bad[0]}", element=int(bad[0]))
    Jinv = np.linalg.inv(J)  # rows are gradients of barycentrics 1..3
    g123 = Jinv
    g0 = -g123.sum(axis=1, keepdims=True)
    grads = np.concatenate([g0, g123], axis=1)
    qpoints = np.einsum("qa,mai->mqi", QUAD_BARY, p)
    qweights = vol[:, None] * QUAD_WEIGHTS[None, :]
    return ElementData(vol, grads, qpoints, qweights)


def _scatter(mesh: TetMesh, local: np.ndarray) -> sp.csr_matrix:
    rows = np.repeat(mesh.tets, 4, axis=1).ravel()
    cols = np.tile(mesh.tets, (1, 4)).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def stiffness_matrix(mesh: TetMesh, ed: ElementData | None = None) -> sp.csr_matrix:
    ed = element_data(mesh) if ed is None else ed
    local = ed.volumes[:, None, None] * np.einsum("mai,mbi->mab", ed.grads, ed.grads)
    return _scatter(mesh, local)


_MASS_REF = (np.ones((4, 4)) + np.eye(4)) / 20.0


def mass_matrix(mesh: TetMesh, ed: ElementData | None = None) -> sp.csr_matrix:
    ed = element_data(mesh) if ed is None else ed
    local = ed.volumes[:, None, None] * _MASS_REF[None]
    return _scatter(mesh, local)


def load_vector(mesh: TetMesh, f, ed: ElementData | None = None) -> np.ndarray:
    """``b_i = int f phi_i`` with ``f`` evaluated at quadrature points."""
    ed = element_data(mesh) if ed is None else ed
    fq = f(ed.qpoints)  # (M, Q)
    local = np.einsum("mq,qa->ma", ed.qweights * fq, QUAD_BARY)
    return np.bincount(mesh.tets.ravel(), local.ravel(), minlength=mesh.n_vertices)


def assemble(mesh: TetMesh, problem: StateProblem):
    """Return stiffness ``K``, mass ``M`` and load ``b``."""
    ed = element_data(mesh)
    return stiffness_matrix(mesh, ed), mass_matrix(mesh, ed), load_vector(mesh, problem.forcing, ed)


def interior_vertices(mesh: TetMesh) -> np.ndarray:
    mask = np.ones(mesh.n_vertices, dtype=bool)
    mask[mesh.boundary_vertices] = False
    return np.flatnonzero(mask)


def _solve_spd(mesh, problem, K, M, rhs, tol, max_iter):
    if problem.equation == REACTION_NEUMANN:
        A = (K + M).tocsr()
        x, info = cg_solve(A, rhs, jacobi(A.diagonal()), tol=tol, max_iter=max_iter)
        res = np.linalg.norm(A @ x - rhs)
        return x, info, res
    free = interior_vertices(mesh)
    A = K[free][:, free].tocsr()
    x = np.zeros(mesh.n_vertices)
    if len(free):
        x[free], info = cg_solve(A, rhs[free], jacobi(A.diagonal()), tol=tol, max_iter=max_iter)
        res = np.linalg.norm(A @ x[free] - rhs[free])
    else:
        info, res = {"iterations": 0, "residuals": [0.0]}, 0.0
    return x, info, res


def solve_state(mesh: TetMesh, problem: StateProblem, tol=DEFAULT.cg_rtol, max_iter=DEFAULT.cg_max_iter, assembled=None):
    K, M, b = assemble(mesh, problem) if assembled is None else assembled
    u, info, res = _solve_spd(mesh, problem, K, M, b, tol, max_iter)
    return FemSolution(u, residuals={"state": res}, iterations={"state": info["iterations"]})


def evaluate_at_quadrature(mesh: TetMesh, u: np.ndarray, ed: ElementData):
    """Values (M, Q) and element-constant gradients (M, 3) of a P1 field."""
    ue = u[mesh.tets]  # (M, 4)
    uq = ue @ QUAD_BARY.T
    gu = np.einsum("ma,mai->mi", ue, ed.grads)
    return uq, gu


def adjoint_rhs(mesh: TetMesh, problem: StateProblem, u: np.ndarray, ed: ElementData | None = None):
    """``-int (j_u w + j_v . grad w)`` for every P1 basis function ``w``."""
    ed = element_data(mesh) if ed is None else ed
    uq, gu = evaluate_at_quadrature(mesh, u, ed)
    gq = np.broadcast_to(gu[:, None, :], ed.qpoints.shape)
    ju = problem.integrand.j_u(ed.qpoints, uq, gq)
    jv = problem.integrand.j_v(ed.qpoints, uq, gq)
    local = np.einsum("mq,qa->ma", ed.qweights * ju, QUAD_BARY)
    local += np.einsum("mq,mqi,mai->ma", ed.qweights, jv, ed.grads)
    return -np.bincount(mesh.tets.ravel(), local.ravel(), minlength=mesh.n_vertices)


def solve_adjoint(mesh: TetMesh, problem: StateProblem, u: np.ndarray, tol=DEFAULT.cg_rtol, max_iter=DEFAULT.cg_max_iter, assembled=None):
    """Adjoint ``p`` with ``a(p, w) = -int (j_u w + j_v . grad w)``."""
    ed = element_data(mesh)
    if assembled is None:
        K, M = stiffness_matrix(mesh, ed), mass_matrix(mesh, ed)
    else:
        K, M = assembled[0], assembled[1]
    rhs = adjoint_rhs(mesh, problem, u, ed)
    p, info, res = _solve_spd(mesh, problem, K, M, rhs, tol, max_iter)
    return FemSolution(u, p, residuals={"adjoint": res}, iterations={"adjoint": info["iterations"]})


def solve(mesh: TetMesh, problem: StateProblem, tol=DEFAULT.cg_rtol) -> FemSolution:
    """State and adjoint in one go."""
    assembled = assemble(mesh, problem)
    st = solve_state(mesh, problem, tol, assembled=assembled)
    adj = solve_adjoint(mesh, problem, st.u, tol, assembled=assembled)
    return FemSolution(
        st.u,
        adj.p,
        residuals={**st.residuals, **adj.residuals},
        iterations={**st.iterations, **adj.iterations},
    )


def objective(mesh: TetMesh, problem: StateProblem, u: np.ndarray, ed: ElementData | None = None) -> float:
    ed = element_data(mesh) if ed is None else ed
    uq, gu = evaluate_at_quadrature(mesh, u, ed)
    gq = np.broadcast_to(gu[:, None, :], ed.qpoints.shape)
    return float(np.sum(ed.qweights * problem.integrand.j(ed.qpoints, uq, gq)))


def evaluate_objective(mesh: TetMesh, problem: StateProblem) -> float:
    """Solve the state equation on ``mesh`` and return the objective."""
    return objective(mesh, problem, solve_state(mesh, problem).u)
