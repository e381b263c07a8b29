"""Curved (quadratic) boundary patches and their convexity conditions.

Two levels are covered. For a surface patch ``a_T`` given by six control
points, ``C_H`` is the matrix of second derivatives against the
unnormalized normal and ``C_K`` the signed volume across a shared side.
For graph functions on a planar triangulation, the piecewise quadratic
interpolant is made convex by adding a multiple of a P1 function with
positive normal-derivative jumps and a multiple of ``|x|^2 / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import Delaunay

from cso.config import DEFAULT
from cso.errors import DomainError, MeshAssumptionError, StructureError
from cso.io import write_surface_vtk

# reference corners of the triangle {x1, x2 >= 0, x1 + x2 <= 1}
REF_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
# local corner pairs of the edge points P12, P13, P23
EDGE_PAIRS = ((0, 1), (0, 2), (1, 2))
# barycentric gradients in reference coordinates (lam1 = 1 - x1 - x2)
_DLAM = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def _gauss_collapsed(n1: int, n2: int):
    g1, w1 = np.polynomial.legendre.leggauss(n1)
    g2, w2 = np.polynomial.legendre.leggauss(n2)
    s, ws = (g1 + 1) / 2, w1 / 2
    t, wt = (g2 + 1) / 2, w2 / 2
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt) * (1 - S)
    pts = np.column_stack([S.ravel(), (T * (1 - S)).ravel()])
    return pts, W.ravel()


def sample_points(n: int = DEFAULT.surface_samples) -> np.ndarray:
    """Interior sample points of the reference triangle.

    Collapsed Gauss-Legendre points: ``n // 2`` nodes along ``x1`` times 2
    along the collapsed direction (``n = 14`` gives a 7 x 2 product).
    """
    if n < 2 or n % 2:
        raise ValueError("number of sample points must be even and >= 2")
    return _gauss_collapsed(n // 2, 2)[0]


def triangle_quadrature(order: int = 8):
    """Collapsed Gauss rule on the reference triangle, exact to ``2 order - 2``."""
    return _gauss_collapsed(order, order)


# ---------------------------------------------------------------------------
# surface patches


@dataclass(frozen=True)
class QuadraticSurfacePatch:
    """Quadratic patch ``a(x) = sum P_i lam_i + sum 4 lam_i lam_j D_ij``.

    ``control`` rows are ``P1, P2, P3, P12, P13, P23``. ``outward_sign``
    is +1 when ``a_x1 x a_x2`` points to the outside of the body.
    """

    control: np.ndarray
    outward_sign: int = 1

    def __post_init__(self):
        c = np.asarray(self.control, dtype=float)
        if c.shape != (6, 3):
            raise ValueError("control must hold 6 points in 3D")
        if self.outward_sign not in (1, -1):
            raise ValueError("outward_sign must be +1 or -1")
        object.__setattr__(self, "control", c)

    @property
    def corners(self) -> np.ndarray:
        return self.control[:3]

    @property
    def offsets(self) -> np.ndarray:
        """``D_ij = P_ij - (P_i + P_j) / 2`` for the three edges."""
        P = self.control
        return np.array([P[3 + k] - 0.5 * (P[i] + P[j]) for k, (i, j) in enumerate(EDGE_PAIRS)])

    @cached_property
    def monomials(self) -> np.ndarray:
        """Coefficients of ``1, x1, x2, x1^2, x1 x2, x2^2`` (one row each)."""
        P, D = self.control, self.offsets
        return np.array([
            P[0],
            P[1] - P[0] + 4 * D[0],
            P[2] - P[0] + 4 * D[1],
            -4 * D[0],
            4 * (D[2] - D[0] - D[1]),
            -4 * D[1],
        ])

    @classmethod
    def from_function(cls, corners, fn: Callable, outward_sign: int = 1) -> "QuadraticSurfacePatch":
        """Patch over a parameter triangle with control points ``fn(node)``."""
        c = np.asarray(corners, dtype=float)
        nodes = np.vstack([c, [(c[i] + c[j]) / 2 for i, j in EDGE_PAIRS]])
        return cls(np.array([fn(x) for x in nodes], dtype=float), outward_sign)


def patch_derivatives(patch: QuadraticSurfacePatch, x):
    """Value and first/second derivatives of ``a`` at reference point ``x``."""
    x1, x2 = float(x[0]), float(x[1])
    c0, c1, c2, c11, c12, c22 = patch.monomials
    a = c0 + c1 * x1 + c2 * x2 + c11 * x1 * x1 + c12 * x1 * x2 + c22 * x2 * x2
    d1 = c1 + 2 * c11 * x1 + c12 * x2
    d2 = c2 + c12 * x1 + 2 * c22 * x2
    return a, d1, d2, 2 * c11, c12, 2 * c22


def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def outward_normal(patch: QuadraticSurfacePatch, x, unit: bool = False) -> np.ndarray:
    _, a1, a2, *_ = patch_derivatives(patch, x)
    n = patch.outward_sign * _cross(a1, a2)
    if unit:
        norm = np.linalg.norm(n)
        if norm == 0:
            raise DomainError("rank-deficient patch Jacobian")
        n = n / norm
    return n


def c_h_matrix(patch: QuadraticSurfacePatch, x, tol: float = DEFAULT.psd_tol):
    """Infinitesimal convexity matrix at ``x`` and its PSD flag.

    Entries are ``-<a_{x_i x_j}, N>`` with ``N`` the unnormalized outward
    normal, so that convex patches give positive semidefinite matrices.
    """
    _, a1, a2, a11, a12, a22 = patch_derivatives(patch, x)
    n = _cross(a1, a2)
    scale = np.linalg.norm(a1) * np.linalg.norm(a2)
    if np.linalg.norm(n) <= 1e-12 * max(scale, 1e-300):
        raise DomainError("rank-deficient patch Jacobian")
    n = -patch.outward_sign * n
    H = np.array([[a11 @ n, a12 @ n], [a12 @ n, a22 @ n]])
    return H, bool(np.linalg.eigvalsh(H)[0] >= -tol)


def c_h_sweep(patch: QuadraticSurfacePatch, n_samples: int = DEFAULT.surface_samples) -> float:
    """Smallest ``C_H`` eigenvalue over the sample points."""
    return min(np.linalg.eigvalsh(c_h_matrix(patch, x)[0])[0] for x in sample_points(n_samples))


def kink_value(nu_minus, tau, nu_plus) -> float:
    """``det[nu_-, tau, nu_+] = nu_- . (tau x nu_+)``."""
    return float(np.dot(nu_minus, _cross(tau, nu_plus)))


@dataclass(frozen=True)
class SharedSide:
    plus: QuadraticSurfacePatch
    minus: QuadraticSurfacePatch | None
    plus_corners: tuple  # local corner indices (i, j) in the plus patch
    minus_corners: tuple | None

    def reference_points(self, s: float):
        i, j = self.plus_corners
        xp = (1 - s) * REF_CORNERS[i] + s * REF_CORNERS[j]
        if self.minus is None:
            return xp, None
        k, m = self.minus_corners
        return xp, (1 - s) * REF_CORNERS[k] + s * REF_CORNERS[m]


def _edge_point(patch, i, j):
    return patch.control[3 + EDGE_PAIRS.index((min(i, j), max(i, j)))]


def shared_side(plus: QuadraticSurfacePatch, minus: QuadraticSurfacePatch, tol: float = 1e-12) -> SharedSide:
    """Locate the side common to two patches (corners and edge point match)."""
    scale = max(np.abs(plus.control).max(), np.abs(minus.control).max(), 1.0)
    match = {}
    for i in range(3):
        for k in range(3):
            if np.linalg.norm(plus.corners[i] - minus.corners[k]) <= tol * scale:
                match[i] = k
    if len(match) != 2:
        raise StructureError("patches do not share exactly one side")
    i, j = sorted(match)
    if np.linalg.norm(_edge_point(plus, i, j) - _edge_point(minus, match[i], match[j])) > tol * scale:
        raise StructureError("patches share corners but not the side curve")
    return SharedSide(plus, minus, (i, j), (match[i], match[j]))


def c_k_value(side: SharedSide, s: float, oriented: bool = True, unit: bool = False) -> float:
    """Kink value ``N_- . (tau x N_+)`` at parameter ``s`` along the side.

    ``N_+``, ``N_-`` are unnormalized outward normals and ``tau`` the side
    tangent. With ``oriented`` the tangent is flipped if necessary so that
    the plus patch lies to its left (``N_+ x tau`` points into the plus
    patch); otherwise the plus patch's own side parametrization is used.
    """
    if side.minus is None:
        raise StructureError("side has a single adjacent patch")
    xp, xm = side.reference_points(s)
    i, j = side.plus_corners
    _, a1, a2, *_ = patch_derivatives(side.plus, xp)
    J = np.column_stack([a1, a2])
    tau = J @ (REF_CORNERS[j] - REF_CORNERS[i])
    n_plus = outward_normal(side.plus, xp)
    n_minus = outward_normal(side.minus, xm)
    if oriented:
        inward = J @ (REF_CORNERS.mean(axis=0) - xp)
        if np.dot(_cross(n_plus, tau), inward) < 0:
            tau = -tau
    if unit:
        n_minus, tau, n_plus = (v / np.linalg.norm(v) for v in (n_minus, tau, n_plus))
    return kink_value(n_minus, tau, n_plus)


EQUATOR = "equator"
INTERIOR = "interior"
RIM = "rim"


def _wall_normal(side: SharedSide, xp) -> tuple[np.ndarray, np.ndarray]:
    """Unit normal of the vertical wall under a rim side, and the oriented tangent."""
    i, j = side.plus_corners
    _, a1, a2, *_ = patch_derivatives(side.plus, xp)
    J = np.column_stack([a1, a2])
    tau = J @ (REF_CORNERS[j] - REF_CORNERS[i])
    inward = J @ (REF_CORNERS.mean(axis=0) - xp)
    n = np.array([tau[1], -tau[0], 0.0])
    if np.dot(n[:2], inward[:2]) > 0:
        n = -n
    return n / np.linalg.norm(n), tau


def c_k_plus(side: SharedSide, kind: str, s: float, oriented: bool = True) -> float:
    """Half-domain kink condition at parameter ``s``.

    Equator sides return ``nu_+^3``. Rim sides (boundary sides above the
    symmetry plane) are checked against the vertical wall joining the
    surface to its mirror image; interior sides delegate to ``c_k_value``.
    """
    xp, _ = side.reference_points(s)
    if kind == EQUATOR:
        return float(outward_normal(side.plus, xp, unit=True)[2])
    if kind == RIM:
        nu_w, tau = _wall_normal(side, xp)
        nu_p = outward_normal(side.plus, xp, unit=True)
        _, a1, a2, *_ = patch_derivatives(side.plus, xp)
        inward = np.column_stack([a1, a2]) @ (REF_CORNERS.mean(axis=0) - xp)
        if np.dot(_cross(nu_p, tau), inward) < 0:
            tau = -tau
        return kink_value(nu_w, tau / np.linalg.norm(tau), nu_p)
    return c_k_value(side, s, oriented)


# ---------------------------------------------------------------------------
# planar triangulations and graph functions


@dataclass(frozen=True)
class TriMesh2D:
    """Counterclockwise planar triangulation with edge connectivity.

    ``tri_edges[t, k]`` is the edge between local corners ``EDGE_PAIRS[k]``
    and ``edge_tris[e]`` the two adjacent triangles (``-1`` on the boundary).
    """

    points: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray = field(init=False, repr=False)
    tri_edges: np.ndarray = field(init=False, repr=False)
    edge_tris: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        t = np.asarray(self.triangles, dtype=np.int64).copy()
        P = p[t]
        area2 = (P[:, 1, 0] - P[:, 0, 0]) * (P[:, 2, 1] - P[:, 0, 1]) - (P[:, 1, 1] - P[:, 0, 1]) * (
            P[:, 2, 0] - P[:, 0, 0]
        )
        if np.any(area2 == 0):
            raise StructureError("degenerate triangle")
        t[area2 < 0] = t[area2 < 0][:, [0, 2, 1]]
        local = np.stack([t[:, [i, j]] for i, j in EDGE_PAIRS], axis=1)  # (T, 3, 2)
        keys = np.sort(local.reshape(-1, 2), axis=1)
        edges, inv = np.unique(keys, axis=0, return_inverse=True)
        inv = inv.ravel()
        counts = np.bincount(inv, minlength=len(edges))
        if np.any(counts > 2):
            raise StructureError("non-conforming triangulation (edge shared by > 2 triangles)")
        edge_tris = np.full((len(edges), 2), -1, dtype=np.int64)
        tri_of = np.repeat(np.arange(len(t)), 3)
        order = np.argsort(inv, kind="stable")
        first = np.ones(len(order), dtype=bool)
        first[1:] = inv[order][1:] != inv[order][:-1]
        edge_tris[inv[order][first], 0] = tri_of[order][first]
        edge_tris[inv[order][~first], 1] = tri_of[order][~first]
        for name, val in (("points", p), ("triangles", t), ("edges", edges),
                          ("tri_edges", inv.reshape(-1, 3)), ("edge_tris", edge_tris)):
            object.__setattr__(self, name, val)

    @property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_tris[:, 1] >= 0)

    @property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_tris[:, 1] < 0)

    @property
    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.edges[self.boundary_edges])

    @property
    def midpoints(self) -> np.ndarray:
        return self.points[self.edges].mean(axis=1)

    @property
    def h(self) -> float:
        d = self.points[self.edges[:, 0]] - self.points[self.edges[:, 1]]
        return float(np.linalg.norm(d, axis=1).max())

    def barycentric_gradients(self) -> np.ndarray:
        """``(T, 3, 2)`` gradients of the barycentric coordinates."""
        P = self.points[self.triangles]
        B = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)  # columns: edges
        Binv = np.linalg.inv(B)  # rows: grad lam2, grad lam3
        g = np.empty((len(P), 3, 2))
        g[:, 1:] = Binv
        g[:, 0] = -Binv.sum(axis=1)
        return g

    def areas(self) -> np.ndarray:
        P = self.points[self.triangles]
        e1, e2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def max_angle(self) -> float:
        """Largest interior angle in degrees."""
        P = self.points[self.triangles]
        out = 0.0
        for i in range(3):
            a = P[:, (i + 1) % 3] - P[:, i]
            b = P[:, (i + 2) % 3] - P[:, i]
            c = np.einsum("ij,ij->i", a, b) / np.linalg.norm(a, axis=1) / np.linalg.norm(b, axis=1)
            out = max(out, float(np.degrees(np.arccos(np.clip(c, -1, 1))).max()))
        return out


def disk_mesh(n: int, radius: float = 1.0) -> TriMesh2D:
    """Delaunay mesh of concentric rings, ring ``k`` holding ``6k`` points.

    Boundary points lie on the circle of the given radius, so the mesh
    domain is the inscribed polygon. Doubling ``n`` halves ``h``; all
    angles stay below 90 degrees.
    """
    if n < 1:
        raise ValueError("n must be positive")
    pts = [np.zeros((1, 2))]
    for k in range(1, n + 1):
        th = 2 * np.pi * np.arange(6 * k) / (6 * k)
        pts.append(radius * k / n * np.column_stack([np.cos(th), np.sin(th)]))
    pts = np.vstack(pts)
    return TriMesh2D(pts, Delaunay(pts).simplices)


@dataclass
class GraphFunctionMesh:
    """Piecewise quadratic function by node and edge-midpoint values."""

    mesh: TriMesh2D
    node_values: np.ndarray
    edge_values: np.ndarray
    psi: np.ndarray | None = None
    gamma1: float = 0.0
    gamma2: float = 0.0
    h: float = 0.0
    concave: bool = False
    min_jump: float = float("nan")
    min_hessian_eig: float = float("nan")

    @property
    def certified(self) -> bool:
        tol = -1e-10
        return self.min_jump >= tol and self.min_hessian_eig >= tol

    def local_values(self) -> np.ndarray:
        """``(T, 6)`` values ordered like the surface control points."""
        return np.column_stack([self.node_values[self.mesh.triangles], self.edge_values[self.mesh.tri_edges]])

    def hessians(self) -> np.ndarray:
        return _p2_hessians(self.mesh, self.local_values())

    def gradients(self, tri: np.ndarray, lam: np.ndarray) -> np.ndarray:
        """Gradients on triangles ``tri`` at barycentric points ``lam`` (k, 3)."""
        g = self.mesh.barycentric_gradients()[tri]
        v = self.local_values()[tri]
        return _p2_gradient(g, v, lam)

    def evaluate(self, tri: np.ndarray, lam: np.ndarray) -> np.ndarray:
        v = self.local_values()[tri]
        return np.einsum("kj,kj->k", _p2_basis(lam), v)


def _p2_basis(lam: np.ndarray) -> np.ndarray:
    lam = np.atleast_2d(lam)
    b = [lam[:, i] * (2 * lam[:, i] - 1) for i in range(3)]
    b += [4 * lam[:, i] * lam[:, j] for i, j in EDGE_PAIRS]
    return np.column_stack(b)


def _p2_gradient(g: np.ndarray, v: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Gradient of P2 functions; ``g`` (k,3,2), ``v`` (k,6), ``lam`` (k,3)."""
    out = np.zeros((len(v), 2))
    for i in range(3):
        out += (v[:, i] * (4 * lam[:, i] - 1))[:, None] * g[:, i]
    for e, (i, j) in enumerate(EDGE_PAIRS):
        out += (4 * v[:, 3 + e])[:, None] * (lam[:, j, None] * g[:, i] + lam[:, i, None] * g[:, j])
    return out


def _p2_hessians(mesh: TriMesh2D, v: np.ndarray) -> np.ndarray:
    g = mesh.barycentric_gradients()
    H = np.zeros((len(v), 2, 2))
    for i in range(3):
        H += 4 * v[:, i, None, None] * np.einsum("ti,tj->tij", g[:, i], g[:, i])
    for e, (i, j) in enumerate(EDGE_PAIRS):
        gij = np.einsum("ti,tj->tij", g[:, i], g[:, j])
        H += 4 * v[:, 3 + e, None, None] * (gij + gij.transpose(0, 2, 1))
    return H


def _edge_geometry(mesh: TriMesh2D):
    """Interior edges with unit normals pointing from the first to the second triangle."""
    ie = mesh.interior_edges
    a, b = mesh.points[mesh.edges[ie, 0]], mesh.points[mesh.edges[ie, 1]]
    t = b - a
    n = np.column_stack([t[:, 1], -t[:, 0]])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    c0 = mesh.points[mesh.triangles[mesh.edge_tris[ie, 0]]].mean(axis=1)
    flip = np.einsum("ij,ij->i", a - c0, n) < 0
    n[flip] *= -1
    return ie, n


def _barycentric_of(mesh: TriMesh2D, tri: np.ndarray, node: np.ndarray) -> np.ndarray:
    lam = (mesh.triangles[tri] == node[:, None]).astype(float)
    if np.any(lam.sum(axis=1) != 1):
        raise StructureError("node not in triangle")
    return lam


def gradient_jumps(f: GraphFunctionMesh) -> np.ndarray:
    """``[[grad u . n_F]]`` at both endpoints of every interior edge, shape ``(E_int, 2)``."""
    mesh = f.mesh
    ie, n = _edge_geometry(mesh)
    t0, t1 = mesh.edge_tris[ie, 0], mesh.edge_tris[ie, 1]
    out = np.empty((len(ie), 2))
    for k in range(2):
        node = mesh.edges[ie, k]
        g0 = f.gradients(t0, _barycentric_of(mesh, t0, node))
        g1 = f.gradients(t1, _barycentric_of(mesh, t1, node))
        out[:, k] = np.einsum("ij,ij->i", g1 - g0, n)
    return out


def p1_jump_matrix(mesh: TriMesh2D) -> np.ndarray:
    """Rows map P1 nodal values to the normal-gradient jump on interior edges."""
    ie, n = _edge_geometry(mesh)
    g = mesh.barycentric_gradients()
    R = np.zeros((len(ie), len(mesh.points)))
    for r, (e, nn) in enumerate(zip(ie, n)):
        t0, t1 = mesh.edge_tris[e]
        np.add.at(R[r], mesh.triangles[t1], g[t1] @ nn)
        np.add.at(R[r], mesh.triangles[t0], -(g[t0] @ nn))
    return R


def correction_function(mesh: TriMesh2D) -> np.ndarray:
    """P1 ``psi`` with jumps ``>= 1`` on interior edges and minimal max-norm."""
    R = p1_jump_matrix(mesh)
    nv = len(mesh.points)
    # variables (psi, t): min t  s.t.  -R psi <= -1,  |psi| <= t
    c = np.zeros(nv + 1)
    c[-1] = 1.0
    I = np.eye(nv)
    A = np.vstack([
        np.hstack([-R, np.zeros((len(R), 1))]),
        np.hstack([I, -np.ones((nv, 1))]),
        np.hstack([-I, -np.ones((nv, 1))]),
    ])
    b = np.concatenate([-np.ones(len(R)), np.zeros(2 * nv)])
    bounds = [(None, None)] * nv + [(0, None)]
    res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
    if res.status != 0:
        raise MeshAssumptionError(f"no correction function on this mesh ({res.message})")
    return res.x[:nv]


def interpolate_p2(mesh: TriMesh2D, u: Callable) -> tuple[np.ndarray, np.ndarray]:
    return np.asarray(u(mesh.points), dtype=float), np.asarray(u(mesh.midpoints), dtype=float)


def convex_interpolate_graph(
    u: Callable,
    mesh: TriMesh2D,
    h: float | None = None,
    concave: bool = False,
    tol: float = DEFAULT.jump_tol,
) -> GraphFunctionMesh:
    """Convex piecewise quadratic interpolant ``I2 u + g1 h psi + g2 h phi``.

    ``u`` maps ``(k, 2)`` points to values. With ``concave=True`` the
    construction is applied to ``-u`` and the result negated, giving a
    concave interpolant of a concave function. Negative jumps or Hessian
    eigenvalues of size below ``tol`` (relative) are treated as zero.
    """
    h = mesh.h if h is None else float(h)
    sign = -1.0 if concave else 1.0
    nodes, edges = interpolate_p2(mesh, lambda x: sign * np.asarray(u(x), dtype=float))
    base = GraphFunctionMesh(mesh, nodes, edges, h=h)
    scale = max(np.abs(nodes).max(), np.abs(edges).max(), 1.0)

    jumps = gradient_jumps(base)
    jmin = float(jumps.min()) if jumps.size else 0.0
    gamma1 = max(0.0, -jmin) / h if jmin < -tol * scale / h else 0.0
    psi = np.zeros(len(mesh.points))
    if gamma1 > 0:
        psi = correction_function(mesh)
        nodes = nodes + gamma1 * h * psi
        edges = edges + gamma1 * h * psi[mesh.edges].mean(axis=1)

    H = _p2_hessians(mesh, np.column_stack([nodes[mesh.triangles], edges[mesh.tri_edges]]))
    emin = float(np.linalg.eigvalsh(H)[:, 0].min())
    gamma2 = max(0.0, -emin) / h if emin < -tol * scale / h**2 else 0.0
    if gamma2 > 0:
        nodes = nodes + gamma2 * h * 0.5 * np.einsum("ij,ij->i", mesh.points, mesh.points)
        mid = mesh.midpoints
        edges = edges + gamma2 * h * 0.5 * np.einsum("ij,ij->i", mid, mid)

    out = GraphFunctionMesh(mesh, nodes, edges, psi, gamma1, gamma2, h)
    jumps = gradient_jumps(out)
    eig = np.linalg.eigvalsh(out.hessians())[:, 0]
    out.min_jump = float(jumps.min()) if jumps.size else 0.0
    out.min_hessian_eig = float(eig.min())
    # sample-point sweep: Hessians are constant per triangle, so the sweep is exact
    if concave:
        out.node_values, out.edge_values = -out.node_values, -out.edge_values
        out.concave = True
    return out


def h1_error(f: GraphFunctionMesh, u: Callable, grad_u: Callable, order: int = 8) -> float:
    """``||u - u_h||_{H^1}`` by a collapsed Gauss rule on every triangle."""
    mesh = f.mesh
    ref, w = triangle_quadrature(order)
    lam = np.column_stack([1 - ref.sum(axis=1), ref])
    P = mesh.points[mesh.triangles]
    area = mesh.areas()
    g = mesh.barycentric_gradients()
    v = f.local_values()
    basis = _p2_basis(lam)
    total = 0.0
    for q in range(len(w)):
        x = lam[q] @ P  # (T, 2)
        uh = v @ basis[q]
        gh = _p2_gradient(g, v, np.broadcast_to(lam[q], (len(v), 3)))
        err = (np.asarray(u(x)) - uh) ** 2 + ((np.asarray(grad_u(x)) - gh) ** 2).sum(axis=1)
        total += 2 * w[q] * (area * err).sum()
    return float(np.sqrt(total))


def hemisphere(x: np.ndarray) -> np.ndarray:
    r2 = (np.asarray(x) ** 2).sum(axis=-1)
    return np.sqrt(np.maximum(1.0 - r2, 0.0))


def hemisphere_gradient(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    return -x / hemisphere(x)[..., None]


# ---------------------------------------------------------------------------
# half domains


@dataclass
class HalfDomainSurface:
    patches: list  # Gamma_out patches, one per planar triangle
    sym_points: np.ndarray  # Gamma_sym nodes at x3 = 0
    sym_triangles: np.ndarray
    sides: list  # (SharedSide, kind)

    def min_c_h(self, n_samples: int = DEFAULT.surface_samples) -> float:
        return min(c_h_sweep(p, n_samples) for p in self.patches)

    def min_c_k_plus(self, n_points: int = 5) -> float:
        s = np.linspace(0.0, 1.0, n_points)
        out = np.inf
        for side, kind in self.sides:
            out = min(out, min(c_k_plus(side, kind, si) for si in s))
        return float(out)


def build_half_domain_surface(
    u, mesh: TriMesh2D | None = None, equator_tol: float = 1e-12
) -> HalfDomainSurface:
    """Lift a nonnegative graph function to ``Gamma_out`` over ``Gamma_sym``.

    ``u`` is either a ``GraphFunctionMesh`` or a callable; its node and
    edge-midpoint values become control heights. Boundary sides where the
    lift vanishes are equator sides; other boundary sides are rim sides.
    """
    if isinstance(u, GraphFunctionMesh):
        nodes, edges = u.node_values, u.edge_values
        mesh = u.mesh
    else:
        nodes, edges = interpolate_p2(mesh, u)
    lo = min(nodes.min(), edges.min())
    if lo < -equator_tol:
        raise DomainError(f"graph function is negative at a lift point ({lo:g})")
    nodes = np.maximum(nodes, 0.0)
    edges = np.maximum(edges, 0.0)
    P3 = np.column_stack([mesh.points, nodes])
    M3 = np.column_stack([mesh.midpoints, edges])
    patches = [
        QuadraticSurfacePatch(np.vstack([P3[t], M3[mesh.tri_edges[k]]]), outward_sign=1)
        for k, t in enumerate(mesh.triangles)
    ]
    sides = []
    for e, (t0, t1) in enumerate(mesh.edge_tris):
        if t1 >= 0:
            sides.append((shared_side(patches[t0], patches[t1]), INTERIOR))
            continue
        a, b = mesh.edges[e]
        kind = EQUATOR if max(nodes[a], nodes[b], edges[e]) <= equator_tol else RIM
        loc = list(mesh.triangles[t0])
        i, j = sorted((loc.index(a), loc.index(b)))
        sides.append((SharedSide(patches[t0], None, (i, j), None), kind))
    return HalfDomainSurface(patches, np.column_stack([mesh.points, np.zeros(len(mesh.points))]),
                             mesh.triangles.copy(), sides)


def export_surface_vtk(surface: HalfDomainSurface, path, quadratic: bool = True) -> None:
    """Write ``Gamma_out`` as quadratic triangles or 4-fold subdivided linear ones."""
    pts = np.vstack([p.control for p in surface.patches])
    base = 6 * np.arange(len(surface.patches))[:, None]
    if quadratic:
        # VTK edge node order: (0,1), (1,2), (2,0)
        cells = base + np.array([0, 1, 2, 3, 5, 4])
    else:
        sub = np.array([[0, 3, 4], [3, 1, 5], [4, 5, 2], [3, 5, 4]])
        cells = (base[:, None, :] + sub[None]).reshape(-1, 3)
    write_surface_vtk(pts, cells, path, quadratic=quadratic)
