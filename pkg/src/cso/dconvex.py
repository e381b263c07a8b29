"""Discrete convexity of polyhedral domains.

A boundary vertex ``z`` with ring ``z_1..z_m`` is locally supported if some
nonnegative combination ``v = sum_j lam_j n_Fj`` of its facet normals
satisfies ``(z_i - z) . v <= 0`` for all ring vertices. The multipliers are
found by a small LP per vertex; the frozen multipliers give the constraint
values ``C_i = (M lam)_i`` and their derivatives with respect to the vertex
coordinates, which the descent step linearizes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from cso.config import DEFAULT
from cso.errors import DimensionError, InversionError
from cso.geometry import incremental_hull
from cso.mesh import BoundaryNodePatch, TetMesh, boundary_node_patch, facet_normals
from cso.solvers import LpProblem, lp_solve

CERTIFIED = "certified"
UNCERTIFIED = "uncertified"


def cone_matrix(patch: BoundaryNodePatch) -> np.ndarray:
    """``M[i, j] = (z_i - z) . n_Fj``."""
    return (patch.ring_points - patch.z) @ patch.facet_normals.T


@dataclass(frozen=True)
class SupportCertificate:
    patch: BoundaryNodePatch
    lam: np.ndarray
    normal: np.ndarray
    k_used: int
    status: str

    @property
    def certified(self) -> bool:
        return self.status == CERTIFIED

    @property
    def values(self) -> np.ndarray:
        return constraint_values(self.patch, self.lam)


def _most_feasible(Mn: np.ndarray) -> np.ndarray:
    """Multipliers minimizing the largest entry of ``M lam`` on the simplex."""
    m = Mn.shape[0]
    # variables (lam, s): min s  s.t.  M lam - s <= 0, sum lam = 1, lam >= 0
    c = np.zeros(m + 1)
    c[-1] = 1.0
    G = np.hstack([Mn, -np.ones((m, 1))])
    E = np.concatenate([np.ones(m), [0.0]])[None, :]
    lower = np.concatenate([np.zeros(m), [-np.inf]])
    res = lp_solve(LpProblem(c, G, np.zeros(m), E, [1.0], lower))
    return res.x[:m]


def certify_patch(
    patch: BoundaryNodePatch,
    eps: float = DEFAULT.certify_eps,
    k_max: int = DEFAULT.certify_k_max,
    tol: float = DEFAULT.certify_tol,
) -> SupportCertificate:
    """Search multipliers ``lam >= 0.5**k eps`` with ``M lam <= 0``, ``sum lam = 1``.

    The LP ``min 1.M lam`` is tried for ``k = 0, 1, ..., k_max`` and the first
    feasible level is returned as certified. Otherwise the result is
    uncertified and carries the multipliers that minimize the worst
    violation, so downstream constraints still push toward convexity.
    """
    if eps <= 0 or k_max < 0:
        raise ValueError("eps must be positive and k_max nonnegative")
    M = cone_matrix(patch)
    m = M.shape[0]
    # triple products scale with length**3; normalizing by max|M| instead
    # would blow rounding noise of flat patches up to order one
    scale = np.linalg.norm(patch.ring_points - patch.z, axis=1).max() ** 3
    Mn = M / scale if scale > 0 else M
    for k in range(k_max + 1):
        lb = 0.5**k * eps
        if lb * m > 1.0:
            continue
        res = lp_solve(
            LpProblem(Mn.sum(axis=0), Mn, np.zeros(m), np.ones((1, m)), [1.0], np.full(m, lb))
        )
        if res.feasible and np.all(Mn @ res.x <= tol):
            lam = res.x
            return SupportCertificate(patch, lam, patch.facet_normals.T @ lam, k, CERTIFIED)
    lam = _most_feasible(Mn)
    return SupportCertificate(patch, lam, patch.facet_normals.T @ lam, k_max, UNCERTIFIED)


def constraint_values(patch: BoundaryNodePatch, lam) -> np.ndarray:
    """``C_i = sum_j lam_j (z_i - z) . [(z - z_j) x (z - z_{j+1})]``."""
    return cone_matrix(patch) @ np.asarray(lam, dtype=float)


def constraint_values_at(points: np.ndarray, center: int, ring: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Constraint values for arbitrary coordinates with frozen multipliers."""
    z = points[center]
    zr = points[ring]
    n = np.cross(z - zr, z - np.roll(zr, -1, axis=0))
    return (zr - z) @ (n.T @ lam)


def constraint_gradient(patch: BoundaryNodePatch, lam) -> np.ndarray:
    """Derivatives of ``C_i`` with ``lam`` frozen.

    Returns an array of shape ``(m, m + 1, 3)``: entry ``[i, 0]`` is the
    gradient with respect to ``z`` and ``[i, k]`` with respect to ``z_k``
    (ring order, 1-based ``k``).
    """
    lam = np.asarray(lam, dtype=float)
    m = patch.size
    z = patch.z
    ring = patch.ring_points
    D = np.zeros((m, m + 1, 3))
    b = z - ring  # (m, 3): z - z_j
    c = np.roll(b, -1, axis=0)  # z - z_{j+1}
    bxc = np.cross(b, c)
    for i in range(m):
        a = ring[i] - z
        cxa = np.cross(c, a[None, :])
        axb = np.cross(a[None, :], b)
        # d/d z_i through a
        D[i, i + 1] += lam @ bxc
        # d/dz through a (-1), b (+1), c (+1)
        D[i, 0] += lam @ (-bxc + cxa + axb)
        # d/d z_j through b (-1), d/d z_{j+1} through c (-1)
        for j in range(m):
            D[i, j + 1] -= lam[j] * cxa[j]
            D[i, (j + 1) % m + 1] -= lam[j] * axb[j]
    return D


def constraint_jacobian(certificates, n_vertices: int):
    """Stack frozen-multiplier constraint rows for all patches.

    Returns ``(values, jacobian)`` with the jacobian as a sparse matrix over
    vertex-major displacement dofs ``3 * vertex + component``.
    """
    rows, cols, data, values = [], [], [], []
    r0 = 0
    for cert in certificates:
        p = cert.patch
        D = constraint_gradient(p, cert.lam)
        verts = np.concatenate([[p.center], p.ring])
        m = p.size
        dof = (3 * verts[:, None] + np.arange(3)[None, :]).ravel()
        rows.append(np.repeat(np.arange(r0, r0 + m), 3 * (m + 1)))
        cols.append(np.tile(dof, m))
        data.append(D.reshape(m, -1).ravel())
        values.append(constraint_values(p, cert.lam))
        r0 += m
    if r0 == 0:
        return np.zeros(0), sp.csr_matrix((0, 3 * n_vertices))
    J = sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(r0, 3 * n_vertices),
    )
    J.sum_duplicates()
    return np.concatenate(values), J


# ---------------------------------------------------------------------------
# convex hull


@dataclass(frozen=True)
class Hull:
    points: np.ndarray
    facets: np.ndarray  # (F, 3), outward oriented
    vertices: np.ndarray
    equations: np.ndarray  # (F, 4): unit normal and offset, n.x + d <= 0 inside
    volume: float

    def signed_distance(self, x) -> np.ndarray:
        """Positive outside, negative inside (distance to the boundary)."""
        x = np.atleast_2d(x)
        return (x @ self.equations[:, :3].T + self.equations[:, 3]).max(axis=1)


def convex_hull(points) -> Hull:
    """Convex hull with triangulated, outward oriented facets.

    ``vertices`` lists the points used by the facet triangulation; for
    inputs with coplanar boundary points it may contain non-extreme points.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 4:
        raise DimensionError("need at least 4 points in 3D")
    facets = incremental_hull(pts)
    if facets is None:
        raise DimensionError("points are coplanar or degenerate")
    p = pts[facets]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    volume = float(np.einsum("ij,ij->i", p[:, 0] - pts.mean(axis=0), n).sum() / 6.0)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    eq = np.column_stack([n, -np.einsum("ij,ij->i", n, p[:, 0])])
    return Hull(pts, facets, np.unique(facets), eq, volume)


# ---------------------------------------------------------------------------
# global check


@dataclass
class ConvexityReport:
    vertices: np.ndarray  # boundary vertex ids
    certificates: list
    max_values: np.ndarray  # max_i C_i per boundary vertex
    hull_distance: np.ndarray  # distance inside the hull, >= 0
    tol: float
    hull: Hull = field(repr=False)

    @property
    def max_violation(self) -> float:
        return float(self.max_values.max()) if len(self.max_values) else 0.0

    @property
    def violating(self) -> np.ndarray:
        return self.vertices[self.hull_distance > self.tol]

    @property
    def globally_convex(self) -> bool:
        return bool(np.all(self.hull_distance <= self.tol))

    @property
    def all_certified(self) -> bool:
        return all(c.certified for c in self.certificates)

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vertex", "status", "max_C", "hull_distance"])
            for v, c, mc, d in zip(self.vertices, self.certificates, self.max_values, self.hull_distance):
                w.writerow([int(v), c.status, repr(float(mc)), repr(float(d))])


def certify_mesh(mesh: TetMesh, eps=DEFAULT.certify_eps, k_max=DEFAULT.certify_k_max) -> list:
    return [certify_patch(boundary_node_patch(mesh, int(z)), eps, k_max) for z in mesh.boundary_vertices]


def check_global(mesh: TetMesh, tol: float = DEFAULT.hull_tol, certificates=None) -> ConvexityReport:
    """Local certificates plus the hull test against all boundary vertices."""
    bv = mesh.boundary_vertices
    if certificates is None:
        certificates = certify_mesh(mesh)
    maxc = np.array([c.values.max() for c in certificates])
    pts = mesh.vertices[bv]
    hull = convex_hull(pts)
    diam = np.ptp(pts, axis=0).max()
    dist = np.maximum(-hull.signed_distance(pts), 0.0)
    return ConvexityReport(bv, certificates, maxc, dist, tol * max(diam, 1.0), hull)


def hull_distance_defect(mesh: TetMesh) -> float:
    """``|conv(Omega_h)| - |Omega_h|``."""
    hull = convex_hull(mesh.vertices[mesh.boundary_vertices])
    return hull.volume - mesh.volume


def vertex_normals(mesh: TetMesh) -> np.ndarray:
    """Area-weighted outward unit normals at boundary vertices (zeros elsewhere)."""
    n = facet_normals(mesh)
    acc = np.zeros((mesh.n_vertices, 3))
    for k in range(3):
        np.add.at(acc, mesh.boundary_facets[:, k], n)
    norm = np.linalg.norm(acc, axis=1, keepdims=True)
    return np.divide(acc, norm, out=np.zeros_like(acc), where=norm > 0)


def _vertex_neighbors(mesh: TetMesh):
    edges = np.concatenate([mesh.tets[:, [i, j]] for i in range(4) for j in range(4) if i != j])
    adj = sp.csr_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(mesh.n_vertices,) * 2)
    adj.data[:] = 1.0
    return adj


def post_process(mesh: TetMesh, report: ConvexityReport | None = None, smoothing_rounds: int = 20) -> TetMesh:
    """Move globally violating boundary vertices onto the hull.

    Each violating vertex travels along its averaged outward normal until it
    reaches the boundary of the convex hull of the boundary vertices; the
    hull itself is unchanged by this, so the result is globally discrete
    convex and the operation is idempotent. Inverted elements are repaired
    by Laplacian smoothing of the adjacent interior vertices.
    """
    if report is None:
        report = check_global(mesh)
    bad = report.violating
    if len(bad) == 0:
        return mesh
    hull = report.hull
    normals = vertex_normals(mesh)
    X = mesh.vertices.copy()
    nrm = hull.equations[:, :3]
    off = hull.equations[:, 3]
    for z in bad:
        x, d = X[z], normals[z]
        if not np.any(d):
            d = x - hull.points.mean(axis=0)
            d /= np.linalg.norm(d)
        rate = nrm @ d
        gap = -(nrm @ x + off)  # >= 0 inside
        ok = rate > 1e-14
        s = np.min(gap[ok] / rate[ok])
        X[z] = x + s * d
    new = mesh.with_vertices(X)
    vol = new.volumes
    if np.any(vol <= 0):
        boundary = np.zeros(mesh.n_vertices, dtype=bool)
        boundary[mesh.boundary_vertices] = True
        adj = _vertex_neighbors(mesh)
        deg = np.asarray(adj.sum(axis=1)).ravel()
        for _ in range(smoothing_rounds):
            inverted = np.flatnonzero(new.volumes <= 0)
            if len(inverted) == 0:
                break
            movable = np.unique(mesh.tets[inverted])
            movable = movable[~boundary[movable]]
            if len(movable) == 0:
                break
            avg = (adj @ X) / deg[:, None]
            X[movable] = avg[movable]
            new = mesh.with_vertices(X)
        inverted = np.flatnonzero(new.volumes <= 0)
        if len(inverted):
            raise InversionError("post-processing inverted elements", element=int(inverted[0]))
    return new
