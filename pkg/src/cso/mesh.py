"""Tetrahedral meshes: data model, ellipsoid generation, boundary patches, deformation."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from cso.errors import DomainError, InversionError, ResourceError, StructureError

# local face numbering: face k is opposite vertex k, ordered so that the
# face normal (b - a) x (c - a) points away from vertex k for a positively
# oriented tet
_TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])

MAX_VERTICES = 5_000_000


def signed_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    p = vertices[tets]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    d3 = p[:, 3] - p[:, 0]
    return np.einsum("ij,ij->i", d1, np.cross(d2, d3)) / 6.0


@dataclass(frozen=True, eq=False)
class TetMesh:
    """Immutable tetrahedral mesh.

    ``vertices`` is ``(N_v, 3)`` float, ``tets`` is ``(N_t, 4)`` int with
    positive orientation. Boundary facets and the mesh size are derived
    lazily and cached.
    """

    vertices: np.ndarray
    tets: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.tets, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must have shape (N, 3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 4:
            raise ValueError(f"tets must have shape (M, 4), got {t.shape}")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise IndexError("tet vertex index out of range")
        v.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "tets", t)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @cached_property
    def volumes(self) -> np.ndarray:
        return signed_volumes(self.vertices, self.tets)

    @property
    def volume(self) -> float:
        return float(self.volumes.sum())

    @cached_property
    def h(self) -> float:
        p = self.vertices[self.tets]
        d = 0.0
        for i, j in itertools.combinations(range(4), 2):
            d = max(d, float(np.linalg.norm(p[:, i] - p[:, j], axis=1).max()))
        return d

    @cached_property
    def _boundary(self):
        return extract_boundary(self)

    @property
    def boundary_facets(self) -> np.ndarray:
        return self._boundary[0]

    @property
    def boundary_vertices(self) -> np.ndarray:
        return self._boundary[1]

    @cached_property
    def boundary_facet_tets(self) -> np.ndarray:
        """Index of the tet owning each boundary facet."""
        return self._boundary[2]

    @cached_property
    def vertex_facets(self) -> dict[int, np.ndarray]:
        """Map boundary vertex -> indices of incident boundary facets."""
        facets = self.boundary_facets
        order = np.argsort(facets.ravel(), kind="stable")
        owners = order // 3
        verts = facets.ravel()[order]
        splits = np.flatnonzero(np.diff(verts)) + 1
        return {
            int(vs[0]): fs
            for vs, fs in zip(np.split(verts, splits), np.split(owners, splits))
        }

    def with_vertices(self, vertices: np.ndarray) -> "TetMesh":
        new = TetMesh(vertices, self.tets)
        # connectivity-only derived data carries over
        if "_boundary" in self.__dict__:
            new.__dict__["_boundary"] = self.__dict__["_boundary"]
        if "vertex_facets" in self.__dict__:
            new.__dict__["vertex_facets"] = self.__dict__["vertex_facets"]
        if "_patch_rings" in self.__dict__:
            new.__dict__["_patch_rings"] = self.__dict__["_patch_rings"]
        return new

    @cached_property
    def _patch_rings(self) -> dict[int, np.ndarray]:
        return {int(z): _ring_from_facets(self, int(z)) for z in self.boundary_vertices}


@dataclass(frozen=True)
class BoundaryNodePatch:
    """Boundary vertex ``center`` with its counterclockwise outer ring.

    Facet ``i`` is ``conv(ring[i], ring[i+1], center)`` (cyclic) and
    ``facet_normals[i] = (z - z_i) x (z - z_{i+1})``.
    """

    center: int
    ring: np.ndarray
    z: np.ndarray
    ring_points: np.ndarray
    facet_normals: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.ring)

    @classmethod
    def from_points(cls, z, ring_points, center: int = 0, ring=None) -> "BoundaryNodePatch":
        z = np.asarray(z, dtype=float)
        pts = np.asarray(ring_points, dtype=float)
        if len(pts) < 3:
            raise StructureError("a node patch needs at least 3 ring vertices")
        if ring is None:
            ring = np.arange(1, len(pts) + 1)
        return cls(center, np.asarray(ring), z, pts, patch_normals(z, pts))


def patch_normals(z: np.ndarray, ring_points: np.ndarray) -> np.ndarray:
    a = z - ring_points
    b = z - np.roll(ring_points, -1, axis=0)
    return np.cross(a, b)


@dataclass(frozen=True)
class EllipsoidSpec:
    a: float = 1.0
    b: float = 1.0
    level: int = 3
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    half: bool = False
    # treat a, b as squared semi-axes: radii (sqrt a, sqrt b, 1/sqrt(ab))
    squared_axes: bool = False

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("ellipsoid semi-axes a, b must be positive")
        if int(self.level) != self.level or self.level < 0:
            raise ValueError("refinement level must be a nonnegative integer")

    @property
    def c(self) -> float:
        # product of the semi-axes is 1: volume of the unit ball
        if self.squared_axes:
            return 1.0 / np.sqrt(self.a * self.b)
        return 1.0 / (self.a * self.b)

    @property
    def semi_axes(self) -> np.ndarray:
        if self.squared_axes:
            return np.array([np.sqrt(self.a), np.sqrt(self.b), self.c])
        return np.array([self.a, self.b, self.c])


# ---------------------------------------------------------------------------
# generation


def _kuhn_corner(n: int):
    """Subdivide conv{0, e1, e2, e3} into n**3 tets on the integer lattice.

    The corner simplex is affinely equivalent to the Kuhn simplex
    ``n >= a >= b >= c >= 0`` via ``x = a - b, y = b - c, z = c``; the
    Freudenthal triangulation of the latter is carried over.
    """
    index = {}
    for a in range(n + 1):
        for b in range(a + 1):
            for c in range(b + 1):
                index[(a, b, c)] = len(index)
    tets = []
    for a in range(n):
        for b in range(a + 1):
            for c in range(b + 1):
                for perm in itertools.permutations(range(3)):
                    cur = [a, b, c]
                    path = [tuple(cur)]
                    for k in perm:
                        cur = list(cur)
                        cur[k] += 1
                        path.append(tuple(cur))
                    if all(q in index and q[0] >= q[1] >= q[2] for q in path):
                        tets.append([index[q] for q in path])
    abc = np.array(list(index), dtype=np.int64)
    xyz = np.column_stack([abc[:, 0] - abc[:, 1], abc[:, 1] - abc[:, 2], abc[:, 2]])
    return xyz, np.array(tets, dtype=np.int64)


def octahedral_ball(n: int, half: bool = False):
    """Structured ball mesh from the ``n``-fold refined octahedron.

    Lattice points of ``|x|_1 <= n`` are pushed radially onto the ball by
    ``x -> x |x|_1 / (n |x|_2)``, so boundary vertices land on the unit sphere.
    """
    xyz, tets = _kuhn_corner(n)
    signs = [s for s in itertools.product((1, -1), repeat=3) if not half or s[2] == 1]
    keys: dict[tuple, int] = {}
    all_tets = []
    for s in signs:
        pts = xyz * np.array(s)
        local = np.empty(len(pts), dtype=np.int64)
        for i, p in enumerate(map(tuple, pts)):
            local[i] = keys.setdefault(p, len(keys))
        all_tets.append(local[tets])
    lattice = np.array(list(keys), dtype=float)
    t = np.concatenate(all_tets)
    l1 = np.abs(lattice).sum(axis=1)
    l2 = np.linalg.norm(lattice, axis=1)
    scale = np.divide(l1, n * l2, out=np.zeros_like(l1), where=l2 > 0)
    v = lattice * scale[:, None]
    vol = signed_volumes(v, t)
    flip = vol < 0
    t[flip] = t[flip][:, [0, 2, 1, 3]]
    return v, t


def generate_ellipsoid_mesh(spec: EllipsoidSpec) -> TetMesh:
    """Mesh of ``E_{a,b}`` with target size ``2**-level``.

    The octahedral ball has ``n = 2**level`` lattice layers per radius and
    is scaled by ``diag(a, b, 1/(ab))``; boundary vertices lie exactly on
    the ellipsoid. With ``half=True`` only the ``x3 >= 0`` half is built;
    the symmetry plane is then triangulated exactly.
    """
    n = 2 ** int(spec.level)
    estimate = (2 * n + 1) * (2 * n * n + 2 * n + 3) // 3
    if estimate > MAX_VERTICES:
        raise ResourceError(f"level {spec.level} needs ~{estimate} vertices (limit {MAX_VERTICES})")
    v, t = octahedral_ball(n, half=spec.half)
    v = v * spec.semi_axes + np.asarray(spec.center, dtype=float)
    return TetMesh(v, t)


def box_mesh(n: int = 2, lower=(0.0, 0.0, 0.0), upper=(1.0, 1.0, 1.0)) -> TetMesh:
    """Structured Kuhn (6 tets per cube) mesh of an axis-aligned box."""
    g = np.linspace(0.0, 1.0, n + 1)
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    v = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
    v = np.asarray(lower) + v * (np.asarray(upper) - np.asarray(lower))

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    tets = []
    for i, j, k in itertools.product(range(n), repeat=3):
        for perm in itertools.permutations(range(3)):
            cur = [i, j, k]
            path = [vid(*cur)]
            for d in perm:
                cur[d] += 1
                path.append(vid(*cur))
            tets.append(path)
    t = np.array(tets, dtype=np.int64)
    vol = signed_volumes(v, t)
    t[vol < 0] = t[vol < 0][:, [0, 2, 1, 3]]
    return TetMesh(v, t)


# ---------------------------------------------------------------------------
# boundary


def extract_boundary(mesh: TetMesh):
    """Outward boundary facets, boundary vertex set and owning tets.

    Raises
    ------
    StructureError
        If a facet is shared by more than two tets or a boundary edge does
        not have exactly two incident boundary facets.
    """
    faces = mesh.tets[:, _TET_FACES].reshape(-1, 3)
    key = np.sort(faces, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        raise StructureError("a facet is shared by more than two tets")
    on_boundary = counts[inverse] == 1
    facets = faces[on_boundary]
    owners = np.flatnonzero(on_boundary) // 4
    edges = np.sort(np.concatenate([facets[:, [0, 1]], facets[:, [1, 2]], facets[:, [2, 0]]]), axis=1)
    if len(edges):
        _, ecount = np.unique(edges, axis=0, return_counts=True)
        if np.any(ecount != 2):
            raise StructureError("boundary surface is not a closed 2-manifold")
    return facets, np.unique(facets), owners


def facet_normals(mesh: TetMesh, facets: np.ndarray | None = None) -> np.ndarray:
    """Unnormalized outward normals ``(b - a) x (c - a)`` (twice the area)."""
    f = mesh.boundary_facets if facets is None else facets
    p = mesh.vertices[f]
    return np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])


def _ring_from_facets(mesh: TetMesh, z: int) -> np.ndarray:
    fids = mesh.vertex_facets.get(z)
    if fids is None:
        raise DomainError(f"vertex {z} is not a boundary vertex")
    # rotate each facet so that z comes first: (z, a, b) counterclockwise
    # from outside, hence facet conv(a, b, z) has ring order a -> b
    succ = {}
    for f in mesh.boundary_facets[fids]:
        k = int(np.flatnonzero(f == z)[0])
        a, b = int(f[(k + 1) % 3]), int(f[(k + 2) % 3])
        if a in succ:
            raise StructureError(f"non-manifold patch at vertex {z}")
        succ[a] = b
    start = min(succ)
    ring = [start]
    while True:
        nxt = succ.get(ring[-1])
        if nxt is None:
            raise StructureError(f"open patch at vertex {z}")
        if nxt == start:
            break
        ring.append(nxt)
        if len(ring) > len(succ):
            raise StructureError(f"patch at vertex {z} is not a single cycle")
    if len(ring) != len(succ):
        raise StructureError(f"disconnected patch at vertex {z}")
    return np.array(ring, dtype=np.int64)


def boundary_node_patch(mesh: TetMesh, z: int) -> BoundaryNodePatch:
    ring = mesh._patch_rings.get(int(z)) if "_patch_rings" in mesh.__dict__ else None
    if ring is None:
        ring = _ring_from_facets(mesh, int(z))
    zp = mesh.vertices[z]
    pts = mesh.vertices[ring]
    return BoundaryNodePatch(int(z), ring, zp, pts, patch_normals(zp, pts))


def boundary_node_patches(mesh: TetMesh) -> list[BoundaryNodePatch]:
    return [boundary_node_patch(mesh, int(z)) for z in mesh.boundary_vertices]


# ---------------------------------------------------------------------------
# deformation and quality


def deform(mesh: TetMesh, field: np.ndarray, t: float, check: bool = True) -> TetMesh:
    """Return the mesh with vertices ``x + t V(x)``; the input is untouched."""
    V = np.asarray(field, dtype=float).reshape(mesh.n_vertices, 3)
    new = mesh.with_vertices(mesh.vertices + t * V)
    if check:
        vol = new.volumes
        worst = int(np.argmin(vol))
        if vol[worst] <= 0.0:
            raise InversionError(f"element {worst} inverted (volume {vol[worst]:.3e})", element=worst)
    return new


def _dihedral_angles(p: np.ndarray) -> np.ndarray:
    # outward face normals, face k opposite vertex k
    normals = []
    for f in _TET_FACES:
        a, b, c = p[:, f[0]], p[:, f[1]], p[:, f[2]]
        n = np.cross(b - a, c - a)
        normals.append(n / np.linalg.norm(n, axis=1, keepdims=True))
    angles = []
    for i, j in itertools.combinations(range(4), 2):
        cosang = -np.einsum("ij,ij->i", normals[i], normals[j])
        angles.append(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return np.column_stack(angles)


def element_quality(mesh: TetMesh) -> np.ndarray:
    """Volume/edge ratio ``6 sqrt(2) V / l_rms**3``; 1 for the regular tet."""
    p = mesh.vertices[mesh.tets]
    sq = sum(
        np.einsum("ij,ij->i", p[:, i] - p[:, j], p[:, i] - p[:, j])
        for i, j in itertools.combinations(range(4), 2)
    )
    lrms = np.sqrt(sq / 6.0)
    return 6.0 * np.sqrt(2.0) * mesh.volumes / lrms**3


def mesh_quality(mesh: TetMesh) -> tuple[float, float, float]:
    """Return (minimum quality ratio, minimum dihedral angle in degrees, h)."""
    q = element_quality(mesh)
    ang = _dihedral_angles(mesh.vertices[mesh.tets])
    return float(q.min()), float(np.degrees(ang.min())), mesh.h


def check_invariants(mesh: TetMesh) -> None:
    """Raise if any structural invariant of the mesh is violated."""
    vol = mesh.volumes
    if np.any(vol <= 0):
        raise InversionError("non-positive tet volume", element=int(np.argmin(vol)))
    facets = mesh.boundary_facets
    owners = mesh.boundary_facet_tets
    opposite = np.array(
        [next(v for v in mesh.tets[t] if v not in f) for f, t in zip(facets, owners)]
    )
    vf = mesh.vertices[facets]
    s = np.einsum(
        "ij,ij->i",
        np.cross(vf[:, 1] - vf[:, 0], vf[:, 2] - vf[:, 0]),
        mesh.vertices[opposite] - vf[:, 0],
    )
    if np.any(s >= 0):
        raise StructureError("boundary facet not oriented outward")
