"""Orientation predicate and incremental 3D convex hull."""

from __future__ import annotations

from fractions import Fraction

import numpy as np

_EPS = np.finfo(float).eps / 2
# static error bound of the floating-point 3x3 determinant (Shewchuk, o3derrboundA)
_O3D_BOUND = (7.0 + 56.0 * _EPS) * _EPS


def _orient3d_exact(a, b, c, d) -> int:
    ax, ay, az = (Fraction(float(a[k])) - Fraction(float(d[k])) for k in range(3))
    bx, by, bz = (Fraction(float(b[k])) - Fraction(float(d[k])) for k in range(3))
    cx, cy, cz = (Fraction(float(c[k])) - Fraction(float(d[k])) for k in range(3))
    det = ax * (by * cz - bz * cy) - ay * (bx * cz - bz * cx) + az * (bx * cy - by * cx)
    return (det > 0) - (det < 0)


def orient3d(a, b, c, d) -> np.ndarray:
    """Sign of ``det[a - d, b - d, c - d]`` for broadcastable point arrays.

    Positive when ``d`` lies below the plane through ``a, b, c`` oriented
    counterclockwise seen from above, i.e. ``d`` is on the side opposite to
    ``(b - a) x (c - a)``. Uncertain float results are recomputed exactly.
    """
    a, b, c, d = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, c, d)))
    scalar = a.ndim == 1
    a, b, c, d = (np.atleast_2d(v) for v in (a, b, c, d))
    u, v, w = a - d, b - d, c - d
    t1 = v[:, 1] * w[:, 2] - v[:, 2] * w[:, 1]
    t2 = v[:, 0] * w[:, 2] - v[:, 2] * w[:, 0]
    t3 = v[:, 0] * w[:, 1] - v[:, 1] * w[:, 0]
    det = u[:, 0] * t1 - u[:, 1] * t2 + u[:, 2] * t3
    au, av, aw = np.abs(u), np.abs(v), np.abs(w)
    perm = (
        au[:, 0] * (av[:, 1] * aw[:, 2] + av[:, 2] * aw[:, 1])
        + au[:, 1] * (av[:, 0] * aw[:, 2] + av[:, 2] * aw[:, 0])
        + au[:, 2] * (av[:, 0] * aw[:, 1] + av[:, 1] * aw[:, 0])
    )
    sign = np.sign(det).astype(np.int64)
    for i in np.flatnonzero(np.abs(det) <= _O3D_BOUND * perm):
        sign[i] = _orient3d_exact(a[i], b[i], c[i], d[i])
    return sign[0] if scalar else sign


def _initial_simplex(pts: np.ndarray):
    i0 = 0
    d = np.linalg.norm(pts - pts[i0], axis=1)
    i1 = int(np.argmax(d))
    e = pts[i1] - pts[i0]
    r = pts - pts[i0]
    area = np.linalg.norm(np.cross(e, r), axis=1)
    i2 = int(np.argmax(area))
    n = np.cross(e, pts[i2] - pts[i0])
    vol = np.abs(r @ n)
    i3 = int(np.argmax(vol))
    s = orient3d(pts[i0], pts[i1], pts[i2], pts[i3])
    if area[i2] == 0 or s == 0:
        return None
    return (i0, i1, i2, i3) if s > 0 else (i0, i2, i1, i3)


def incremental_hull(points, seed: int = 0) -> np.ndarray:
    """Triangulated hull facets ``(F, 3)``, counterclockwise seen from outside.

    Points are inserted in random order; the facets visible from a new
    point (strictly, by the exact predicate) are removed and the horizon is
    coned to the point. Points on a facet plane are not hull vertices.
    Returns ``None`` for coplanar input.
    """
    pts = np.asarray(points, dtype=float)
    simplex = _initial_simplex(pts)
    if simplex is None:
        return None
    a, b, c, d = simplex
    # (a, b, c) has d on the positive side of orient3d, so it faces away from d
    faces = [(a, b, c), (a, d, b), (b, d, c), (c, d, a)]
    F = np.array(faces, dtype=np.int64)
    alive = np.ones(len(F), dtype=bool)
    rng = np.random.default_rng(seed)
    rest = np.setdiff1d(np.arange(len(pts)), simplex)
    for p in rng.permutation(rest):
        idx = np.flatnonzero(alive)
        f = F[idx]
        # p outside a facet when it sees the counterclockwise side
        visible = idx[orient3d(pts[f[:, 0]], pts[f[:, 1]], pts[f[:, 2]], pts[p]) < 0]
        if len(visible) == 0:
            continue
        vf = F[visible]
        edges = np.concatenate([vf[:, [0, 1]], vf[:, [1, 2]], vf[:, [2, 0]]])
        keys = set(map(tuple, edges))
        horizon = [e for e in map(tuple, edges) if (e[1], e[0]) not in keys]
        alive[visible] = False
        new = np.array([(e[0], e[1], p) for e in horizon], dtype=np.int64)
        F = np.vstack([F, new])
        alive = np.concatenate([alive, np.ones(len(new), dtype=bool)])
    return F[alive]
