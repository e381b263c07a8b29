import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from cso.dconvex import convex_hull
from cso.errors import DimensionError
from cso.geometry import incremental_hull, orient3d


def test_orient3d_sign_convention():
    a, b, c = [0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]
    # (b - a) x (c - a) = +e3; d below the plane is on the opposite side
    assert orient3d(a, b, c, [0, 0, -1.0]) == 1
    assert orient3d(a, b, c, [0, 0, 1.0]) == -1
    assert orient3d(a, b, c, [0.3, 0.3, 0.0]) == 0


def test_orient3d_near_degenerate_exact():
    # coplanar points with coordinates that are not exactly representable sums
    a = np.array([0.1, 0.2, 0.3])
    u, v = np.array([0.7, 0.11, 0.0]), np.array([0.0, 0.13, 0.9])
    b, c = a + u, a + v
    d = a + 3 * u + 5 * v
    s = orient3d(a, b, c, d)
    # the exact sign of the rounded inputs, not noise
    from cso.geometry import _orient3d_exact

    assert s == _orient3d_exact(a, b, c, d)


def test_orient3d_vectorized_matches_scalar():
    rng = np.random.default_rng(0)
    p = rng.normal(size=(4, 50, 3))
    vec = orient3d(*p)
    assert vec.shape == (50,)
    assert all(vec[i] == orient3d(p[0, i], p[1, i], p[2, i], p[3, i]) for i in range(50))
    det = np.linalg.det(np.stack([p[0] - p[3], p[1] - p[3], p[2] - p[3]], axis=1))
    np.testing.assert_array_equal(vec, np.sign(det))


def test_tetrahedron_hull():
    pts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    h = convex_hull(pts)
    assert len(h.facets) == 4
    assert h.volume == pytest.approx(1 / 6)


def test_cube_with_centroid():
    corners = np.array(np.meshgrid([0, 1], [0, 1], [0, 1], indexing="ij"), dtype=float).reshape(3, -1).T
    pts = np.vstack([corners, [[0.5, 0.5, 0.5]]])
    h = convex_hull(pts)
    assert set(h.vertices) == set(range(8))
    assert h.volume == pytest.approx(1.0)
    assert h.signed_distance(pts[-1])[0] == pytest.approx(-0.5)


def test_sphere_points_all_extreme():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(100, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    h = convex_hull(x)
    assert len(h.vertices) == 100
    # independent extreme-point oracle: qhull
    assert set(ConvexHull(x).vertices) == set(h.vertices)


def test_coplanar_rejected():
    pts = np.random.default_rng(2).random((10, 3))
    pts[:, 2] = 0.5
    with pytest.raises(DimensionError):
        convex_hull(pts)
    assert incremental_hull(pts) is None
    with pytest.raises(DimensionError):
        convex_hull(pts[:3])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(5, 80), st.booleans())
def test_hull_against_qhull(seed, n, grid):
    rng = np.random.default_rng(seed)
    if grid:
        # many coplanar and collinear points
        pts = rng.integers(0, 3, size=(n, 3)).astype(float)
    else:
        pts = rng.normal(size=(n, 3))
    if np.linalg.matrix_rank(pts - pts[0]) < 3:
        return
    ref = ConvexHull(pts)
    h = convex_hull(pts)
    assert h.volume == pytest.approx(ref.volume, rel=1e-12)
    # compare coordinates: grid inputs contain duplicate points
    assert set(map(tuple, pts[ref.vertices])) <= set(map(tuple, pts[h.vertices]))
    # every point inside or on the hull; facets outward
    assert np.all(h.signed_distance(pts) <= 1e-12)
    c = pts[h.vertices].mean(axis=0)
    assert np.all(h.equations[:, :3] @ c + h.equations[:, 3] < 0)


def test_hull_closed_surface():
    pts = np.random.default_rng(4).normal(size=(40, 3))
    f = convex_hull(pts).facets
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    directed = set(map(tuple, e))
    assert len(directed) == len(e)
    assert all((b, a) in directed for a, b in directed)
