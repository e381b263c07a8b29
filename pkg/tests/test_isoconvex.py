import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from cso import isoconvex
from cso.errors import DomainError, StructureError
from cso.isoconvex import (
    EQUATOR,
    INTERIOR,
    REF_CORNERS,
    RIM,
    QuadraticSurfacePatch,
    SharedSide,
    TriMesh2D,
    build_half_domain_surface,
    c_h_matrix,
    c_h_sweep,
    c_k_plus,
    c_k_value,
    convex_interpolate_graph,
    disk_mesh,
    export_surface_vtk,
    gradient_jumps,
    h1_error,
    hemisphere,
    hemisphere_gradient,
    patch_derivatives,
    sample_points,
    shared_side,
)


def graph(fn):
    return lambda x: np.array([x[0], x[1], fn(x[0], x[1])])


def saddle_patch(sign=-1):
    return QuadraticSurfacePatch.from_function(REF_CORNERS, graph(lambda x, y: x * x - y * y), sign)


# ---------------------------------------------------------------------------
# patch geometry


def test_sample_points():
    pts = sample_points()
    assert pts.shape == (14, 2)
    assert np.all(pts > 0) and np.all(pts.sum(axis=1) < 1)
    with pytest.raises(ValueError):
        sample_points(7)


def test_triangle_quadrature_exact():
    pts, w = isoconvex.triangle_quadrature(4)
    assert w.sum() == pytest.approx(0.5, rel=1e-14)
    # int x^a y^b = a! b! / (a + b + 2)!
    assert (w * pts[:, 0] ** 3 * pts[:, 1] ** 2).sum() == pytest.approx(6 * 2 / 5040, rel=1e-13)


def test_affine_patch_derivatives():
    A = np.array([[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]])
    b = np.array([0.1, 0.2, 0.3])
    p = QuadraticSurfacePatch.from_function(REF_CORNERS, lambda x: A @ x + b)
    np.testing.assert_allclose(p.offsets, 0, atol=1e-15)
    a, a1, a2, a11, a12, a22 = patch_derivatives(p, [0.2, 0.3])
    np.testing.assert_allclose(a, A @ [0.2, 0.3] + b, atol=1e-15)
    np.testing.assert_allclose(a1, A[:, 0])
    np.testing.assert_allclose(a2, A[:, 1])
    for d in (a11, a12, a22):
        np.testing.assert_allclose(d, 0, atol=1e-14)


@pytest.mark.parametrize("x", [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.25, 0.5]])
def test_saddle_patch_derivatives(x):
    a, a1, a2, a11, a12, a22 = patch_derivatives(saddle_patch(), x)
    np.testing.assert_allclose(a, [x[0], x[1], x[0] ** 2 - x[1] ** 2], atol=1e-15)
    np.testing.assert_allclose(a1, [1, 0, 2 * x[0]], atol=1e-15)
    np.testing.assert_allclose(a2, [0, 1, -2 * x[1]], atol=1e-15)
    np.testing.assert_allclose(a11, [0, 0, 2])
    np.testing.assert_allclose(a12, 0, atol=1e-15)
    np.testing.assert_allclose(a22, [0, 0, -2])


def test_patch_interpolates_control_points():
    rng = np.random.default_rng(0)
    p = QuadraticSurfacePatch(rng.normal(size=(6, 3)))
    nodes = np.vstack([REF_CORNERS, [(REF_CORNERS[i] + REF_CORNERS[j]) / 2 for i, j in isoconvex.EDGE_PAIRS]])
    for k, x in enumerate(nodes):
        np.testing.assert_allclose(patch_derivatives(p, x)[0], p.control[k], atol=1e-14)


def test_patch_derivatives_finite_differences():
    rng = np.random.default_rng(1)
    p = QuadraticSurfacePatch(rng.normal(size=(6, 3)))
    x, h = np.array([0.3, 0.2]), 1e-6
    _, a1, a2, *_ = patch_derivatives(p, x)
    f = lambda y: patch_derivatives(p, y)[0]
    np.testing.assert_allclose(a1, (f(x + [h, 0]) - f(x - [h, 0])) / (2 * h), atol=1e-8)
    np.testing.assert_allclose(a2, (f(x + [0, h]) - f(x - [0, h])) / (2 * h), atol=1e-8)


def test_patch_validation():
    with pytest.raises(ValueError):
        QuadraticSurfacePatch(np.zeros((5, 3)))
    with pytest.raises(ValueError):
        QuadraticSurfacePatch(np.zeros((6, 3)), outward_sign=0)


# ---------------------------------------------------------------------------
# C_H


def test_planar_c_h_zero():
    p = QuadraticSurfacePatch.from_function(REF_CORNERS, graph(lambda x, y: 0.3 * x - y))
    H, psd = c_h_matrix(p, [0.2, 0.2])
    np.testing.assert_allclose(H, 0, atol=1e-15)
    assert psd


def test_saddle_c_h_indefinite():
    H, psd = c_h_matrix(saddle_patch(), [0.0, 0.0])
    np.testing.assert_allclose(H, np.diag([2.0, -2.0]), atol=1e-10)
    assert not psd
    assert c_h_sweep(saddle_patch()) == pytest.approx(-2.0, rel=0.2)


def test_cap_c_h_positive():
    # the body below a downward paraboloid is convex
    p = QuadraticSurfacePatch.from_function(REF_CORNERS, graph(lambda x, y: -(x * x + y * y)))
    H, psd = c_h_matrix(p, [0.0, 0.0])
    np.testing.assert_allclose(H, 2 * np.eye(2), atol=1e-14)
    assert psd
    flipped = QuadraticSurfacePatch(p.control, -1)
    assert not c_h_matrix(flipped, [0.0, 0.0])[1]


def test_c_h_rank_deficient():
    p = QuadraticSurfacePatch(np.zeros((6, 3)))
    with pytest.raises(DomainError):
        c_h_matrix(p, [0.2, 0.2])


def test_c_h_rigid_motion_invariant():
    rng = np.random.default_rng(2)
    p = QuadraticSurfacePatch.from_function(REF_CORNERS, graph(lambda x, y: -(x * x + 0.5 * x * y + 2 * y * y)))
    R = Rotation.random(random_state=3).as_matrix()
    q = QuadraticSurfacePatch(p.control @ R.T + rng.normal(size=3))
    for x in sample_points():
        np.testing.assert_allclose(c_h_matrix(q, x)[0], c_h_matrix(p, x)[0], atol=1e-12)


# ---------------------------------------------------------------------------
# C_K


RIGHT = np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
LEFT = np.array([[0.0, -1.0], [0.0, 1.0], [-1.0, 0.0]])


def kink_pair(fn):
    return (QuadraticSurfacePatch.from_function(RIGHT, graph(fn)),
            QuadraticSurfacePatch.from_function(LEFT, graph(fn)))


@pytest.mark.parametrize("s", [0.0, 0.3, 1.0])
def test_roof_and_valley(s):
    roof = shared_side(*kink_pair(lambda x, y: -abs(x)))
    valley = shared_side(*kink_pair(lambda x, y: abs(x)))
    assert c_k_value(roof, s, unit=True) == pytest.approx(1.0)
    assert c_k_value(valley, s, unit=True) == pytest.approx(-1.0)


def test_flat_kink_zero():
    side = shared_side(*kink_pair(lambda x, y: 0.2 * x + y))
    assert c_k_value(side, 0.5) == pytest.approx(0.0, abs=1e-15)


def test_c_k_swap_and_scaling():
    fn = lambda x, y: -0.7 * abs(x) - 0.3 * x * x + 0.1 * y * y
    plus, minus = kink_pair(fn)
    a = c_k_value(shared_side(plus, minus), 0.4)
    b = c_k_value(shared_side(minus, plus), 0.6)
    assert a > 0
    assert b == pytest.approx(a, rel=1e-12)
    s = 2.5
    big = shared_side(QuadraticSurfacePatch(s * plus.control), QuadraticSurfacePatch(s * minus.control))
    # two unnormalized normals and a tangent: degree 5
    assert c_k_value(big, 0.4) == pytest.approx(s**5 * a, rel=1e-12)
    assert c_k_value(big, 0.4, unit=True) == pytest.approx(c_k_value(shared_side(plus, minus), 0.4, unit=True))


def test_c_k_rotation_invariant():
    plus, minus = kink_pair(lambda x, y: -abs(x) + 0.2 * y * y)
    R = Rotation.random(random_state=7).as_matrix()
    rot = shared_side(QuadraticSurfacePatch(plus.control @ R.T), QuadraticSurfacePatch(minus.control @ R.T))
    assert c_k_value(rot, 0.25) == pytest.approx(c_k_value(shared_side(plus, minus), 0.25), rel=1e-12)


def test_shared_side_errors():
    plus, _ = kink_pair(lambda x, y: 0 * x)
    far = QuadraticSurfacePatch(plus.control + 10)
    with pytest.raises(StructureError):
        shared_side(plus, far)
    bent = plus.control.copy()
    _, minus = kink_pair(lambda x, y: 0 * x)
    c = minus.control.copy()
    c[3] += [0, 0, 0.1]  # edge point of the shared side
    with pytest.raises(StructureError):
        shared_side(plus, QuadraticSurfacePatch(c))
    with pytest.raises(StructureError):
        c_k_value(SharedSide(QuadraticSurfacePatch(bent), None, (0, 2), None), 0.5)


def test_c_k_plus_equator():
    p = QuadraticSurfacePatch.from_function(RIGHT, graph(lambda x, y: 0 * x))
    side = SharedSide(p, None, (0, 2), None)
    assert c_k_plus(side, EQUATOR, 0.5) == pytest.approx(1.0)
    tilted = QuadraticSurfacePatch.from_function(RIGHT, graph(lambda x, y: -x))
    assert c_k_plus(SharedSide(tilted, None, (0, 2), None), EQUATOR, 0.5) == pytest.approx(2**-0.5)


def test_c_k_plus_rim_flat_top():
    s = build_half_domain_surface(lambda x: np.ones(len(x)), disk_mesh(2))
    rims = [side for side, kind in s.sides if kind == RIM]
    assert len(rims) == 12
    # horizontal top meets the vertical wall at a right angle
    for side in rims:
        assert c_k_plus(side, RIM, 0.5) == pytest.approx(1.0)
    interior = [side for side, kind in s.sides if kind == INTERIOR]
    assert abs(c_k_plus(interior[0], INTERIOR, 0.5)) <= 1e-15


# ---------------------------------------------------------------------------
# planar meshes and convex interpolation


def test_disk_mesh_properties():
    m = disk_mesh(4, 0.9)
    assert len(m.points) == 1 + 3 * 4 * 5
    assert np.all(m.areas() > 0)
    assert m.max_angle() < 90
    np.testing.assert_allclose(np.linalg.norm(m.points[m.boundary_nodes], axis=1), 0.9)
    assert disk_mesh(8).h == pytest.approx(disk_mesh(4).h / 2, rel=0.15)
    with pytest.raises(ValueError):
        disk_mesh(0)


def test_trimesh_connectivity():
    m = TriMesh2D([[0.0, 0], [1, 0], [1, 1], [0, 1]], [[0, 2, 1], [0, 2, 3]])
    assert np.all(m.areas() > 0)
    assert len(m.interior_edges) == 1 and len(m.boundary_edges) == 4
    with pytest.raises(StructureError):
        TriMesh2D([[0.0, 0], [1, 0], [2, 0]], [[0, 1, 2]])


def test_jumps_of_p1_function():
    m = disk_mesh(3)
    v = np.random.default_rng(4).normal(size=len(m.points))
    f = isoconvex.GraphFunctionMesh(m, v, v[m.edges].mean(axis=1))
    j = gradient_jumps(f)
    # a P1 function has one jump per edge: both endpoints agree with the matrix rows
    ref = isoconvex.p1_jump_matrix(m) @ v
    np.testing.assert_allclose(j[:, 0], ref, atol=1e-12)
    np.testing.assert_allclose(j[:, 1], ref, atol=1e-12)


def test_jump_of_kink():
    m = TriMesh2D([[0.0, -1], [1, 0], [0, 1], [-1, 0]], [[0, 1, 2], [0, 2, 3]])
    x = m.points[:, 0]
    f = isoconvex.GraphFunctionMesh(m, np.abs(x), np.abs(m.midpoints[:, 0]))
    np.testing.assert_allclose(gradient_jumps(f), 2.0)


def test_correction_function_jumps():
    m = disk_mesh(3)
    psi = isoconvex.correction_function(m)
    assert np.all(isoconvex.p1_jump_matrix(m) @ psi >= 1 - 1e-9)


def half_norm2(x):
    return 0.5 * (np.asarray(x) ** 2).sum(axis=-1)


def test_convex_quadratic_reproduced():
    m = disk_mesh(4)
    f = convex_interpolate_graph(half_norm2, m)
    assert f.gamma1 == 0 and f.gamma2 == 0
    assert f.certified
    assert h1_error(f, half_norm2, lambda x: np.asarray(x)) <= 1e-12


def test_affine_reproduced():
    m = disk_mesh(3)
    u = lambda x: 1 + 2 * np.asarray(x)[:, 0] - np.asarray(x)[:, 1]
    f = convex_interpolate_graph(u, m)
    assert f.gamma1 == 0 and f.gamma2 == 0 and f.certified
    grad = lambda x: np.tile([2.0, -1.0], (len(x), 1))
    assert h1_error(f, u, grad) <= 1e-12


def test_nonconvex_function_gets_corrected():
    m = disk_mesh(4)
    f = convex_interpolate_graph(lambda x: np.sin(3 * np.asarray(x)[:, 0]), m)
    assert f.gamma1 > 0 or f.gamma2 > 0
    assert f.certified
    assert f.min_jump >= -1e-10 and f.min_hessian_eig >= -1e-10


@pytest.fixture(scope="module")
def hemisphere_fits():
    out = {}
    for n in (8, 16):
        f = convex_interpolate_graph(hemisphere, disk_mesh(n, 0.9), concave=True)
        out[n] = (f, h1_error(f, hemisphere, hemisphere_gradient))
    return out


def test_hemisphere_concave_and_converging(hemisphere_fits):
    f8, e8 = hemisphere_fits[8]
    f16, e16 = hemisphere_fits[16]
    assert f8.concave and f8.certified and f16.certified
    assert e16 < e8


def test_hemisphere_surface_certified(hemisphere_fits):
    f, _ = hemisphere_fits[8]
    s = build_half_domain_surface(f)
    assert s.min_c_h() >= -1e-9
    assert s.min_c_k_plus() >= -1e-9
    kinds = {kind for _, kind in s.sides}
    assert kinds == {INTERIOR, RIM}


def test_surface_corners_on_sphere():
    m = disk_mesh(4, 0.9)
    s = build_half_domain_surface(hemisphere, m)
    assert len(s.patches) == len(m.triangles)
    corners = np.vstack([p.corners for p in s.patches])
    np.testing.assert_allclose(np.linalg.norm(corners, axis=1), 1.0, atol=1e-14)
    np.testing.assert_array_equal(s.sym_points[:, 2], 0)


def test_constant_zero_surface_is_equator():
    s = build_half_domain_surface(lambda x: np.zeros(len(x)), disk_mesh(2))
    assert {kind for side, kind in s.sides if side.minus is None} == {EQUATOR}
    assert s.min_c_h() == pytest.approx(0.0, abs=1e-15)


def test_negative_graph_rejected():
    with pytest.raises(DomainError):
        build_half_domain_surface(lambda x: -np.ones(len(x)), disk_mesh(2))


@pytest.mark.parametrize("quadratic", [True, False])
def test_surface_vtk(tmp_path, quadratic):
    s = build_half_domain_surface(hemisphere, disk_mesh(2, 0.9))
    path = tmp_path / "s.vtk"
    export_surface_vtk(s, path, quadratic=quadratic)
    text = path.read_text()
    n_tri = len(s.patches)
    assert f"POINTS {6 * n_tri} double" in text
    cells = n_tri if quadratic else 4 * n_tri
    assert f"CELL_TYPES {cells}" in text
    assert ("\n22\n" in text) == quadratic
