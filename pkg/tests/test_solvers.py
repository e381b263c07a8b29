import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cso.errors import SolverError
from cso.solvers import (
    FEASIBLE,
    INFEASIBLE,
    UNBOUNDED,
    LpProblem,
    QpProblem,
    cg_solve,
    jacobi,
    kkt_residuals,
    lp_solve,
    qp_solve,
)

# ---------------------------------------------------------------------------
# brute-force oracles


def qp_by_enumeration(A, q, G, g, tol=1e-9):
    """Exact QP optimum by trying every active set."""
    n, m = len(q), len(g)
    best = None
    for k in range(min(m, n) + 1):
        for S in itertools.combinations(range(m), k):
            S = list(S)
            K = np.block([[A, G[S].T], [G[S], np.zeros((k, k))]])
            if np.linalg.matrix_rank(K) < n + k:
                continue
            sol = np.linalg.solve(K, np.concatenate([-q, g[S]]))
            x, mu = sol[:n], sol[n:]
            if np.all(G @ x <= g + tol) and np.all(mu >= -tol):
                f = 0.5 * x @ A @ x + q @ x
                if best is None or f < best[1]:
                    best = (x, f)
    return best


def lp_vertices(G, g, tol=1e-9):
    """Vertices of ``{x >= 0, G x <= g}`` by exhaustive enumeration."""
    n = G.shape[1]
    rows = np.vstack([G, -np.eye(n)])
    rhs = np.concatenate([g, np.zeros(n)])
    out = []
    for S in itertools.combinations(range(len(rhs)), n):
        M = rows[list(S)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, rhs[list(S)])
        if np.all(rows @ x <= rhs + tol):
            out.append(x)
    return out


# ---------------------------------------------------------------------------
# LP


def test_lp_examples():
    r = lp_solve(LpProblem([1.0], G=[[-1.0]], g=[-1.0]))
    assert r.status == FEASIBLE and r.x[0] == pytest.approx(1.0) and r.objective == pytest.approx(1.0)
    r = lp_solve(LpProblem([0.0], G=[[1.0], [-1.0]], g=[-1.0, -1.0]))
    assert r.status == INFEASIBLE
    r = lp_solve(LpProblem([-1.0], lower=[0.0]))
    assert r.status == UNBOUNDED


def test_lp_equality_and_bounds():
    # min x1 + 2 x2 s.t. x1 + x2 = 1, x >= 0.25
    r = lp_solve(LpProblem([1.0, 2.0], E=[[1.0, 1.0]], e=[1.0], lower=[0.25, 0.25]))
    np.testing.assert_allclose(r.x, [0.75, 0.25], atol=1e-12)


def test_lp_dimension_mismatch():
    with pytest.raises(ValueError):
        LpProblem([1.0, 2.0], G=[[1.0]], g=[1.0])


@pytest.mark.parametrize("seed", range(50))
def test_lp_classification_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    m = int(rng.integers(1, 6))
    G = rng.normal(size=(m, n))
    g = rng.normal(size=m)
    verts = lp_vertices(G, g)
    r = lp_solve(LpProblem(np.zeros(n), G, g, lower=np.zeros(n)))
    assert r.status == (FEASIBLE if verts else INFEASIBLE)
    if verts:
        assert np.all(G @ r.x <= g + 1e-9) and np.all(r.x >= -1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_lp_optimum_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(1, 4))
    G = np.vstack([rng.normal(size=(3, n)), np.eye(n)])
    g = np.concatenate([rng.normal(size=3), np.full(n, 5.0)])
    c = rng.normal(size=n)
    verts = lp_vertices(G, g)
    r = lp_solve(LpProblem(c, G, g, lower=np.zeros(n)))
    if not verts:
        assert r.status == INFEASIBLE
        return
    best = min(c @ v for v in verts)
    assert r.status == FEASIBLE
    assert r.objective == pytest.approx(best, abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_lp_not_beaten_by_samples(seed):
    rng = np.random.default_rng(seed)
    n = 3
    G = np.vstack([rng.normal(size=(3, n)), np.eye(n)])
    g = np.concatenate([np.abs(rng.normal(size=3)) + 0.1, np.ones(n)])
    c = rng.normal(size=n)
    r = lp_solve(LpProblem(c, G, g, lower=np.zeros(n)))
    assert r.status == FEASIBLE
    x = rng.random((10_000, n))
    ok = np.all(x @ G.T <= g, axis=1)
    assert np.all(x[ok] @ c >= r.objective - 1e-9)


def test_lp_deterministic():
    rng = np.random.default_rng(3)
    p = LpProblem(rng.normal(size=4), rng.normal(size=(5, 4)), rng.random(5) + 0.1, lower=np.zeros(4))
    a, b = lp_solve(p), lp_solve(p)
    assert a.status == b.status
    np.testing.assert_array_equal(a.x, b.x)


# ---------------------------------------------------------------------------
# QP


def test_qp_unconstrained():
    r = qp_solve(QpProblem(np.eye(2), [1.0, 0.0]))
    np.testing.assert_allclose(r.x, [-1.0, 0.0], atol=1e-12)


def test_qp_single_constraint():
    r = qp_solve(QpProblem(np.eye(2), [1.0, 0.0], [[-1.0, 0.0]], [0.5]))
    np.testing.assert_allclose(r.x, [-0.5, 0.0], atol=1e-10)
    np.testing.assert_allclose(r.multipliers, [0.5], atol=1e-10)
    assert list(r.active) == [0]


def _random_qp(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    m = int(rng.integers(1, 9))
    B = rng.normal(size=(n, n))
    A = B @ B.T + 0.1 * np.eye(n)
    q = rng.normal(size=n) * 3
    G = rng.normal(size=(m, n))
    # a known interior point keeps the problem feasible
    x0 = rng.normal(size=n)
    g = G @ x0 + rng.random(m)
    return A, q, G, g


@pytest.mark.parametrize("seed", range(50))
def test_qp_matches_active_set_enumeration(seed):
    A, q, G, g = _random_qp(seed)
    x_ref, f_ref = qp_by_enumeration(A, q, G, g)
    r = qp_solve(QpProblem(A, q, G, g))
    np.testing.assert_allclose(r.x, x_ref, atol=1e-6)
    assert r.objective == pytest.approx(f_ref, abs=1e-6)
    res = kkt_residuals(QpProblem(A, q, G, g), r.x, r.multipliers)
    assert max(res.values()) <= 1e-8


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_qp_not_beaten_by_feasible_samples(seed):
    A, q, G, g = _random_qp(seed)
    r = qp_solve(QpProblem(A, q, G, g))
    rng = np.random.default_rng(seed)
    x = r.x + rng.normal(size=(10_000, len(q))) * rng.choice([1e-3, 1e-1, 1.0], size=(10_000, 1))
    ok = np.all(x @ G.T <= g, axis=1)
    f = 0.5 * np.einsum("ki,ij,kj->k", x[ok], A, x[ok]) + x[ok] @ q
    assert np.all(f >= r.objective - 1e-9)


def test_qp_infeasible_raises():
    with pytest.raises(SolverError) as exc:
        qp_solve(QpProblem(np.eye(1), [0.0], [[1.0], [-1.0]], [-1.0, -1.0]), max_iter=500)
    assert exc.value.history


def test_qp_deterministic():
    A, q, G, g = _random_qp(7)
    a, b = qp_solve(QpProblem(A, q, G, g)), qp_solve(QpProblem(A, q, G, g))
    np.testing.assert_array_equal(a.x, b.x)


def test_qp_many_rows_without_polish():
    A, q, G, g = _random_qp(11)
    r = qp_solve(QpProblem(A, q, G, g), tol=1e-6, polish=False)
    x_ref, _ = qp_by_enumeration(A, q, G, g)
    np.testing.assert_allclose(r.x, x_ref, atol=1e-4)


# ---------------------------------------------------------------------------
# CG


def test_cg_identity():
    b = np.arange(1.0, 6.0)
    x, info = cg_solve(np.eye(5), b)
    np.testing.assert_allclose(x, b)
    assert info["iterations"] == 1


def test_cg_diagonal_jacobi():
    d = np.arange(1.0, 11.0)
    x, info = cg_solve(np.diag(d), np.ones(10), jacobi(d))
    np.testing.assert_allclose(x, 1 / d)
    assert info["iterations"] <= 10


def test_cg_laplacian_matches_direct():
    n = 50
    A = 2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    b = np.zeros(n)
    b[0] = 1
    x, _ = cg_solve(A, b, tol=1e-13)
    np.testing.assert_allclose(x, np.linalg.solve(A, b), atol=1e-10)


def test_cg_max_iter():
    n = 50
    A = 2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    with pytest.raises(SolverError) as exc:
        cg_solve(A, np.ones(n), max_iter=3)
    assert len(exc.value.history) >= 3


def test_cg_zero_rhs():
    x, info = cg_solve(np.eye(3), np.zeros(3))
    assert np.all(x == 0) and info["iterations"] == 0
