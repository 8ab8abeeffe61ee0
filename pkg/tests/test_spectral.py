import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msgfem.spectral import DegenerateSnapshots, filter_rank, jacobi_eigh, solve_pencil

import oracles


def spd(rng, n, shift=0.0):
    B = rng.standard_normal((n, n))
    return B @ B.T + shift * np.eye(n)


def test_jacobi_matches_lapack():
    rng = np.random.default_rng(0)
    for n in (1, 2, 5, 17, 40):
        A = rng.standard_normal((n, n))
        A = A + A.T
        lam, V = jacobi_eigh(A)
        assert np.allclose(np.sort(lam), np.linalg.eigvalsh(A), atol=1e-12 * max(1, np.abs(A).max()))
        assert np.allclose(V.T @ V, np.eye(n), atol=1e-13)
        assert np.allclose(A @ V, V * lam, atol=1e-11)


def test_filter_rank_examples():
    W, r = filter_rank(np.eye(3))
    assert r == 3 and np.allclose(np.abs(W), np.eye(3)[:, np.argsort(np.zeros(3), kind="stable")])
    T = np.diag([1.0, 0.0, 2.0])
    assert filter_rank(T)[1] == 2
    X = np.random.default_rng(1).standard_normal((20, 3))
    X = np.column_stack([X, X[:, 1]])
    W, r = filter_rank(X.T @ X)
    assert r == 3
    assert np.allclose(W.T @ (X.T @ X) @ W, np.eye(3), atol=1e-10)


def test_filter_rank_rejects_indefinite():
    with pytest.raises(ValueError):
        filter_rank(np.diag([1.0, -0.5]))


def test_pencil_identity_and_diagonal():
    T = spd(np.random.default_rng(2), 4, 1.0)
    assert np.allclose(solve_pencil(T, T).values, 1.0, atol=1e-12)
    p = solve_pencil(np.diag([4.0, 1.0]), np.eye(2))
    assert np.allclose(p.values, [4.0, 1.0])
    assert np.allclose(np.abs(p.vectors), np.eye(2))


def test_pencil_rank_zero_is_error():
    with pytest.raises(DegenerateSnapshots):
        solve_pencil(np.zeros((2, 2)), np.zeros((2, 2)))


@pytest.mark.parametrize("seed", range(20))
def test_pencil_matches_bisection_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    T = spd(rng, n, n)
    S = spd(rng, n)
    ref = oracles.pencil_eigenvalues_bisection(S, T)
    got = solve_pencil(S, T, rel_threshold=0.0).values
    assert np.abs(got - ref).max() <= 1e-8 * max(1.0, np.abs(ref).max())


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 12), c=st.floats(1e-3, 1e3))
def test_pencil_residual_and_scale_invariance(seed, n, c):
    rng = np.random.default_rng(seed)
    T = spd(rng, n, 0.5)
    S = spd(rng, n)
    p = solve_pencil(S, T)
    assert np.all(np.diff(p.values) <= 0)
    res = S @ p.vectors - (T @ p.vectors) * p.values
    assert np.linalg.norm(res, axis=0).max() <= 1e-8 * (np.linalg.norm(S) + np.linalg.norm(T))
    q = solve_pencil(c * S, c * T)
    assert np.allclose(q.values, p.values, rtol=1e-12, atol=1e-12 * np.abs(p.values).max())


def test_restriction_like_pencils_lie_in_unit_interval():
    rng = np.random.default_rng(5)
    for _ in range(20):
        X = rng.standard_normal((30, 8))
        w = rng.uniform(0, 1, 30)
        S = X.T @ (w[:, None] * X)
        T = X.T @ X
        lam = solve_pencil(S, T).values
        assert lam.min() >= -1e-9 and lam.max() <= 1 + 1e-9


def test_enlarging_snapshot_set_never_decreases_eigenvalues():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((40, 12))
    w = rng.uniform(0, 1, 40)
    S = X.T @ (w[:, None] * X)
    T = X.T @ X
    prev = None
    for m in range(3, 13):
        lam = solve_pencil(S[:m, :m], T[:m, :m]).values
        if prev is not None:
            assert np.all(lam[:len(prev)] >= prev - 1e-12)
        prev = lam


def test_duplicate_snapshot_is_filtered():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((20, 3))
    X = np.column_stack([X, X[:, 0]])
    p = solve_pencil(X.T @ (0.5 * X), X.T @ X)
    assert p.retained_rank == 3
    assert np.allclose(p.values, 0.5)
