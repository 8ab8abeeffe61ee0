"""Dense symmetric (generalized) eigenproblems for snapshot Rayleigh-Ritz reduction.

Snapshot sets are small (tens to a couple of hundred functions), so the
pencil ``S v = lam T v`` is whitened against the rank-filtered spectral
decomposition of ``T`` and the resulting standard problem is diagonalized by
cyclic Jacobi rotations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RANK_THRESHOLD = 1e-12


class DegenerateSnapshots(ValueError):
    """Snapshot Gram has lower rank than required."""


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: n-1 rounds of n/2 disjoint index pairs covering every pair once."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[k], players[m - 1 - k]) for k in range(m // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p < n and q < n]
        rounds.append((np.array([p for p, _ in pairs]), np.array([q for _, q in pairs])))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(a: np.ndarray, tol: float = 1e-14, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi diagonalization of a symmetric matrix.

    Sweeps follow the parallel (round-robin) ordering, so every round applies
    n/2 commuting plane rotations at once.  Returns eigenvalues in diagonal
    order and the orthogonal matrix of eigenvectors as columns.
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    if a.ndim != 2 or a.shape != (n, n):
        raise ValueError("matrix must be square")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if n < 2 or scale == 0.0:
        return np.diag(a).copy(), v
    rounds = _round_robin(n)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= tol * scale:
            break
        for p, q in rounds:
            apq = a[p, q]
            live = np.abs(apq) > 1e-300
            if not live.any():
                continue
            p, q, apq = p[live], q[live], apq[live]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.copysign(1.0, theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            ap, aq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * ap - s[:, None] * aq
            a[q, :] = s[:, None] * ap + c[:, None] * aq
            ap, aq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
    else:
        raise RuntimeError("Jacobi iteration did not converge")
    return np.diag(a).copy(), v


def filter_rank(T: np.ndarray, rel_threshold: float = RANK_THRESHOLD,
                neg_tol: float = 1e-8) -> tuple[np.ndarray, int]:
    """Whitening transform ``W`` with ``W^T T W = I`` on the numerically nonzero range of ``T``.

    Directions whose eigenvalue falls below ``rel_threshold * lambda_max(T)`` are
    dropped.  A clearly negative eigenvalue signals an assembly bug.
    """
    T = np.asarray(T, float)
    if not np.allclose(T, T.T, rtol=0, atol=1e-10 * max(np.abs(T).max(), 1e-300)):
        raise ValueError("Gram matrix is not symmetric")
    mu, U = jacobi_eigh(T)
    top = mu.max() if mu.size else 0.0
    if top <= 0:
        return np.zeros((T.shape[0], 0)), 0
    if mu.min() < -neg_tol * top:
        raise ValueError(f"Gram matrix has negative eigenvalue {mu.min():.3e}")
    keep = np.flatnonzero(mu >= rel_threshold * top)
    keep = keep[np.argsort(-mu[keep], kind="stable")]
    W = U[:, keep] / np.sqrt(mu[keep])
    return W, len(keep)


@dataclass(frozen=True)
class EigenPairs:
    values: np.ndarray     # descending
    vectors: np.ndarray    # columns, T-orthonormal
    retained_rank: int


def solve_pencil(S: np.ndarray, T: np.ndarray, rel_threshold: float = RANK_THRESHOLD) -> EigenPairs:
    """All retained eigenpairs of ``S v = lam T v``, sorted by decreasing ``lam``.

    Snapshots are first scaled to unit ``T``-diagonal; zero snapshots are
    ignored.  Ties keep the order of the whitened basis (stable sort).
    """
    S = np.asarray(S, float)
    T = np.asarray(T, float)
    if S.shape != T.shape or S.shape[0] != S.shape[1]:
        raise ValueError("S and T must be square and of equal size")
    d = np.diag(T).copy()
    live = d > 0
    if not live.any():
        raise DegenerateSnapshots("snapshot set has rank 0")
    scale = np.zeros_like(d)
    scale[live] = 1.0 / np.sqrt(d[live])
    Ts = T * np.outer(scale, scale)
    Ss = S * np.outer(scale, scale)
    W, rank = filter_rank(Ts[np.ix_(live, live)], rel_threshold)
    if rank == 0:
        raise DegenerateSnapshots("snapshot set has rank 0")
    C = W.T @ Ss[np.ix_(live, live)] @ W
    lam, Y = jacobi_eigh(C)
    order = np.argsort(-lam, kind="stable")
    lam, Y = lam[order], Y[:, order]
    V = np.zeros((S.shape[0], rank))
    V[live] = W @ Y
    V *= scale[:, None]
    res = S @ V - (T @ V) * lam
    tol = 1e-8 * (np.linalg.norm(S) + np.linalg.norm(T))
    if np.linalg.norm(res, axis=0).max() > tol:
        raise RuntimeError("generalized eigen-residual above tolerance")
    return EigenPairs(lam, V, rank)
