"""Periodic homogenization and the homogenization limit of local n-widths."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import fem
from .fem import Mesh, SolverError
from .localspace import (LocalBasis, PatchPair, ellipse_patch, full_restriction_eigenvalues,
                         homogenized_trace_space, restriction_grams, snapshots_poly_neumann)
from .microstructure import CoefficientField, FieldError, Rect, SymMat2, constant_field, periodic_field
from .spectral import solve_pencil


# ------------------------------------------------------------- cell problem

@dataclass
class CellProblemResult:
    mesh: Mesh
    correctors: np.ndarray      # (n_nodes, 2) nodal values of w^1, w^2 (zero mean)
    A0: SymMat2
    residual: float
    asymmetry: float


def periodic_map(mesh: Mesh) -> sp.csr_matrix:
    """Node-to-unknown identification matrix for a periodic structured mesh."""
    nx, ny = mesh.nx, mesh.ny
    j, i = np.divmod(np.arange(mesh.n_nodes), nx + 1)
    col = (j % ny) * nx + (i % nx)
    return sp.csr_matrix((np.ones(mesh.n_nodes), (np.arange(mesh.n_nodes), col)),
                         shape=(mesh.n_nodes, nx * ny))


def cell_problem(cell: CoefficientField, n: int = 128) -> CellProblemResult:
    """Correctors and effective matrix of a unit-cell field on an ``n x n`` periodic mesh.

    The correctors ``w^k`` solve ``div A (grad w^k + e_k) = 0`` with periodic
    identification of opposite edges and zero mean; the effective matrix is
    the symmetric energy form ``A0_kl = int A (grad w^k + e_k) . (grad w^l + e_l)``.
    """
    if cell.domain != Rect(0.0, 0.0, 1.0, 1.0):
        raise FieldError("unit cell must live on [0,1]^2")
    if cell.holes.any():
        raise FieldError("cell problems need a field without holes")
    mesh = fem.build_mesh(cell.domain, n, n, cell)
    K = fem.assemble_stiffness(mesh)
    P = periodic_map(mesh)
    Kp = sp.csc_matrix(P.T @ K @ P)
    free = np.arange(1, Kp.shape[0])
    lu = fem._factor(Kp[free][:, free])
    weights = np.asarray(fem.assemble_weighted_mass(mesh).sum(axis=1)).ravel()
    X = mesh.nodes.T
    W = np.zeros((mesh.n_nodes, 2))
    residual = 0.0
    for k in range(2):
        rhs = -(P.T @ (K @ X[k]))
        w = np.zeros(Kp.shape[0])
        w[free] = lu.solve(rhs[free])
        w[free] += lu.solve(rhs[free] - Kp[free] @ w)
        # scale by the data K x_k: for a zero corrector the load is pure roundoff
        knorm = abs(Kp).sum(axis=1).max()
        residual = max(residual, float(np.abs(Kp @ w - rhs).max() / (knorm * (np.abs(w).max() + 1.0))))
        full = P @ w
        W[:, k] = full - weights @ full / weights.sum()
    if residual > fem.RESIDUAL_TOL:
        raise SolverError(f"periodic cell residual {residual:.3e} above tolerance")
    G = W + X.T
    A = G.T @ (K @ G)
    asym = abs(A[0, 1] - A[1, 0])
    A0 = SymMat2(A[0, 0], 0.5 * (A[0, 1] + A[1, 0]), A[1, 1])
    return CellProblemResult(mesh, W, A0, residual, asym)


def voigt_reuss(cell: CoefficientField) -> tuple[float, float]:
    """(harmonic mean of the smallest, arithmetic mean of the largest) cellwise eigenvalue."""
    from .microstructure import sym2_eigvals

    c = cell.cells.reshape(-1, 3)
    lo, hi = sym2_eigvals(c[:, 0], c[:, 1], c[:, 2])
    return 1.0 / np.mean(1.0 / lo), float(np.mean(hi))


def write_correctors_csv(path, result: CellProblemResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "w1", "w2"])
        for (x, y), (a, b) in zip(result.mesh.nodes, result.correctors):
            w.writerow(["%.17g" % x, "%.17g" % y, "%.17g" % a, "%.17g" % b])


# -------------------------------------------------------- analytic n-widths

def analytic_ellipse_widths(r: float, r_star: float, n: int) -> list[tuple[float, int]]:
    """``(lambda_j, 2)`` for j = 1..n with ``lambda_j = (r / r*)^(2j)``.

    The values do not depend on A0 once the ellipses are adapted to its
    eigenframe: the change of variables to a disk preserves energy ratios.
    """
    if not 0 < r < r_star:
        raise ValueError("need 0 < r < r*")
    q = (r / r_star) ** 2
    return [(q ** j, 2) for j in range(1, n + 1)]


def flatten_widths(widths: list[tuple[float, int]]) -> np.ndarray:
    return np.repeat([w for w, _ in widths], [m for _, m in widths])


# ---------------------------------------------------------------- eps sweep

@dataclass(frozen=True)
class EllipseSetup:
    """Concentric A0-adapted ellipses centred at the origin of ``domain``."""

    r: float = 0.375
    r_star: float = 0.75
    h: float = 1.0 / 128
    domain: Rect = Rect(-1.0, -1.0, 1.0, 1.0)
    snapshots: int | str = "full"     # "full" or a polynomial snapshot count


@dataclass
class SweepTable:
    eps: list[float]
    values: np.ndarray          # (len(eps), n) restriction eigenvalues
    reference: np.ndarray       # (n,) constant-A0 eigenvalues
    q_values: np.ndarray        # (len(eps), n) Q estimator of the trace functions
    q_reference: np.ndarray
    A0: SymMat2

    @property
    def deviations(self) -> np.ndarray:
        return np.abs(self.values - self.reference)

    def rows(self):
        n = len(self.reference)
        for i in range(n):
            yield 0.0, i + 1, self.reference[i], 0.0, self.q_reference[i]
        for e, vals, qs in zip(self.eps, self.values, self.q_values):
            for i in range(n):
                yield e, i + 1, vals[i], abs(vals[i] - self.reference[i]), qs[i]


def patch_eigenvalues(patch: PatchPair, n: int, M: int | str = "full", A0: SymMat2 | None = None) -> np.ndarray:
    """Top ``n`` restriction eigenvalues from ``M`` polynomial snapshots or the full harmonic space."""
    if M == "full":
        return full_restriction_eigenvalues(patch, n)
    snaps = snapshots_poly_neumann(patch, int(M), A0)
    S, T = restriction_grams(patch, snaps.values)
    pairs = solve_pencil(S, T)
    return np.clip(pairs.values[:n], 0.0, None)


def q_estimator(basis: LocalBasis, index: int) -> float:
    """omega-energy of the ``index``-th (1-based) trace function scaled to unit omega*-energy."""
    if basis.values.shape[1] == 0:
        raise ValueError("empty trace space")
    if not 1 <= index <= basis.values.shape[1]:
        raise IndexError(f"index {index} outside 1..{basis.values.shape[1]}")
    u = basis.values[:, index - 1]
    outer = basis.patch.energy(u)
    if outer == 0.0:
        raise ValueError("trace function has zero energy")
    return basis.patch.energy(u, inner=True) / outer


def epsilon_sweep(cell: CoefficientField, eps_list, n: int = 4, setup: EllipseSetup = EllipseSetup(),
                  A0: SymMat2 | None = None, cell_n: int = 128) -> SweepTable:
    """Restriction eigenvalues on eps-periodic fields against the constant-A0 field.

    ``eps_list`` is processed in decreasing order.  A0 comes from
    :func:`cell_problem` unless given.
    """
    eps = sorted((float(e) for e in eps_list), reverse=True)
    if len(set(eps)) != len(eps):
        raise ValueError("repeated eps values")
    A0 = cell_problem(cell, cell_n).A0 if A0 is None else A0
    res = int(round(1.0 / setup.h))
    ref_field = constant_field(A0, setup.domain, res)
    ctr = setup.domain.center

    def run(field):
        patch = ellipse_patch(field, ctr, setup.r, setup.r_star, setup.h, A0)
        lam = patch_eigenvalues(patch, n, setup.snapshots, A0)
        trace = homogenized_trace_space(patch, A0, n)
        q = np.array([q_estimator(trace, i + 1) for i in range(n)])
        return lam, q

    lam0, q0 = run(ref_field)
    vals, qs = [], []
    for e in eps:
        lam, q = run(periodic_field(cell, e, setup.domain))
        vals.append(lam)
        qs.append(q)
    return SweepTable(eps, np.array(vals), lam0, np.array(qs), q0, A0)


def write_sweep_csv(path, table: SweepTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eps", "i", "lambda", "deviation", "q"])
        for e, i, lam, dev, q in table.rows():
            w.writerow(["%.17g" % e, i, "%.17g" % lam, "%.17g" % dev, "%.17g" % q])
