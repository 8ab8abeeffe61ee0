"""Invariant suites shared by the ``validate`` subcommand and the test-suite."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import fem, gfem
from .localspace import harmonic_polynomial, make_patch, restriction_grams, snapshots_poly_neumann
from .microstructure import HOLE, CoefficientField, Rect, SymMat2, constant_field, inclusion_field
from .spectral import solve_pencil


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    value: float
    tolerance: float
    ok: bool


def _check(suite, name, value, tol, ok=None) -> Check:
    value = float(value)
    return Check(suite, name, value, float(tol), bool(value <= tol if ok is None else ok))


def random_two_phase(rng: np.random.Generator, domain: Rect, resolution: int, holes: bool = False,
                     contrast: float = 100.0) -> CoefficientField:
    """Random cellwise two-phase field; optionally a few small holes on top."""
    ny = int(round(domain.height * resolution))
    nx = int(round(domain.width * resolution))
    phase = rng.random((ny, nx)) < 0.5
    a = np.where(phase, 1.0, contrast)
    cells = np.zeros((ny, nx, 3))
    cells[..., 0] = a
    cells[..., 2] = a
    mask = np.zeros((ny, nx), bool)
    if holes:
        for _ in range(3):
            i, j = rng.integers(2, ny - 3), rng.integers(2, nx - 3)
            mask[i, j] = True
    return CoefficientField(domain, (resolution, resolution), cells, mask)


# ------------------------------------------------------------------- suites

def kernel_suite(rng: np.random.Generator) -> list[Check]:
    out = []
    K = fem.element_matrices(1.0, 1.0)
    Ke = K[0] + K[2]
    hand = np.array([[4, -1, -2, -1], [-1, 4, -1, -2], [-2, -1, 4, -1], [-1, -2, -1, 4]]) / 6.0
    out.append(_check("kernel", "element stiffness vs hand constants", np.abs(Ke - hand).max(), 1e-14))
    massh = np.array([[4, 2, 1, 2], [2, 4, 2, 1], [1, 2, 4, 2], [2, 1, 2, 4]]) / 36.0
    out.append(_check("kernel", "element mass vs hand constants", np.abs(K[3] - massh).max(), 1e-14))
    for t in range(5):
        field = random_two_phase(rng, Rect(0, 0, 1, 1), 16, holes=t % 2 == 1)
        mesh = fem.build_mesh(field.domain, 32, 32, field)
        A = fem.assemble_stiffness(mesh)
        kmax = abs(A).max()
        out.append(_check("kernel", f"stiffness symmetry #{t}", abs(A - A.T).max() / kmax, 1e-12))
        out.append(_check("kernel", f"stiffness nullspace #{t}",
                          np.linalg.norm(A @ np.ones(mesh.n_nodes)) / sla.norm(A.toarray()), 1e-12))
        u = rng.standard_normal(mesh.n_nodes)
        e2 = fem.norm(mesh, u) ** 2
        out.append(_check("kernel", f"energy identity #{t}", abs(e2 - u @ (A @ u)) / e2, 1e-12))
        M = fem.assemble_weighted_mass(mesh)
        area = mesh.active.sum() * mesh.hx * mesh.hy
        out.append(_check("kernel", f"mass total #{t}", abs(M.sum() - area) / area, 1e-12))
    return out


def pu_suite(m: int = 16, h: float = 1 / 128) -> list[Check]:
    dom = Rect(0, 0, 1, 1)
    field = constant_field(SymMat2.scalar(1.0), dom, int(round(1 / h)))
    fine = fem.mesh_on(field, dom, h)
    cover, pu = gfem.build_cover_and_pu(dom, m, fine)
    V = pu.values
    out = [
        _check("pu", "partition of unity sum", np.abs(np.asarray(V.sum(axis=1)).ravel() - 1).max(), 1e-12),
        _check("pu", "lower bound phi >= 0", max(0.0, -V.data.min()), 0.0),
        _check("pu", "upper bound phi <= 1", max(V.max() - 1, 0.0), 1e-15),
    ]
    worst = 0.0
    for spec in cover.patches:
        idx, _ = pu.column(spec.index)
        xy = fine.nodes[idx]
        o = spec.omega
        d = np.maximum.reduce([o.x0 - xy[:, 0], xy[:, 0] - o.x1, o.y0 - xy[:, 1], xy[:, 1] - o.y1])
        worst = max(worst, d.max())
    out.append(_check("pu", "support inside omega_i", max(worst, 0.0), 1e-12))
    count = np.asarray((V > 0).sum(axis=1)).ravel().max()
    out.append(_check("pu", "overlap count <= kappa", count, cover.kappa))
    covered = all(any(s.omega.contains(Rect(x, y, x + fine.hx, y + fine.hy))
                      for s in cover.patches) for x, y in fine.nodes[:: 997] if x < 1 and y < 1)
    out.append(Check("pu", "omega_i cover the domain", float(covered), 1.0, covered))
    c2 = gfem.measured_gradient_bound(pu, cover, fine)
    out.append(_check("pu", "measured C2 <= construction bound", c2, pu.C2 * (1 + 1e-12)))
    return out


def caccioppoli_suite(rng: np.random.Generator, samples: int = 100) -> list[Check]:
    fails = 0
    worst = 0.0
    for _ in range(samples):
        field = random_two_phase(rng, Rect(0, 0, 1, 1), 8, contrast=float(rng.uniform(2, 1000)))
        mesh = fem.build_mesh(field.domain, 24, 24, field)
        K = fem.assemble_stiffness(mesh)
        bn = fem.outer_edges(mesh).nodes
        xy = mesh.nodes[bn]
        trace = np.zeros(bn.size)
        for idx in range(6):
            v, _ = harmonic_polynomial(idx, (0.5, 0.5), 0.5)
            trace += rng.standard_normal() * v(xy[:, 0], xy[:, 1])
        trace += rng.standard_normal()
        u = fem.DirichletSolver(mesh, bn, K).solve(trace)
        lo = rng.integers(2, 8, size=2) / 24
        hi = 1 - rng.integers(2, 8, size=2) / 24
        res = fem.caccioppoli_check(mesh, u, Rect(lo[0], lo[1], hi[0], hi[1]), K)
        fails += not res.ok
        worst = max(worst, res.lhs / res.rhs if res.rhs > 0 else 0.0)
    return [Check("caccioppoli", f"{samples} random A-harmonic samples (worst lhs/rhs)", worst, 1.0, fails == 0)]


def pencil_suite(rng: np.random.Generator, count: int = 8) -> list[Check]:
    lo, hi, order = 0.0, 0.0, True
    for t in range(count):
        field = random_two_phase(rng, Rect(0, 0, 1, 1), 16, holes=True, contrast=float(rng.uniform(2, 100)))
        patch = make_patch(field, Rect(0.375, 0.375, 0.625, 0.625), Rect(0.125, 0.125, 0.875, 0.875), 1 / 32)
        snaps = snapshots_poly_neumann(patch, 12)
        S, T = restriction_grams(patch, snaps.values)
        lam = solve_pencil(S, T).values
        lo = min(lo, lam.min())
        hi = max(hi, lam.max())
        order &= bool(np.all(np.diff(lam) <= 0))
    return [
        _check("pencil", "restriction eigenvalues >= -1e-9", -lo, 1e-9),
        _check("pencil", "restriction eigenvalues <= 1+1e-9", hi - 1, 1e-9),
        Check("pencil", "eigenvalues sorted descending", float(order), 1.0, order),
    ]


def dense_pencil_suite(rng: np.random.Generator, count: int = 100) -> list[Check]:
    worst = 0.0
    for _ in range(count):
        n = int(rng.integers(1, 7))
        B = rng.standard_normal((n, n))
        T = B @ B.T + n * np.eye(n)
        C = rng.standard_normal((n, n))
        S = C @ C.T
        ref = np.sort(sla.eigh(S, T, eigvals_only=True))[::-1]
        got = solve_pencil(S, T, rel_threshold=0.0).values
        worst = max(worst, np.abs(got - ref).max() / max(np.abs(ref).max(), 1e-300))
    return [_check("pencil", f"{count} random pencils vs LAPACK", worst, 1e-8)]


def run_all(seed: int = 0, caccioppoli_samples: int = 100) -> list[Check]:
    rng = np.random.default_rng(seed)
    return (kernel_suite(rng) + pu_suite() + caccioppoli_suite(rng, caccioppoli_samples)
            + pencil_suite(rng) + dense_pencil_suite(rng))
