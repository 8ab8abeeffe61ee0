import math

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from msgfem import fem, gfem
from msgfem.gfem import BasisSettings, CoverError, RestrictedBasis
from msgfem.microstructure import HOLE, Rect, SymMat2, constant_field, inclusion_field
from msgfem.validation import random_two_phase

UNIT = Rect(0.0, 0.0, 1.0, 1.0)


def shear(x, y, nx, ny):
    return 2.0 * (x - 0.5) - (y - 0.5)


def manufactured(x, y, nx, ny):      # flux of x^2 - y^2 for A = I
    return 2 * x * nx - 2 * y * ny


@pytest.fixture(scope="module")
def holes_setup():
    disks = [(0.3, 0.3, 0.06), (0.7, 0.35, 0.05), (0.5, 0.72, 0.07), (0.2, 0.75, 0.04)]
    field = inclusion_field(UNIT, 32, disks, SymMat2.scalar(1.0), HOLE)
    fine = fem.mesh_on(field, UNIT, 1 / 32)
    cover, pu = gfem.build_cover_and_pu(UNIT, 4, fine)
    results = gfem.compute_patches(field, cover, fine.hx, BasisSettings(12), shear)
    u_h = gfem.fem_solve(fine, g=shear)
    return field, fine, cover, pu, results, u_h


# ------------------------------------------------------------------ cover / PU

def test_single_patch_cover():
    field = constant_field(SymMat2.scalar(1.0), UNIT, 8)
    fine = fem.mesh_on(field, UNIT, 1 / 8)
    cover, pu = gfem.build_cover_and_pu(UNIT, 1, fine)
    assert len(cover.patches) == 1
    assert np.allclose(pu.values.toarray(), 1.0)


def test_cover_invariants_m16():
    field = constant_field(SymMat2.scalar(1.0), UNIT, 64)
    fine = fem.mesh_on(field, UNIT, 1 / 64)
    cover, pu = gfem.build_cover_and_pu(UNIT, 16, fine)
    assert len(cover.patches) == 17 * 17 and cover.kappa == 4
    rng = np.random.default_rng(0)
    idx = rng.integers(0, fine.n_nodes, 10_000)
    assert np.abs(np.asarray(pu.values[idx].sum(axis=1)).ravel() - 1).max() <= 1e-12
    assert pu.values.data.min() >= 0 and pu.values.max() <= 1
    assert np.asarray((pu.values > 0).sum(axis=1)).max() <= 4
    H = 1 / 16
    for s in cover.patches:
        assert s.omega_star.contains(s.omega)
        full = Rect(s.omega.x0 - 2 * H, s.omega.y0 - 2 * H, s.omega.x1 + 2 * H, s.omega.y1 + 2 * H)
        assert s.omega_star == full.intersect(UNIT)
    assert gfem.measured_gradient_bound(pu, cover, fine) <= pu.C2 * (1 + 1e-12)


def test_cover_rejects_non_nesting_mesh():
    field = constant_field(SymMat2.scalar(1.0), UNIT, 10)
    fine = fem.mesh_on(field, UNIT, 1 / 10)
    with pytest.raises(CoverError):
        gfem.build_cover_and_pu(UNIT, 4, fine)


# ----------------------------------------------------------------- assembly

def test_constants_only_is_coarse_fem():
    m = 4
    field = random_two_phase(np.random.default_rng(2), UNIT, m, contrast=8.0)
    fine = fem.mesh_on(field, UNIT, 1 / 32)
    cover, pu = gfem.build_cover_and_pu(UNIT, m, fine)
    bases = []
    for s in cover.patches:
        nodes = gfem._grid_nodes(s.omega, UNIT, fine.hx)
        bases.append(RestrictedBasis(nodes, np.zeros((nodes.size, 0))))
    sol = gfem.solve_global(gfem.assemble_global(fine, pu, bases, g=shear))
    coarse = fem.build_mesh(UNIT, m, m, field)
    uc = fem.prolong(coarse, fine, gfem.fem_solve(coarse, g=shear))
    w = np.asarray(fem.assemble_weighted_mass(fine).sum(axis=1)).ravel()
    uc -= w @ uc / w.sum()
    assert np.abs(sol.u - uc).max() <= 1e-11 * np.abs(uc).max()


def test_zero_data_gives_zero_solution(holes_setup):
    field, fine, cover, pu, results, _ = holes_setup
    bases = [RestrictedBasis(r.nodes, r.snapshots[:, :4]) for r in results]
    sol = gfem.solve_global(gfem.assemble_global(fine, pu, bases))
    assert np.all(sol.u == 0.0)


def test_sparsity_follows_patch_overlap(holes_setup):
    field, fine, cover, pu, results, _ = holes_setup
    sysm = gfem.assemble_global(fine, pu, gfem.polynomial_bases(results, 2), g=shear)
    for a, (i, _) in enumerate(sysm.labels):
        for b, (k, _) in enumerate(sysm.labels):
            oi, ok = cover.patches[i].omega, cover.patches[k].omega
            overlap = min(oi.x1, ok.x1) > max(oi.x0, ok.x0) and min(oi.y1, ok.y1) > max(oi.y0, ok.y0)
            if not overlap:
                assert sysm.K[a, b] == 0.0


def test_basis_node_mismatch_rejected(holes_setup):
    field, fine, cover, pu, results, _ = holes_setup
    bases = gfem.polynomial_bases(results, 2)
    bases[3] = RestrictedBasis(bases[3].nodes[:-1], bases[3].values)
    with pytest.raises(CoverError):
        gfem.assemble_global(fine, pu, bases, g=shear)


# ------------------------------------------------------------------ solving

def _energy_sqrt(mesh):
    """Sparse B with ||B u||^2 = u^T K u, built element by element (A = I only)."""
    kxx, _, kyy, _ = fem.element_matrices(mesh.hx, mesh.hy)
    w, V = np.linalg.eigh(kxx + kyy)
    L = V * np.sqrt(np.clip(w, 0, None))
    rows, cols, data = [], [], []
    for e, nodes in enumerate(mesh.elements):
        if not mesh.active[e]:
            continue
        for r in range(4):
            rows += [4 * e + r] * 4
            cols += list(nodes)
            data += list(L[:, r])
    return sp.csr_matrix((data, (rows, cols)), shape=(4 * mesh.n_elements, mesh.n_nodes))


def test_galerkin_optimality_against_independent_projection(holes_setup):
    field, fine, cover, pu, results, u_h = holes_setup
    B = _energy_sqrt(fine)
    assert np.allclose(np.sum((B @ u_h) ** 2), u_h @ (fem.assemble_stiffness(fine) @ u_h), rtol=1e-12)
    sysm = gfem.assemble_global(fine, pu, gfem.optimal_bases(results, 4, 12), g=shear)
    sol = gfem.solve_global(sysm)
    G = (B @ sysm.P).toarray()
    c = np.linalg.lstsq(G, B @ (u_h - sysm.u_part), rcond=None)[0]
    best = np.linalg.norm(B @ (u_h - sysm.u_part) - G @ c)
    err = np.linalg.norm(B @ (u_h - sol.u))
    assert err <= best + 1e-8 * np.linalg.norm(B @ u_h)


def test_galerkin_orthogonality(holes_setup):
    field, fine, cover, pu, results, u_h = holes_setup
    sysm = gfem.assemble_global(fine, pu, gfem.polynomial_bases(results, 4), g=shear)
    sol = gfem.solve_global(sysm)
    K = sysm.K_fine
    rng = np.random.default_rng(3)
    eh = math.sqrt(u_h @ (K @ u_h))
    for _ in range(20):
        v = sysm.P @ rng.standard_normal(sysm.P.shape[1])
        ev = math.sqrt(v @ (K @ v))
        assert abs((u_h - sol.u) @ (K @ v)) <= 1e-8 * eh * ev


def test_constant_shift_is_nullspace(holes_setup):
    field, fine, cover, pu, results, _ = holes_setup
    sysm = gfem.assemble_global(fine, pu, gfem.polynomial_bases(results, 2), g=shear)
    sol = gfem.solve_global(sysm)
    c = sol.coefficients.copy()
    for a, (i, j) in enumerate(sysm.labels):
        if j == 0:
            c[a] += 0.7
    d = sysm.P @ c - sysm.P @ sol.coefficients
    assert np.allclose(d, 0.7, atol=1e-12)
    assert abs(c @ sysm.K @ c - sol.coefficients @ sysm.K @ sol.coefficients) <= 1e-9 * abs(sol.coefficients @ sysm.K @ sol.coefficients)


def test_errors_decrease_with_n_and_optimal_dominates(holes_setup):
    field, fine, cover, pu, results, u_h = holes_setup
    prev = {"polynomial": math.inf, "optimal": math.inf}
    for n in (2, 4, 6, 8):
        errs = {}
        for fam, bases in (("polynomial", gfem.polynomial_bases(results, n)),
                           ("optimal", gfem.optimal_bases(results, n, 12))):
            sol = gfem.solve_global(gfem.assemble_global(fine, pu, bases, g=shear))
            errs[fam] = gfem.global_error(fine, u_h, sol.u)[0]
            assert errs[fam] <= prev[fam] + 1e-12
            prev[fam] = errs[fam]
        assert errs["optimal"] <= errs["polynomial"] + 1e-8


def test_manufactured_solution_beats_coarse_fem():
    field = constant_field(SymMat2.scalar(1.0), UNIT, 32)
    fine = fem.mesh_on(field, UNIT, 1 / 32)
    cover, pu = gfem.build_cover_and_pu(UNIT, 4, fine)
    results = gfem.compute_patches(field, cover, fine.hx, BasisSettings(8), manufactured)
    u_h = gfem.fem_solve(fine, g=manufactured)
    const = [RestrictedBasis(r.nodes, r.snapshots[:, :0], True, r.particular) for r in results]
    coarse_err = gfem.global_error(fine, u_h, gfem.solve_global(gfem.assemble_global(fine, pu, const,
                                                                                   g=manufactured)).u)[0]
    errs = []
    for n in (2, 4, 6):
        sol = gfem.solve_global(gfem.assemble_global(fine, pu, gfem.optimal_bases(results, n, 8), g=manufactured))
        errs.append(gfem.global_error(fine, u_h, sol.u)[0])
    assert errs[0] < coarse_err and all(b <= a for a, b in zip(errs, errs[1:]))


def test_pruning_is_reported(holes_setup):
    field, fine, cover, pu, results, _ = holes_setup
    sol = gfem.solve_global(gfem.assemble_global(fine, pu, gfem.polynomial_bases(results, 2), g=shear))
    d = sol.diagnostics
    assert d["dofs"] == d["retained"] + d["pruned"] and d["pruned"] >= 1
    assert d["residual_retained"] <= 1e-9


# ---------------------------------------------------------------- reference

def test_overkill_linear_exact_and_deterministic():
    field = constant_field(SymMat2(2.0, 0.5, 1.0), UNIT, 8)
    fine = fem.mesh_on(field, UNIT, 1 / 8)
    q = lambda x, y: 1.0 + 3 * x - 2 * y
    u = gfem.overkill_reference(field, fine, q=q, bc="dirichlet")
    X, Y = fine.nodes.T
    assert np.allclose(u, q(X, Y), atol=1e-12)
    v = gfem.overkill_reference(field, fine, q=q, bc="dirichlet")
    assert u.tobytes() == v.tobytes()
    with pytest.raises(MemoryError):
        gfem.overkill_reference(field, fine, refine_factor=4, max_unknowns=100)


def test_reference_guard(holes_setup):
    field, fine, *_ = holes_setup
    u2 = gfem.overkill_reference(field, fine, g=shear, refine_factor=2)
    u4 = gfem.overkill_reference(field, fine, g=shear, refine_factor=4)
    u1 = gfem.fem_solve(fine, g=shear)
    assert gfem.global_error(fine, u4, u2)[0] < gfem.global_error(fine, u4, u1)[0]


def test_global_error_examples():
    field = constant_field(SymMat2.scalar(1.0), UNIT, 2)
    mesh = fem.mesh_on(field, UNIT, 0.5)
    X, Y = mesh.nodes.T
    u = X + X * Y
    assert gfem.global_error(mesh, u, u, neumann=False) == (0.0, 0.0)
    assert gfem.global_error(mesh, u, 0 * u, neumann=False) == pytest.approx((1.0, 1.0))
    # e = xy is bilinear, so the Q1 quadrature is exact: |e|_E^2 = 2/3, |u|_E^2 = 8/3,
    # ||e||^2 = 1/9, ||u||^2 = 7/9
    e, l2 = gfem.global_error(mesh, u, X, neumann=False)
    assert e == pytest.approx(0.5, rel=1e-14)
    assert l2 == pytest.approx(1 / math.sqrt(7), rel=1e-14)
    with pytest.raises(ValueError):
        gfem.global_error(mesh, 0 * u, u, neumann=False)


# --------------------------------------------------------------- concurrency

def test_worker_count_does_not_change_results(holes_setup):
    field, fine, cover, pu, results, _ = holes_setup
    par = gfem.compute_patches(field, cover, fine.hx, BasisSettings(12), shear, workers=3)
    for a, b in zip(results, par):
        assert a.spec == b.spec
        assert a.snapshots.tobytes() == b.snapshots.tobytes()
        assert a.S.tobytes() == b.S.tobytes()


# ------------------------------------------------------------ bound checker

def test_local_global_bound_single_patch():
    field = random_two_phase(np.random.default_rng(5), UNIT, 16, contrast=10.0)
    fine = fem.mesh_on(field, UNIT, 1 / 16)
    cover, pu = gfem.build_cover_and_pu(UNIT, 1, fine)
    u0 = gfem.fem_solve(fine, g=shear)
    s = cover.patches[0]
    nodes = gfem._grid_nodes(s.omega, UNIT, fine.hx)
    rep = gfem.verify_local_global_bound(field, fine, cover, pu, [RestrictedBasis(nodes, u0[:, None])], u0)
    assert rep.ok and rep.lhs_energy <= 1e-12


def test_local_global_bound_and_cea(holes_setup):
    field, fine, cover, pu, results, u_h = holes_setup
    bases = gfem.optimal_bases(results, 4, 12)
    rep = gfem.verify_local_global_bound(field, fine, cover, pu, bases, u_h)
    assert rep.ok
    sol = gfem.solve_global(gfem.assemble_global(fine, pu, bases, g=shear))
    err = fem.norm(fine, u_h - sol.u)
    assert err <= rep.lhs_energy * (1 + 1e-10)
