"""Partition-of-unity assembly of local spaces into a global Galerkin method.

The cover puts one patch on every node of an ``m x m`` coarse grid: ``omega_i``
is the support of the coarse bilinear hat function (2x2 coarse cells) and
``omega_i*`` adds ``layers`` coarse cells on every side, both truncated to the
domain.  Global trial functions ``phi_i * xi`` are interpolated at the nodes
of one fine mesh, so the GFEM space is a subspace of the fine FEM space.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import fem
from .fem import Mesh
from .localspace import (BOUNDARY, INTERIOR, make_patch, particular_solution_source,
                         boundary_particular, polynomial_flux, restriction_grams)
from .microstructure import CoefficientField, Rect
from .spectral import RANK_THRESHOLD, solve_pencil

PRUNE_THRESHOLD = 1e-10
DEFAULT_MAX_UNKNOWNS = 2_000_000


class CoverError(ValueError):
    pass


# --------------------------------------------------------------- cover and PU

@dataclass(frozen=True)
class PatchSpec:
    index: int
    node: tuple[int, int]
    omega: Rect
    omega_star: Rect
    kind: str


@dataclass(frozen=True)
class Cover:
    domain: Rect
    m: int
    layers: int
    patches: tuple[PatchSpec, ...]
    kappa: int


@dataclass(frozen=True, eq=False)
class PartitionOfUnity:
    """Hat functions sampled at the fine-mesh nodes, one sparse column per patch."""

    values: sp.csc_matrix
    C1: float
    C2: float

    def column(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        col = self.values[:, [i]]
        return col.indices, col.data


def build_cover_and_pu(domain: Rect, m: int, fine: Mesh, layers: int = 2) -> tuple[Cover, PartitionOfUnity]:
    """Cover of ``domain`` by hat supports on an ``m x m`` coarse grid and its PU on ``fine``."""
    if m < 1:
        raise CoverError("m must be >= 1")
    if fine.rect != domain:
        raise CoverError("fine mesh must cover the domain")
    Hx, Hy = domain.width / m, domain.height / m
    rx, ry = Hx / fine.hx, Hy / fine.hy
    if abs(rx - round(rx)) > 1e-9 or abs(ry - round(ry)) > 1e-9:
        raise CoverError("fine mesh does not nest the coarse grid")
    X, Y = fine.nodes[:, 0], fine.nodes[:, 1]
    if m == 1:
        spec = PatchSpec(0, (0, 0), domain, domain, BOUNDARY)
        vals = sp.csc_matrix(np.ones((fine.n_nodes, 1)))
        cover = Cover(domain, 1, layers, (spec,), 1)
        return cover, PartitionOfUnity(vals, 1.0, 0.0)
    specs, rows, cols, data = [], [], [], []
    c2 = 0.0
    for j in range(m + 1):
        for i in range(m + 1):
            xc, yc = domain.x0 + i * Hx, domain.y0 + j * Hy
            omega = Rect(xc - Hx, yc - Hy, xc + Hx, yc + Hy).intersect(domain)
            ostar = Rect(xc - (1 + layers) * Hx, yc - (1 + layers) * Hy,
                         xc + (1 + layers) * Hx, yc + (1 + layers) * Hy).intersect(domain)
            kind = BOUNDARY if omega.touches_boundary_of(domain) else INTERIOR
            idx = len(specs)
            specs.append(PatchSpec(idx, (i, j), omega, ostar, kind))
            sx = np.clip(1 - np.abs(X - xc) / Hx, 0, None)
            sy = np.clip(1 - np.abs(Y - yc) / Hy, 0, None)
            phi = sx * sy
            nz = np.flatnonzero(phi > 0)
            rows.append(nz)
            cols.append(np.full(nz.size, idx))
            data.append(phi[nz])
            # |grad phi| of a bilinear hat peaks at its centre node
            c2 = max(c2, math.hypot(1 / Hx, 1 / Hy) * omega.diam)
    vals = sp.csc_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(fine.n_nodes, len(specs)))
    pu = PartitionOfUnity(vals, float(vals.max()), c2)
    return Cover(domain, m, layers, tuple(specs), 4), pu


def measured_gradient_bound(pu: PartitionOfUnity, cover: Cover, fine: Mesh) -> float:
    """max_i max_x |grad phi_i| * diam(omega_i) evaluated from the fine nodal values.

    The gradient of a bilinear function on a rectangle attains its maximum at a
    corner, so corner gradients of every fine element are exact.
    """
    best = 0.0
    el = fine.elements
    for spec in cover.patches:
        idx, val = pu.column(spec.index)
        full = np.zeros(fine.n_nodes)
        full[idx] = val
        ue = full[el]
        live = np.abs(ue).sum(axis=1) > 0
        ue = ue[live]
        gx_b = (ue[:, 1] - ue[:, 0]) / fine.hx
        gx_t = (ue[:, 2] - ue[:, 3]) / fine.hx
        gy_l = (ue[:, 3] - ue[:, 0]) / fine.hy
        gy_r = (ue[:, 2] - ue[:, 1]) / fine.hy
        g = np.max([np.hypot(gx_b, gy_l), np.hypot(gx_b, gy_r), np.hypot(gx_t, gy_l), np.hypot(gx_t, gy_r)])
        best = max(best, float(g) * spec.omega.diam)
    return best


# ---------------------------------------------------------------- patch jobs

@dataclass(frozen=True)
class BasisSettings:
    """What each patch job computes.

    ``snapshots`` poly-Neumann snapshots are generated on every patch; bases of
    any dimension up to that count are formed afterwards from the restricted
    snapshots and the small Gram matrices.
    """

    snapshots: int
    bc: str = "neumann"                  # neumann | dirichlet
    rank_threshold: float = RANK_THRESHOLD


@dataclass
class PatchResult:
    spec: PatchSpec
    nodes: np.ndarray           # fine-mesh indices of the omega_i nodes (grid order)
    snapshots: np.ndarray       # (len(nodes), M) restricted snapshots
    S: np.ndarray
    T: np.ndarray
    particular: np.ndarray | None
    constant: bool
    seconds: float


_WORKER_STATE: dict = {}


def _init_worker(field, fine_rect, h, settings, g, f, q, single_thread=False):
    if single_thread:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=1)
    _WORKER_STATE.update(field=field, fine_rect=fine_rect, h=h, settings=settings, g=g, f=f, q=q)


def _grid_nodes(rect: Rect, parent: Rect, h: float) -> np.ndarray:
    nx = int(round(rect.width / h))
    ny = int(round(rect.height / h))
    pnx = int(round(parent.width / h))
    i0 = int(round((rect.x0 - parent.x0) / h))
    j0 = int(round((rect.y0 - parent.y0) / h))
    i, j = np.meshgrid(np.arange(nx + 1) + i0, np.arange(ny + 1) + j0)
    return (j * (pnx + 1) + i).ravel()


def _dirichlet_snapshots(patch, M: int) -> np.ndarray:
    """Snapshots vanishing on the global boundary with polynomial flux on the interior boundary."""
    bn = patch.global_edges.nodes
    solver = fem.DirichletSolver(patch.mesh, bn, patch.K)
    scale = 0.5 * patch.omega_star.diam
    cols = []
    for idx in range(M):
        b = fem.boundary_load(patch.mesh, patch.flux_edges, polynomial_flux(idx, patch.center, scale))
        cols.append(solver.solve(0.0, b))
    return np.column_stack(cols), solver


def run_patch(spec: PatchSpec) -> PatchResult:
    st = _WORKER_STATE
    t0 = time.perf_counter()
    field, h, settings = st["field"], st["h"], st["settings"]
    domain = st["fine_rect"]
    patch = make_patch(field, spec.omega, spec.omega_star, h, domain)
    if patch.kind != spec.kind:
        raise CoverError(f"patch {spec.index}: kind mismatch")
    local = _grid_nodes(spec.omega, spec.omega_star, h)
    nodes = _grid_nodes(spec.omega, domain, h)
    M = settings.snapshots
    particular = None
    constant = True
    single = len(patch.flux_edges) == 0
    if settings.bc == "dirichlet" and patch.truncated:
        constant = False
        if single:
            X = np.zeros((patch.n_nodes, 0))
            solver = fem.DirichletSolver(patch.mesh, patch.global_edges.nodes, patch.K)
        else:
            X, solver = _dirichlet_snapshots(patch, M)
        load = fem.source_load(patch.mesh, st["f"], patch.mass)
        xy = patch.mesh.nodes[solver.boundary]
        qv = st["q"](xy[:, 0], xy[:, 1]) if st["q"] is not None else 0.0
        particular = solver.solve(qv, load)
    else:
        if single:
            X = np.zeros((patch.n_nodes, 0))
        else:
            from .localspace import snapshots_poly_neumann
            X = snapshots_poly_neumann(patch, M).values
        if patch.truncated and (st["g"] is not None or st["f"] is not None):
            particular = boundary_particular(patch, st["g"], st["f"])
        elif st["f"] is not None:
            particular, _ = particular_solution_source(patch, st["f"])
    S, T = restriction_grams(patch, X)
    part = None if particular is None else particular[local]
    return PatchResult(spec, nodes, X[local], S, T, part, constant, time.perf_counter() - t0)


def compute_patches(field: CoefficientField, cover: Cover, h: float, settings: BasisSettings,
                    g=None, f=None, q=None, workers: int = 1) -> list[PatchResult]:
    """Run every patch job; results are ordered by patch index whatever the worker count."""
    args = (field, cover.domain, h, settings, g, f, q)
    if workers <= 1:
        _init_worker(*args)
        return [run_patch(s) for s in cover.patches]
    import multiprocessing as mp

    ctx = mp.get_context("fork")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx, initializer=_init_worker,
                             initargs=args + (True,)) as pool:
        return list(pool.map(run_patch, cover.patches, chunksize=max(1, len(cover.patches) // (4 * workers))))


# --------------------------------------------------------------- local bases

@dataclass
class RestrictedBasis:
    """Local basis restricted to omega_i, expressed on fine-mesh nodes."""

    nodes: np.ndarray
    values: np.ndarray
    constant: bool = True
    particular: np.ndarray | None = None
    eigenvalues: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def columns(self) -> np.ndarray:
        if not self.constant:
            return self.values
        return np.column_stack([np.ones(len(self.nodes)), self.values])


def default_snapshot_count(n: int) -> int:
    return max(3 * n, n + 10)


def polynomial_bases(results: list[PatchResult], n: int) -> list[RestrictedBasis]:
    """First ``n`` polynomial snapshots on every patch (degrees 1..n/2, Re and Im)."""
    out = []
    for r in results:
        k = min(n, r.snapshots.shape[1])
        out.append(RestrictedBasis(r.nodes, r.snapshots[:, :k].copy(), r.constant, r.particular))
    return out


def optimal_bases(results: list[PatchResult], n: int, M: int | None = None,
                  rel_threshold: float = RANK_THRESHOLD) -> list[RestrictedBasis]:
    """Top-``n`` restriction eigenfunctions from the first ``M`` snapshots of every patch."""
    M = default_snapshot_count(n) if M is None else M
    out = []
    for r in results:
        m = min(M, r.snapshots.shape[1])
        if m == 0:
            out.append(RestrictedBasis(r.nodes, r.snapshots[:, :0], r.constant, r.particular))
            continue
        if m < M:
            raise CoverError(f"patch {r.spec.index} has {m} snapshots, {M} requested")
        pairs = solve_pencil(r.S[:m, :m], r.T[:m, :m], rel_threshold)
        k = min(n, pairs.retained_rank)
        vals = r.snapshots[:, :m] @ pairs.vectors[:, :k]
        out.append(RestrictedBasis(r.nodes, vals, r.constant, r.particular, pairs.values))
    return out


# ------------------------------------------------------------- global system

@dataclass
class GlobalSystem:
    K: np.ndarray                 # dense Galerkin matrix
    F: np.ndarray
    P: sp.csc_matrix              # fine nodal values of every trial function
    u_part: np.ndarray            # fixed particular part on the fine mesh
    labels: list[tuple[int, int]]
    fine: Mesh
    K_fine: sp.csr_matrix
    load_fine: np.ndarray
    bc: str


def fine_load(fine: Mesh, f=None, g=None) -> np.ndarray:
    load = fem.source_load(fine, f)
    if g is not None:
        load += fem.boundary_load(fine, fem.outer_edges(fine), g)
    return load


def assemble_global(fine: Mesh, pu: PartitionOfUnity, bases: list[RestrictedBasis], f=None, g=None,
                    bc: str = "neumann", K_fine: sp.csr_matrix | None = None) -> GlobalSystem:
    """Galerkin matrix and load for the trial functions ``phi_i * xi`` (particular parts to the RHS)."""
    if len(bases) != pu.values.shape[1]:
        raise CoverError("one basis per patch is required")
    rows, cols, data, labels = [], [], [], []
    u_part = np.zeros(fine.n_nodes)
    col = 0
    for i, b in enumerate(bases):
        idx, phi = pu.column(i)
        weight = np.zeros(fine.n_nodes)
        weight[idx] = phi
        w = weight[b.nodes]
        if b.values.shape[0] != len(b.nodes):
            raise CoverError(f"patch {i}: basis does not match its node list")
        C = b.columns()
        for j in range(C.shape[1]):
            v = w * C[:, j]
            nz = np.flatnonzero(v)
            rows.append(b.nodes[nz])
            cols.append(np.full(nz.size, col))
            data.append(v[nz])
            labels.append((i, j))
            col += 1
        if b.particular is not None:
            u_part[b.nodes] += w * b.particular
    P = sp.csc_matrix((np.concatenate(data) if data else np.zeros(0),
                       (np.concatenate(rows) if rows else np.zeros(0, int),
                        np.concatenate(cols) if cols else np.zeros(0, int))),
                      shape=(fine.n_nodes, col))
    K_fine = fem.assemble_stiffness(fine) if K_fine is None else K_fine
    load = fine_load(fine, f, g if bc == "neumann" else None)
    KP = K_fine @ P
    Kg = (P.T @ KP).toarray()
    Kg = 0.5 * (Kg + Kg.T)
    F = P.T @ (load - K_fine @ u_part)
    return GlobalSystem(Kg, np.asarray(F).ravel(), P, u_part, labels, fine, K_fine, load, bc)


@dataclass
class GlobalSolution:
    coefficients: np.ndarray
    u: np.ndarray
    labels: list[tuple[int, int]]
    diagnostics: dict = dc_field(default_factory=dict)


def solve_global(system: GlobalSystem, prune_threshold: float = PRUNE_THRESHOLD) -> GlobalSolution:
    """Pivoted Cholesky on the diagonally scaled Galerkin matrix.

    Trial functions whose Schur-complement pivot falls below ``prune_threshold``
    (relative, after scaling to unit diagonal) are pruned: they are numerically
    dependent on the retained ones, which include the constant nullspace of the
    Neumann problem.
    """
    K, F = system.K, system.F
    n = len(F)
    d = np.diag(K).copy()
    live = np.flatnonzero(d > 1e-14 * max(d.max(), 1e-300)) if n else np.zeros(0, int)
    s = 1.0 / np.sqrt(d[live])
    A = K[np.ix_(live, live)] * np.outer(s, s)
    c = np.zeros(n)
    rank = 0
    if live.size:
        U, piv, rank, info = sla.lapack.dpstrf(A, tol=prune_threshold, lower=0)
        if info < 0:
            raise fem.SolverError(f"dpstrf failed with info={info}")
        keep = piv[:rank] - 1
        Ur = np.triu(U[:rank, :rank])
        b = (F[live] * s)[keep]
        y = sla.solve_triangular(Ur, sla.solve_triangular(Ur, b, trans="T"), trans="N")
        # one step of refinement on the retained block
        r = b - A[np.ix_(keep, keep)] @ y
        y += sla.solve_triangular(Ur, sla.solve_triangular(Ur, r, trans="T"), trans="N")
        z = np.zeros(live.size)
        z[keep] = y
        c[live] = z * s
    u = system.P @ c + system.u_part
    fine = system.fine
    weights = np.asarray(fem.assemble_weighted_mass(fine).sum(axis=1)).ravel()
    if system.bc == "neumann":
        act = fine.active_nodes
        u[act] -= weights @ u / weights.sum()
    res = K @ c - F
    kept = np.zeros(n, bool)
    if live.size:
        kept[live[piv[:rank] - 1]] = True
    fnorm = max(np.linalg.norm(F), 1e-300)
    diag = {
        "dofs": n,
        "retained": int(rank),
        "pruned": int(n - rank),
        "residual_retained": float(np.linalg.norm(res[kept]) / fnorm),
        "residual_all": float(np.linalg.norm(res) / fnorm),
        "energy": float(math.sqrt(max(u @ (system.K_fine @ u), 0.0))),
    }
    return GlobalSolution(c, u, system.labels, diag)


# ---------------------------------------------------------- reference & error

def fem_solve(mesh: Mesh, f=None, g=None, q=None, bc: str = "neumann") -> np.ndarray:
    """Direct FEM solution on ``mesh`` (Neumann data ``g`` or Dirichlet trace ``q``)."""
    K = fem.assemble_stiffness(mesh)
    if bc == "neumann":
        return fem.NeumannSolver(mesh, K).solve(fine_load(mesh, f, g))
    bn = fem.outer_edges(mesh).nodes
    xy = mesh.nodes[bn]
    vals = q(xy[:, 0], xy[:, 1]) if q is not None else 0.0
    return fem.DirichletSolver(mesh, bn, K).solve(vals, fine_load(mesh, f))


def overkill_reference(field: CoefficientField, fine: Mesh, f=None, g=None, q=None,
                       refine_factor: int = 2, bc: str = "neumann",
                       max_unknowns: int = DEFAULT_MAX_UNKNOWNS) -> np.ndarray:
    """Solve on the ``refine_factor``-times refined mesh and inject onto ``fine``."""
    if refine_factor < 2:
        raise ValueError("refine_factor must be >= 2")
    nx, ny = fine.nx * refine_factor, fine.ny * refine_factor
    if (nx + 1) * (ny + 1) > max_unknowns:
        raise MemoryError(f"overkill mesh with {(nx + 1) * (ny + 1)} nodes exceeds cap {max_unknowns}")
    ref = fem.build_mesh(fine.rect, nx, ny, field)
    u = fem.inject(ref, fine, fem_solve(ref, f, g, q, bc))
    if bc == "neumann":
        w = np.asarray(fem.assemble_weighted_mass(fine).sum(axis=1)).ravel()
        u[fine.active_nodes] -= w @ u / w.sum()
    return u


def global_error(fine: Mesh, u_ref: np.ndarray, u: np.ndarray, neumann: bool = True) -> tuple[float, float]:
    """Relative (energy, L2) error; for Neumann problems means are removed first."""
    e = u_ref - u
    ref = u_ref
    if neumann:
        w = np.asarray(fem.assemble_weighted_mass(fine).sum(axis=1)).ravel()
        e = e - w @ e / w.sum()
        ref = ref - w @ ref / w.sum()
    eref = fem.norm(fine, ref, "energy")
    lref = fem.norm(fine, ref, "l2")
    if eref == 0.0 or lref == 0.0:
        raise ValueError("reference solution has zero norm")
    return fem.norm(fine, e, "energy") / eref, fem.norm(fine, e, "l2") / lref


# ------------------------------------------------------ local-to-global bound

@dataclass
class BoundReport:
    lhs_energy: float
    rhs_energy: float
    lhs_l2: float
    rhs_l2: float
    C1: float
    C2: float
    eps1: np.ndarray
    eps2: np.ndarray

    @property
    def ok(self) -> bool:
        return (self.lhs_energy <= self.rhs_energy * (1 + 1e-10) + 1e-14
                and self.lhs_l2 <= self.rhs_l2 * (1 + 1e-10) + 1e-14)

    @property
    def slack_energy(self) -> float:
        return self.rhs_energy / self.lhs_energy if self.lhs_energy > 0 else math.inf


def local_best_approximations(field: CoefficientField, fine: Mesh, cover: Cover,
                              bases: list[RestrictedBasis], u0: np.ndarray):
    """Per patch: zeta_i (energy-best on omega_i, constant fixed by the beta*-weighted L2 fit)."""
    out = []
    for spec, b in zip(cover.patches, bases):
        mesh = fem.mesh_on(field, spec.omega, fine.hx)
        K = fem.assemble_stiffness(mesh)
        u = u0[b.nodes].copy()
        target = u - (b.particular if b.particular is not None else 0.0)
        V = b.values
        if V.shape[1]:
            G = V.T @ (K @ V)
            c = np.linalg.lstsq(0.5 * (G + G.T), V.T @ (K @ target), rcond=1e-13)[0]
            z = V @ c
        else:
            z = np.zeros_like(u)
        if b.particular is not None:
            z = z + b.particular
        if b.constant:
            wm = np.asarray(fem.assemble_weighted_mass(mesh, mesh.beta_star).sum(axis=1)).ravel()
            z = z + wm @ (u - z) / wm.sum()
        out.append((mesh, z))
    return out


def verify_local_global_bound(field: CoefficientField, fine: Mesh, cover: Cover, pu: PartitionOfUnity,
                              bases: list[RestrictedBasis], u0: np.ndarray,
                              C2: float | None = None) -> BoundReport:
    """Evaluate both sides of the PU error bounds with measured C1 and C2."""
    locals_ = local_best_approximations(field, fine, cover, bases, u0)
    eps1 = np.zeros(len(locals_))
    eps2 = np.zeros(len(locals_))
    zeta = np.zeros(fine.n_nodes)
    for i, ((mesh, z), b) in enumerate(zip(locals_, bases)):
        e = u0[b.nodes] - z
        eps1[i] = fem.norm(mesh, e, "l2star")
        eps2[i] = fem.norm(mesh, e, "energy")
        idx, phi = pu.column(i)
        weight = np.zeros(fine.n_nodes)
        weight[idx] = phi
        zeta[b.nodes] += weight[b.nodes] * z
    C1 = pu.C1
    C2 = measured_gradient_bound(pu, cover, fine) if C2 is None else C2
    diam = np.array([s.omega.diam for s in cover.patches])
    err = u0 - zeta
    lhs_e = fem.norm(fine, err, "energy")
    lhs_l = fem.norm(fine, err, "l2star")
    rhs_e = math.sqrt(C2 ** 2 * np.sum(eps1 ** 2 / diam ** 2) + C1 ** 2 * np.sum(eps2 ** 2))
    rhs_l = C1 * math.sqrt(np.sum(eps1 ** 2))
    return BoundReport(lhs_e, rhs_e, lhs_l, rhs_l, C1, C2, eps1, eps2)
