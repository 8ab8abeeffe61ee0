"""Local approximation spaces on oversampled patch pairs.

A patch pair is an inner region ``omega`` nested in an oversampled region
``omega_star`` carrying its own mesh.  Snapshot families are discrete
A-harmonic functions on ``omega_star``; the optimal basis is the Rayleigh-Ritz
solution of the restriction eigenproblem

    (phi, v)_E(omega) = lam (phi, v)_E(omega_star)

on the snapshot span, so ``sqrt(lam_{n+1})`` is the computable surrogate of the
n-width of the restriction operator.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from . import fem
from .fem import DirichletSolver, Mesh, NeumannSolver
from .microstructure import CoefficientField, Rect, SymMat2, clip_inclusions
from .spectral import RANK_THRESHOLD, DegenerateSnapshots, filter_rank, solve_pencil

INTERIOR = "interior"
BOUNDARY = "boundary"


class PatchError(ValueError):
    pass


# ------------------------------------------------------------------ patch pairs

@dataclass(eq=False)
class PatchPair:
    omega: Rect
    omega_star: Rect
    kind: str
    field: CoefficientField           # field seen by the patch (inclusions clipped)
    mesh: Mesh                        # on omega_star
    inner: np.ndarray                 # element mask of omega in mesh
    domain: Rect | None = None        # global domain for boundary patches
    rho: float | None = None
    center: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in (INTERIOR, BOUNDARY):
            raise PatchError(f"unknown patch kind {self.kind!r}")
        if self.kind == BOUNDARY and self.domain is None:
            raise PatchError("boundary patches need the global domain")
        if not self.inner.any():
            raise PatchError("inner region has no elements")
        if self.center is None:
            self.center = self.omega_star.center

    @property
    def truncated(self) -> bool:
        """omega_star is cut by the global boundary, which then carries the problem's own data."""
        return self.domain is not None and self.omega_star.touches_boundary_of(self.domain)

    @functools.cached_property
    def K(self) -> sp.csr_matrix:
        return fem.assemble_stiffness(self.mesh)

    @functools.cached_property
    def K_inner(self) -> sp.csr_matrix:
        return fem.assemble_stiffness(self.mesh, self.inner)

    @functools.cached_property
    def mass(self) -> sp.csr_matrix:
        return fem.assemble_weighted_mass(self.mesh)

    @functools.cached_property
    def edges(self) -> fem.Edges:
        """Outer boundary edges of omega_star."""
        return fem.outer_edges(self.mesh)

    @functools.cached_property
    def flux_edges(self) -> fem.Edges:
        """Part of the boundary carrying snapshot data (the part inside the domain when truncated)."""
        if self.truncated:
            return fem.outer_edges(self.mesh, exclude=self.domain)
        return self.edges

    @functools.cached_property
    def global_edges(self) -> fem.Edges:
        """Edges on the global boundary (empty unless truncated)."""
        if not self.truncated:
            return fem.Edges(*(np.zeros(0, int),) * 2, *(np.zeros((0, 2)),) * 3)
        all_e, gam = self.edges, self.flux_edges
        keys = set(zip(gam.n0.tolist(), gam.n1.tolist()))
        sel = np.array([(a, b) not in keys for a, b in zip(all_e.n0.tolist(), all_e.n1.tolist())], bool)
        return fem.Edges(all_e.n0[sel], all_e.n1[sel], all_e.normal[sel], all_e.p0[sel], all_e.p1[sel])

    @functools.cached_property
    def neumann(self) -> NeumannSolver:
        return NeumannSolver(self.mesh, self.K, self.mass)

    @functools.cached_property
    def dirichlet(self) -> DirichletSolver:
        return DirichletSolver(self.mesh, self.flux_edges.nodes, self.K)

    @property
    def n_nodes(self) -> int:
        return self.mesh.n_nodes

    def energy(self, u: np.ndarray, inner: bool = False) -> float:
        K = self.K_inner if inner else self.K
        return math.sqrt(max(float(u @ (K @ u)), 0.0))


def make_patch(field: CoefficientField, omega: Rect, omega_star: Rect, h: float,
               domain: Rect | None = None, rho: float | None = None, clip: bool = True) -> PatchPair:
    """Patch pair on mesh-aligned rectangles; ``omega_star`` is truncated to ``domain``.

    The patch is of boundary kind when ``omega`` touches the boundary of
    ``domain``; inclusions meeting the boundary of the (truncated) oversampled
    region are replaced by matrix material.
    """
    if domain is not None:
        omega_star = omega_star.intersect(domain)
        omega = omega.intersect(domain)
    if not omega_star.contains(omega):
        raise PatchError(f"omega {omega} not inside omega* {omega_star}")
    kind = BOUNDARY if domain is not None and omega.touches_boundary_of(domain) else INTERIOR
    pfield = clip_inclusions(field, omega_star) if clip else field
    mesh = fem.mesh_on(pfield, omega_star, h)
    inner = mesh.region_mask(omega)
    return PatchPair(omega, omega_star, kind, pfield, mesh, inner, domain, rho)


def concentric_patch(field: CoefficientField, center: tuple[float, float], sigma: float, rho: float,
                     h: float, domain: Rect | None = None) -> PatchPair:
    """Square omega of side sigma inside the concentric square of side (1 + rho) sigma."""
    cx, cy = center
    s, t = sigma / 2, (1 + rho) * sigma / 2
    return make_patch(field, Rect(cx - s, cy - s, cx + s, cy + s),
                      Rect(cx - t, cy - t, cx + t, cy + t), h, domain, rho)


def _a0_frame(A0: SymMat2 | None) -> tuple[np.ndarray, float, float]:
    """(eigenvector matrix Q, a1, b = a2/a1) of A0; identity frame when A0 is None."""
    if A0 is None:
        return np.eye(2), 1.0, 1.0
    w, Q = np.linalg.eigh(A0.matrix())
    return Q, float(w[0]), float(w[1] / w[0])


def ellipse_patch(field: CoefficientField, center: tuple[float, float], r: float, r_star: float,
                  h: float, A0: SymMat2 | None = None) -> PatchPair:
    """Concentric ellipses {x1^2 + x2^2 / b < r^2} in the eigenframe of ``A0`` (disks for A0 = I).

    Both ellipses are carved from a square mesh by the element-center test;
    elements outside the outer ellipse are exterior.
    """
    if not 0 < r < r_star:
        raise PatchError("need 0 < r < r*")
    Q, _, b = _a0_frame(A0)
    # half extents of the outer ellipse along x and y
    axes = np.array([r_star, r_star * math.sqrt(b)])
    ext = np.sqrt((Q ** 2) @ (axes ** 2))
    cx, cy = center
    nxh = math.ceil(ext[0] / h - 1e-9) + 1
    nyh = math.ceil(ext[1] / h - 1e-9) + 1
    rect = Rect(cx - nxh * h, cy - nyh * h, cx + nxh * h, cy + nyh * h)
    probe = fem.mesh_on(field, rect, h)
    xi = (probe.centers - np.array(center)) @ Q
    rad2 = xi[:, 0] ** 2 + xi[:, 1] ** 2 / b
    exterior = rad2 >= r_star ** 2
    mesh = fem.mesh_on(field, rect, h, exterior=exterior)
    inner = (rad2 < r ** 2) & mesh.active
    omega = Rect(cx - r * ext[0] / r_star, cy - r * ext[1] / r_star,
                 cx + r * ext[0] / r_star, cy + r * ext[1] / r_star)
    return PatchPair(omega, rect, INTERIOR, field, mesh, inner, None, r_star / r - 1, center)


# ------------------------------------------------------------ harmonic polynomials

def harmonic_polynomial(index: int, center, scale: float, A0: SymMat2 | None = None):
    """The ``index``-th A0-harmonic polynomial ordered Re z, Im z, Re z^2, Im z^2, ...

    With ``(x1, x2)`` the coordinates of ``(x - center) / scale`` in the eigenframe
    of A0 and ``b = a2 / a1``, ``z = x1 + i x2 / sqrt(b)``.  Returns callables
    ``value(x, y)`` and ``grad(x, y) -> (gx, gy)``.
    """
    k = index // 2 + 1
    imag = index % 2 == 1
    Q, _, b = _a0_frame(A0)
    cx, cy = center
    sb = math.sqrt(b)

    def _z(x, y):
        dx, dy = (np.asarray(x) - cx) / scale, (np.asarray(y) - cy) / scale
        x1 = Q[0, 0] * dx + Q[1, 0] * dy
        x2 = Q[0, 1] * dx + Q[1, 1] * dy
        return x1 + 1j * x2 / sb

    def value(x, y):
        w = _z(x, y) ** k
        return w.imag if imag else w.real

    def grad(x, y):
        dw = k * _z(x, y) ** (k - 1)
        d1, d2 = dw, 1j * dw / sb          # derivatives w.r.t. x1, x2
        if imag:
            g1, g2 = d1.imag, d2.imag
        else:
            g1, g2 = d1.real, d2.real
        gx = (Q[0, 0] * g1 + Q[0, 1] * g2) / scale
        gy = (Q[1, 0] * g1 + Q[1, 1] * g2) / scale
        return gx, gy

    return value, grad


def polynomial_flux(index: int, center, scale: float, A0: SymMat2 | None = None):
    """Flux density ``n . A0 grad v`` of the ``index``-th A0-harmonic polynomial (A0 = I by default)."""
    _, grad = harmonic_polynomial(index, center, scale, A0)
    m = np.eye(2) if A0 is None else A0.matrix()

    def flux(x, y, nx, ny):
        gx, gy = grad(x, y)
        return nx * (m[0, 0] * gx + m[0, 1] * gy) + ny * (m[1, 0] * gx + m[1, 1] * gy)

    return flux


# -------------------------------------------------------------------- snapshots

@dataclass(frozen=True)
class Snapshots:
    """Nodal A-harmonic functions on the patch mesh, one per column."""

    values: np.ndarray
    labels: tuple[tuple[str, int], ...]
    family: str

    def __len__(self):
        return self.values.shape[1]

    def take(self, count: int) -> "Snapshots":
        return Snapshots(self.values[:, :count], self.labels[:count], self.family)


def _patch_scale(patch: PatchPair) -> float:
    return 0.5 * patch.omega_star.diam


def snapshots_poly_neumann(patch: PatchPair, M: int, A0: SymMat2 | None = None) -> Snapshots:
    """A-harmonic solutions with flux data from harmonic polynomials of degree 1..ceil(M/2).

    Data is imposed on the flux part of the boundary (zero flux on the global
    boundary for boundary patches, and on hole boundaries) and mean-corrected so
    the discrete Neumann problem is consistent.  With ``A0`` the fluxes are
    ``n . A0 grad v`` of the A0-harmonic polynomials.
    """
    if M < 1:
        raise PatchError("need at least one snapshot")
    edges = patch.flux_edges
    if len(edges) == 0:
        raise PatchError("patch has no boundary carrying snapshot data")
    scale = _patch_scale(patch)
    ones = fem.boundary_load(patch.mesh, edges, lambda x, y, nx, ny: 1.0)
    cols = []
    for idx in range(M):
        b = fem.boundary_load(patch.mesh, edges, polynomial_flux(idx, patch.center, scale, A0))
        b -= (b.sum() / ones.sum()) * ones
        # a polynomial can have zero flux on a truncated boundary (e.g. x on a horizontal edge)
        if np.abs(b).sum() <= 1e-12 * ones.sum():
            cols.append(np.zeros(patch.n_nodes))
            continue
        cols.append(patch.neumann.solve(b))
    family = "poly-neumann" if A0 is None else "homogenized-neumann"
    labels = tuple((family, i) for i in range(M))
    return Snapshots(np.column_stack(cols), labels, family)


def neumann_eigenpairs(patch: PatchPair, n: int, mesh: Mesh | None = None,
                       K: sp.spmatrix | None = None) -> tuple[np.ndarray, np.ndarray]:
    """First ``n`` non-constant eigenpairs of ``K v = lam M v`` on the active nodes (pure Neumann)."""
    mesh = patch.mesh if mesh is None else mesh
    K = patch.K if K is None else K
    Mm = patch.mass if mesh is patch.mesh else fem.assemble_weighted_mass(mesh)
    act = np.flatnonzero(mesh.active_nodes)
    if n + 1 >= act.size:
        raise PatchError(f"requested {n} modes but only {act.size - 1} non-constant modes exist")
    Ka = sp.csc_matrix(K[act][:, act])
    Ma = sp.csc_matrix(Mm[act][:, act])
    shift = -1e-3 * Ka.diagonal().mean() / Ma.diagonal().mean() * min(mesh.hx, mesh.hy) ** 2
    v0 = np.cos(np.arange(act.size) * 0.37 + 0.1)
    lam, vec = eigsh(Ka, k=n + 1, M=Ma, sigma=shift, which="LM", v0=v0)
    order = np.argsort(lam)
    lam, vec = lam[order][1:], vec[:, order][:, 1:]
    full = np.zeros((mesh.n_nodes, n))
    full[act] = vec
    return lam, full


def snapshots_neumann_eigen(patch: PatchPair, n: int) -> Snapshots:
    """A-harmonic extensions of the boundary traces of the first ``n`` Neumann eigenfunctions."""
    _, vecs = neumann_eigenpairs(patch, n)
    bn = patch.flux_edges.nodes
    cols = []
    for i in range(n):
        w = patch.dirichlet.solve(vecs[bn, i])
        w[patch.mesh.active_nodes] -= patch.neumann.mean(w)
        cols.append(w)
    labels = tuple(("neumann-eigen", i) for i in range(n))
    return Snapshots(np.column_stack(cols), labels, "neumann-eigen")


# ----------------------------------------------------------------- local bases

@dataclass
class LocalBasis:
    """Basis functions on the patch mesh; only their restriction to omega is used."""

    patch: PatchPair
    values: np.ndarray                 # (n_nodes, n)
    family: str
    eigenvalues: np.ndarray | None = None
    includes_constant: bool = True
    particular: np.ndarray | None = None
    rank: int | None = None
    info: dict = dc_field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def d_n(self) -> float | None:
        """sqrt(lam_{n+1}) when available."""
        if self.eigenvalues is None or len(self.eigenvalues) <= self.n:
            return None
        return math.sqrt(max(float(self.eigenvalues[self.n]), 0.0))

    def with_constant(self) -> np.ndarray:
        """Basis columns with the constant function prepended once when requested."""
        if not self.includes_constant:
            return self.values
        return np.column_stack([self.patch.mesh.active_nodes.astype(float), self.values])


def restriction_grams(patch: PatchPair, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(S, T): energy Grams of the columns of ``X`` over omega and omega_star."""
    S = X.T @ (patch.K_inner @ X)
    T = X.T @ (patch.K @ X)
    return 0.5 * (S + S.T), 0.5 * (T + T.T)


def optimal_basis(patch: PatchPair, snapshots: Snapshots, n: int, include_constant: bool = True,
                  rel_threshold: float = RANK_THRESHOLD) -> LocalBasis:
    """Top-``n`` eigenfunctions of the restriction pencil on the snapshot span."""
    if n < 0:
        raise PatchError("n must be non-negative")
    X = snapshots.values
    S, T = restriction_grams(patch, X)
    pairs = solve_pencil(S, T, rel_threshold)
    if pairs.retained_rank < n:
        raise DegenerateSnapshots(f"snapshot rank {pairs.retained_rank} < requested n={n}")
    psi = X @ pairs.vectors[:, :n]
    info = {"snapshots": len(snapshots), "rank": pairs.retained_rank}
    if pairs.retained_rank == n:
        info["d_n"] = "unavailable (snapshot rank equals n)"
    return LocalBasis(patch, psi, "optimal", np.clip(pairs.values, 0.0, None), include_constant,
                      rank=pairs.retained_rank, info=info)


def polynomial_basis(patch: PatchPair, snapshots: Snapshots, n: int, include_constant: bool = True) -> LocalBasis:
    """The first ``n`` snapshots themselves, restricted to omega."""
    if n > len(snapshots):
        raise PatchError(f"only {len(snapshots)} snapshots for n={n}")
    return LocalBasis(patch, snapshots.values[:, :n].copy(), "polynomial", None, include_constant)


def boundary_particular(patch: PatchPair, g=None, f=None) -> np.ndarray:
    """Solution with flux ``g`` on the global boundary, source ``f``, zero on the interior boundary.

    ``g`` is a flux callable ``g(x, y, nx, ny)``.  Without an interior boundary
    the pure Neumann problem is solved and normalized to zero mean.
    """
    if not patch.truncated:
        raise PatchError("boundary particular solutions need a patch truncated by the domain")
    load = fem.source_load(patch.mesh, f, patch.mass)
    if g is not None:
        load += fem.boundary_load(patch.mesh, patch.global_edges, g)
    if len(patch.flux_edges) == 0:
        return patch.neumann.solve(load)
    return patch.dirichlet.solve(0.0, load)


def optimal_basis_boundary(patch: PatchPair, snapshots: Snapshots, n: int, g=None, f=None,
                           include_constant: bool = True,
                           rel_threshold: float = RANK_THRESHOLD) -> LocalBasis:
    """Optimal basis on a truncated patch together with its particular solution."""
    if patch.kind != BOUNDARY:
        raise PatchError("optimal_basis_boundary needs a boundary patch")
    if patch.domain is None or not isinstance(patch.domain, Rect):
        raise PatchError("boundary patches require a rectangular global domain")
    basis = optimal_basis(patch, snapshots, n, include_constant, rel_threshold)
    if g is not None or f is not None:
        basis.particular = boundary_particular(patch, g, f)
    return basis


def particular_solution_source(patch: PatchPair, f) -> tuple[np.ndarray, float]:
    """Mean-zero solution of ``-div A grad u = f`` with constant outflow on the patch boundary.

    The outflow density ``c = int f / |boundary|`` (discrete perimeter measure)
    makes the Neumann problem consistent; returns ``(u, c)``.
    """
    load = fem.source_load(patch.mesh, f, patch.mass)
    ones = fem.boundary_load(patch.mesh, patch.edges, lambda x, y, nx, ny: 1.0)
    c = float(load.sum() / ones.sum())
    return patch.neumann.solve(load - c * ones), c


# ---------------------------------------------------------- constructive spaces

def _aligned(v: float, origin: float, h: float, up: bool) -> float:
    k = (v - origin) / h
    k = math.ceil(k - 1e-9) if up else math.floor(k + 1e-9)
    return origin + k * h


def nested_rects(patch: PatchPair, N: int) -> list[Rect]:
    """omega_1 = omega* ... omega_{N+1} = omega with half-sides (sigma/2)(1 + rho (N+1-j)/N).

    Each rectangle is rounded outward to mesh lines and clipped to omega*.
    """
    if N < 1:
        raise PatchError("N must be >= 1")
    if patch.rho is None:
        raise PatchError("patch has no oversampling ratio")
    sigma = patch.omega.width
    cx, cy = patch.omega.center
    m = patch.mesh
    out = []
    for j in range(1, N + 2):
        s = 0.5 * sigma * (1 + patch.rho * (N + 1 - j) / N)
        r = Rect(_aligned(cx - s, m.rect.x0, m.hx, False), _aligned(cy - s, m.rect.y0, m.hy, False),
                 _aligned(cx + s, m.rect.x0, m.hx, True), _aligned(cy + s, m.rect.y0, m.hy, True))
        out.append(r.intersect(patch.omega_star))
    return out


def _subpatch(patch: PatchPair, rect: Rect) -> tuple[PatchPair, np.ndarray]:
    sub = make_patch(patch.field, patch.omega, rect, patch.mesh.hx, clip=False)
    return sub, fem.submesh_nodes(sub.mesh, patch.mesh)


def span_filter(patch: PatchPair, B: np.ndarray, rel_threshold: float = 1e-10) -> np.ndarray:
    """Energy-orthonormal (over omega) basis of the span of the columns of ``B``."""
    G = B.T @ (patch.K_inner @ B)
    W, _ = filter_rank(0.5 * (G + G.T), rel_threshold)
    return B @ W


def iterated_space(patch: PatchPair, n: int, N: int) -> LocalBasis:
    """Sum over consecutive nested pairs of the restricted W_n spaces, rank-filtered on omega."""
    if patch.kind != INTERIOR:
        raise PatchError("iterated spaces are built on interior patches")
    rects = nested_rects(patch, N)
    blocks = []
    for j in range(N):
        sub, idx = _subpatch(patch, rects[j])
        w = snapshots_neumann_eigen(sub, n).values
        full = np.zeros((patch.n_nodes, n))
        full[idx] = w
        blocks.append(full)
    B = span_filter(patch, np.column_stack(blocks))
    basis = LocalBasis(patch, B, "iterated", None, True, rank=B.shape[1])
    basis.info["levels"] = [tuple(r.__dict__.values()) for r in rects]
    return basis


def homogenized_trace_space(patch: PatchPair, A0: SymMat2, n: int, traces: str = "dirichlet") -> LocalBasis:
    """A^eps-harmonic extensions of the A0-harmonic polynomial traces v_1, v^_1, v_2, ...

    ``traces="neumann"`` imposes the fluxes ``n . A0 grad v_j`` instead.
    """
    if n < 1:
        raise PatchError("n must be >= 1")
    if not A0.is_spd():
        raise PatchError("A0 must be SPD")
    if traces == "neumann":
        snaps = snapshots_poly_neumann(patch, n, A0)
        return LocalBasis(patch, snaps.values, "homogenized-trace", None, True)
    if traces != "dirichlet":
        raise ValueError(f"unknown trace kind {traces!r}")
    bn = patch.flux_edges.nodes
    xy = patch.mesh.nodes[bn]
    scale = _patch_scale(patch)
    cols = []
    for idx in range(n):
        value, _ = harmonic_polynomial(idx, patch.center, scale, A0)
        w = patch.dirichlet.solve(value(xy[:, 0], xy[:, 1]))
        w[patch.mesh.active_nodes] -= patch.neumann.mean(w)
        cols.append(w)
    return LocalBasis(patch, np.column_stack(cols), "homogenized-trace", None, True)


# ------------------------------------------------------------ approximation

def best_approx(patch: PatchPair, u: np.ndarray, B: np.ndarray, rel_threshold: float = 1e-12
                ) -> tuple[np.ndarray, float]:
    """Energy-orthogonal projection over omega of ``u`` onto span(B): (coefficients, error)."""
    K = patch.K_inner
    if B.shape[1] == 0:
        return np.zeros(0), patch.energy(u, inner=True)
    G = B.T @ (K @ B)
    W, rank = filter_rank(0.5 * (G + G.T), rel_threshold)
    if rank == 0:
        return np.zeros(B.shape[1]), patch.energy(u, inner=True)
    c = W @ (W.T @ (B.T @ (K @ u)))
    e = u - B @ c
    return c, math.sqrt(max(float(e @ (K @ e)), 0.0))


def best_approx_error(patch: PatchPair, u: np.ndarray, B: np.ndarray) -> float:
    return best_approx(patch, u, B)[1]


def snapshot_sup_error(patch: PatchPair, snapshots: Snapshots, B: np.ndarray) -> float:
    """sup over the snapshot span of ||u - P_B u||_E(omega) / ||u||_E(omega*)."""
    X = snapshots.values
    S, T = restriction_grams(patch, X)
    if B.shape[1]:
        G = B.T @ (patch.K_inner @ B)
        W, _ = filter_rank(0.5 * (G + G.T), 1e-12)
        C = (W.T @ (B.T @ (patch.K_inner @ X)))       # omega-energy coordinates of projections
        S = S - C.T @ C
    pairs = solve_pencil(0.5 * (S + S.T), T)
    return math.sqrt(max(float(pairs.values[0]), 0.0))


def full_restriction_eigenvalues(patch: PatchPair, n: int) -> np.ndarray:
    """Top ``n`` restriction eigenvalues over the whole discrete A-harmonic space on omega*.

    The space is parametrized by the values on the outer boundary nodes:
    ``T`` is the Steklov-Poincare Schur complement and ``S`` the omega-energy
    of the discrete harmonic extensions.  Constants are projected out.  The
    dense problem has one unknown per boundary node, beyond the practical
    size of the Jacobi solver, so LAPACK is used here.
    """
    import scipy.linalg as sla

    mesh = patch.mesh
    bn = patch.flux_edges.nodes
    act = mesh.active_nodes.copy()
    act[bn] = False
    inn = np.flatnonzero(act)
    K = sp.csr_matrix(patch.K)
    Kib = K[inn][:, bn].toarray()
    lu = fem._factor(K[inn][:, inn])
    X = np.zeros((mesh.n_nodes, bn.size))
    X[bn, np.arange(bn.size)] = 1.0
    X[inn] = -lu.solve(Kib)
    T = X.T @ (K @ X)
    S = X.T @ (patch.K_inner @ X)
    Z = sla.null_space(np.ones((1, bn.size)))
    T = Z.T @ T @ Z
    S = Z.T @ S @ Z
    m = T.shape[0]
    if n > m:
        raise PatchError(f"only {m} non-constant harmonic functions on this mesh")
    lam = sla.eigh(0.5 * (S + S.T), 0.5 * (T + T.T), eigvals_only=True, subset_by_index=[m - n, m - 1])
    return np.clip(lam[::-1], 0.0, None)
