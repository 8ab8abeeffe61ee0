"""Structured bilinear quadrilateral finite elements.

Node ``(i, j)`` of an ``nx x ny`` mesh has index ``j * (nx + 1) + i``; element
``(i, j)`` has index ``j * nx + i`` and local nodes ordered counter-clockwise
from the lower-left corner.  Each element carries the constant coefficient of
the cell it lies in, so 2x2 Gauss integration is exact for every form here.

Inactive elements are either *holes* (natural boundary, zero rigidity) or
*exterior* (outside a carved computational domain such as a disk mask).  Only
edges facing the mesh rectangle or an exterior element count as the outer
boundary where data is imposed.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .microstructure import CoefficientField, Rect, sym2_eigvals

RESIDUAL_TOL = 1e-10
CONSISTENCY_TOL = 1e-10
HARMONIC_TOL = 1e-8


class SolverError(RuntimeError):
    """Inconsistent data, singular factorization or excessive residual."""


class MeshError(ValueError):
    pass


# ---------------------------------------------------------------- element data

_GAUSS = np.array([-1.0, 1.0]) / math.sqrt(3.0)
_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])


@functools.lru_cache(maxsize=64)
def element_matrices(hx: float, hy: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Reference integrals (Kxx, Kxy, Kyy, M) on an ``hx x hy`` rectangle.

    ``Kxy[a, b] = int dN_a/dx dN_b/dy``; the element stiffness for a constant
    symmetric A is ``a11 Kxx + a12 (Kxy + Kxy^T) + a22 Kyy``.
    """
    kxx = np.zeros((4, 4))
    kxy = np.zeros((4, 4))
    kyy = np.zeros((4, 4))
    mass = np.zeros((4, 4))
    jac = hx * hy / 4.0
    for xi in _GAUSS:
        for eta in _GAUSS:
            n = 0.25 * (1 + _XI * xi) * (1 + _ETA * eta)
            dx = 0.25 * _XI * (1 + _ETA * eta) * (2.0 / hx)
            dy = 0.25 * _ETA * (1 + _XI * xi) * (2.0 / hy)
            kxx += np.outer(dx, dx) * jac
            kxy += np.outer(dx, dy) * jac
            kyy += np.outer(dy, dy) * jac
            mass += np.outer(n, n) * jac
    for m in (kxx, kxy, kyy, mass):
        m.setflags(write=False)
    return kxx, kxy, kyy, mass


# ------------------------------------------------------------------------ mesh

@dataclass(frozen=True, eq=False)
class Mesh:
    rect: Rect
    nx: int
    ny: int
    coeff: np.ndarray      # (ne, 3): a11, a12, a22 per element
    active: np.ndarray     # (ne,) bool
    exterior: np.ndarray   # (ne,) bool, subset of ~active

    @property
    def hx(self) -> float:
        return self.rect.width / self.nx

    @property
    def hy(self) -> float:
        return self.rect.height / self.ny

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @functools.cached_property
    def nodes(self) -> np.ndarray:
        x = self.rect.x0 + self.hx * np.arange(self.nx + 1)
        y = self.rect.y0 + self.hy * np.arange(self.ny + 1)
        X, Y = np.meshgrid(x, y)
        return np.column_stack([X.ravel(), Y.ravel()])

    @functools.cached_property
    def elements(self) -> np.ndarray:
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        n0 = (j * (self.nx + 1) + i).ravel()
        return np.column_stack([n0, n0 + 1, n0 + self.nx + 2, n0 + self.nx + 1])

    @functools.cached_property
    def centers(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    @functools.cached_property
    def active_nodes(self) -> np.ndarray:
        """Boolean mask of nodes touched by at least one active element."""
        mask = np.zeros(self.n_nodes, bool)
        mask[self.elements[self.active].ravel()] = True
        return mask

    @functools.cached_property
    def beta_star(self) -> np.ndarray:
        """Per-element largest eigenvalue of A (zero on inactive elements)."""
        _, hi = sym2_eigvals(self.coeff[:, 0], self.coeff[:, 1], self.coeff[:, 2])
        return np.where(self.active, hi, 0.0)

    @property
    def holes(self) -> np.ndarray:
        return ~self.active & ~self.exterior

    def region_mask(self, region: "Rect | np.ndarray | None") -> np.ndarray:
        """Element mask for a mesh-aligned sub-rectangle or a given element mask."""
        if region is None:
            return np.ones(self.n_elements, bool)
        if isinstance(region, np.ndarray):
            if region.shape != (self.n_elements,):
                raise MeshError("element mask has wrong length")
            return region.astype(bool)
        if not self.rect.contains(region):
            raise MeshError(f"region {region} outside mesh {self.rect}")
        for v, o, h in ((region.x0, self.rect.x0, self.hx), (region.x1, self.rect.x0, self.hx),
                        (region.y0, self.rect.y0, self.hy), (region.y1, self.rect.y0, self.hy)):
            k = (v - o) / h
            if abs(k - round(k)) > 1e-6:
                raise MeshError(f"region {region} not aligned with mesh lines")
        c = self.centers
        return ((c[:, 0] > region.x0) & (c[:, 0] < region.x1)
                & (c[:, 1] > region.y0) & (c[:, 1] < region.y1))

    def node_mask(self, region) -> np.ndarray:
        """Nodes belonging to at least one element of ``region``."""
        mask = np.zeros(self.n_nodes, bool)
        mask[self.elements[self.region_mask(region)].ravel()] = True
        return mask

    def interpolate(self, func) -> np.ndarray:
        return np.asarray(func(self.nodes[:, 0], self.nodes[:, 1]), dtype=float) * np.ones(self.n_nodes)


def build_mesh(rect: Rect, nx: int, ny: int, field: CoefficientField,
               exterior: np.ndarray | None = None) -> Mesh:
    """Mesh ``rect`` with ``nx x ny`` elements, each inside exactly one field cell."""
    if nx < 1 or ny < 1:
        raise MeshError("need at least one element per direction")
    if not field.domain.contains(rect):
        raise MeshError(f"mesh rectangle {rect} leaves the field domain {field.domain}")
    hx, hy = rect.width / nx, rect.height / ny
    cx, cy = field.cell_size
    for h, c, o, name in ((hx, cx, rect.x0 - field.domain.x0, "x"), (hy, cy, rect.y0 - field.domain.y0, "y")):
        ratio = c / h
        if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
            raise MeshError(f"{name}-element size {h} does not subdivide cell size {c}")
        off = o / h
        if abs(off - round(off)) > 1e-6:
            raise MeshError(f"{name}-origin of mesh is off the coefficient grid")
    mesh = Mesh(rect, nx, ny, np.zeros((nx * ny, 3)), np.ones(nx * ny, bool), np.zeros(nx * ny, bool))
    c = mesh.centers
    row, col = field.cell_index(c[:, 0], c[:, 1])
    coeff = field.cells[row, col]
    holes = field.holes[row, col]
    ext = np.zeros(nx * ny, bool) if exterior is None else np.asarray(exterior, bool).copy()
    active = ~holes & ~ext
    if not active.any():
        raise MeshError("mesh has no active elements")
    for arr in (coeff, active, ext):
        arr.setflags(write=False)
    return Mesh(rect, nx, ny, coeff, active, ext)


def mesh_on(field: CoefficientField, rect: Rect, h: float, exterior=None) -> Mesh:
    """Mesh ``rect`` with element size ``h`` in both directions."""
    nx = int(round(rect.width / h))
    ny = int(round(rect.height / h))
    if abs(nx * h - rect.width) > 1e-9 or abs(ny * h - rect.height) > 1e-9:
        raise MeshError(f"rectangle {rect} is not a multiple of h={h}")
    return build_mesh(rect, nx, ny, field, exterior)


def submesh_nodes(sub: Mesh, parent: Mesh) -> np.ndarray:
    """Parent node index of every node of ``sub`` (same spacing, nested grids)."""
    if abs(sub.hx - parent.hx) > 1e-12 or abs(sub.hy - parent.hy) > 1e-12:
        raise MeshError("meshes have different spacing")
    i0 = (sub.rect.x0 - parent.rect.x0) / parent.hx
    j0 = (sub.rect.y0 - parent.rect.y0) / parent.hy
    if abs(i0 - round(i0)) > 1e-6 or abs(j0 - round(j0)) > 1e-6 or not parent.rect.contains(sub.rect):
        raise MeshError("sub-mesh is not nested in parent mesh")
    i0, j0 = int(round(i0)), int(round(j0))
    i, j = np.meshgrid(np.arange(sub.nx + 1) + i0, np.arange(sub.ny + 1) + j0)
    return (j * (parent.nx + 1) + i).ravel()


def prolong(coarse: Mesh, fine: Mesh, u: np.ndarray) -> np.ndarray:
    """Evaluate the bilinear interpolant of ``u`` at the nodes of a refined mesh (exact)."""
    r = coarse.hx / fine.hx
    if abs(r - round(r)) > 1e-9 or fine.rect != coarse.rect:
        raise MeshError("fine mesh must refine the coarse mesh by an integer factor")
    U = u.reshape(coarse.ny + 1, coarse.nx + 1)
    x = (fine.nodes[:, 0] - coarse.rect.x0) / coarse.hx
    y = (fine.nodes[:, 1] - coarse.rect.y0) / coarse.hy
    i = np.minimum(np.floor(x + 1e-9).astype(int), coarse.nx - 1)
    j = np.minimum(np.floor(y + 1e-9).astype(int), coarse.ny - 1)
    s, t = x - i, y - j
    return ((1 - s) * (1 - t) * U[j, i] + s * (1 - t) * U[j, i + 1]
            + s * t * U[j + 1, i + 1] + (1 - s) * t * U[j + 1, i])


def inject(fine: Mesh, coarse: Mesh, u: np.ndarray) -> np.ndarray:
    """Values of a fine nodal field at the nodes shared with ``coarse``."""
    r = int(round(coarse.hx / fine.hx))
    U = u.reshape(fine.ny + 1, fine.nx + 1)
    return U[::r, ::r].ravel().copy()


# -------------------------------------------------------------------- assembly

def _scatter(mesh: Mesh, mask: np.ndarray, ke: np.ndarray) -> sp.csr_matrix:
    conn = mesh.elements[mask]
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    return sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))


def assemble_stiffness(mesh: Mesh, region=None) -> sp.csr_matrix:
    """Stiffness matrix of ``B(u, v) = int A grad u . grad v`` over active elements of ``region``."""
    mask = mesh.active & mesh.region_mask(region)
    kxx, kxy, kyy, _ = element_matrices(mesh.hx, mesh.hy)
    a = mesh.coeff[mask]
    ke = (a[:, 0, None, None] * kxx + a[:, 1, None, None] * (kxy + kxy.T)
          + a[:, 2, None, None] * kyy)
    return _scatter(mesh, mask, ke)


def assemble_weighted_mass(mesh: Mesh, weight=None, region=None) -> sp.csr_matrix:
    """Mass matrix of ``int w u v``; ``weight`` is a per-element array or scalar (default 1)."""
    mask = mesh.active & mesh.region_mask(region)
    w = np.broadcast_to(np.asarray(1.0 if weight is None else weight, float), (mesh.n_elements,))
    if np.any(w < 0):
        raise ValueError("negative mass weight")
    _, _, _, me = element_matrices(mesh.hx, mesh.hy)
    return _scatter(mesh, mask, w[mask, None, None] * me)


def write_triplets(path, matrix) -> None:
    """Debug dump: one ``row col value`` line per stored nonzero, 0-based indices."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")


# ---------------------------------------------------------------- boundary data

@dataclass(frozen=True)
class Edges:
    n0: np.ndarray
    n1: np.ndarray
    normal: np.ndarray   # (ne, 2) outward unit normal
    p0: np.ndarray       # (ne, 2)
    p1: np.ndarray

    @property
    def length(self) -> np.ndarray:
        return np.hypot(*(self.p1 - self.p0).T)

    @property
    def nodes(self) -> np.ndarray:
        return np.unique(np.concatenate([self.n0, self.n1]))

    def __len__(self):
        return len(self.n0)


_SIDES = (  # local node pair, normal, neighbour offset (di, dj)
    ((0, 1), (0.0, -1.0), (0, -1)),
    ((1, 2), (1.0, 0.0), (1, 0)),
    ((2, 3), (0.0, 1.0), (0, 1)),
    ((3, 0), (-1.0, 0.0), (-1, 0)),
)


def outer_edges(mesh: Mesh, exclude: Rect | None = None) -> Edges:
    """Edges of active elements facing the mesh boundary or an exterior element.

    Edges lying on a boundary line of ``exclude`` are dropped; this is how the
    part of a truncated patch boundary that lies on the global boundary is
    separated from the interior part.
    """
    i, j = np.meshgrid(np.arange(mesh.nx), np.arange(mesh.ny))
    i, j = i.ravel(), j.ravel()
    out_n0, out_n1, out_nrm = [], [], []
    for (a, b), nrm, (di, dj) in _SIDES:
        ni, nj = i + di, j + dj
        outside = (ni < 0) | (ni >= mesh.nx) | (nj < 0) | (nj >= mesh.ny)
        nb = np.clip(nj, 0, mesh.ny - 1) * mesh.nx + np.clip(ni, 0, mesh.nx - 1)
        sel = mesh.active & (outside | mesh.exterior[nb])
        out_n0.append(mesh.elements[sel, a])
        out_n1.append(mesh.elements[sel, b])
        out_nrm.append(np.tile(nrm, (int(sel.sum()), 1)))
    n0, n1 = np.concatenate(out_n0), np.concatenate(out_n1)
    nrm = np.concatenate(out_nrm)
    p0, p1 = mesh.nodes[n0], mesh.nodes[n1]
    if exclude is not None:
        mid = 0.5 * (p0 + p1)
        tol = 1e-9 * max(exclude.width, exclude.height)
        on = (((np.abs(mid[:, 0] - exclude.x0) < tol) | (np.abs(mid[:, 0] - exclude.x1) < tol))
              & (nrm[:, 1] == 0))
        on |= (((np.abs(mid[:, 1] - exclude.y0) < tol) | (np.abs(mid[:, 1] - exclude.y1) < tol))
               & (nrm[:, 0] == 0))
        keep = ~on
        n0, n1, nrm, p0, p1 = n0[keep], n1[keep], nrm[keep], p0[keep], p1[keep]
    order = np.lexsort((n1, n0))
    return Edges(n0[order], n1[order], nrm[order], p0[order], p1[order])


_LG_T, _LG_W = np.polynomial.legendre.leggauss(8)
_LG_T = 0.5 * (_LG_T + 1.0)
_LG_W = 0.5 * _LG_W


def boundary_load(mesh: Mesh, edges: Edges, flux) -> np.ndarray:
    """Load vector ``int_edges g N_i ds`` for a flux density ``g = flux(x, y, nx, ny)``.

    Eight-point Gauss-Legendre per edge: exact for polynomial fluxes up to degree 14.
    """
    b = np.zeros(mesh.n_nodes)
    if len(edges) == 0:
        return b
    t = _LG_T[None, :]
    x = edges.p0[:, 0, None] + t * (edges.p1[:, 0] - edges.p0[:, 0])[:, None]
    y = edges.p0[:, 1, None] + t * (edges.p1[:, 1] - edges.p0[:, 1])[:, None]
    nx = np.broadcast_to(edges.normal[:, 0, None], x.shape)
    ny = np.broadcast_to(edges.normal[:, 1, None], x.shape)
    g = np.broadcast_to(np.asarray(flux(x, y, nx, ny), float), x.shape)
    L = edges.length[:, None]
    b += np.bincount(edges.n0, weights=(g * (1 - t) * _LG_W * L).sum(axis=1), minlength=mesh.n_nodes)
    b += np.bincount(edges.n1, weights=(g * t * _LG_W * L).sum(axis=1), minlength=mesh.n_nodes)
    return b


def source_load(mesh: Mesh, f, mass: sp.spmatrix | None = None) -> np.ndarray:
    """Load ``int f N_i`` for the nodal interpolant of ``f`` (callable, array or None)."""
    if f is None:
        return np.zeros(mesh.n_nodes)
    fn = mesh.interpolate(f) if callable(f) else np.asarray(f, float)
    mass = assemble_weighted_mass(mesh) if mass is None else mass
    return mass @ fn


# --------------------------------------------------------------------- solvers

def _factor(matrix: sp.spmatrix):
    try:
        return splu(sp.csc_matrix(matrix), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                    options={"SymmetricMode": True})
    except RuntimeError as exc:  # SuperLU reports exact singularity this way
        raise SolverError(f"singular factorization: {exc}") from exc


def _backward_error(K, u, b) -> float:
    r = K @ u - b
    scale = abs(K).sum(axis=1).max() * np.abs(u).max() + np.abs(b).max()
    return float(np.abs(r).max() / scale) if scale > 0 else 0.0


class NeumannSolver:
    """Factorized pure-Neumann problem on the active part of a mesh.

    The quotient by constants is realised by pinning the first active node
    and shifting the result to zero mean, which yields the same discrete
    solution as a mean-value Lagrange constraint while keeping the factored
    matrix SPD.
    """

    def __init__(self, mesh: Mesh, K: sp.spmatrix | None = None, mass: sp.spmatrix | None = None):
        self.mesh = mesh
        self.K = sp.csr_matrix(assemble_stiffness(mesh) if K is None else K)
        mass = assemble_weighted_mass(mesh) if mass is None else mass
        self.weights = np.asarray(mass.sum(axis=1)).ravel()
        act = np.flatnonzero(mesh.active_nodes)
        self.pin = act[0]
        self.free = act[1:]
        self._lu = _factor(self.K[self.free][:, self.free])

    def mean(self, u: np.ndarray) -> float:
        return float(self.weights @ u / self.weights.sum())

    def solve(self, load: np.ndarray, check: bool = True) -> np.ndarray:
        load = np.asarray(load, float)
        act = self.mesh.active_nodes
        defect = load[act].sum()
        size = np.abs(load[act]).sum()
        if abs(defect) > CONSISTENCY_TOL * max(size, 1e-300) and size > 0:
            raise SolverError(f"inconsistent Neumann data: net flux {defect:.3e} (relative {defect / size:.3e})")
        u = np.zeros(self.mesh.n_nodes)
        rhs = load[self.free]
        u[self.free] = self._lu.solve(rhs)
        u[self.free] += self._lu.solve(rhs - self.K[self.free] @ u)  # one refinement step
        u[act] -= self.mean(u)
        if check:
            err = _backward_error(self.K, u, load - defect * self.weights / self.weights.sum())
            if err > RESIDUAL_TOL:
                raise SolverError(f"Neumann residual {err:.3e} above tolerance")
        return u


class DirichletSolver:
    """Factorized problem with prescribed values on ``boundary`` nodes."""

    def __init__(self, mesh: Mesh, boundary: np.ndarray, K: sp.spmatrix | None = None):
        self.mesh = mesh
        self.K = sp.csr_matrix(assemble_stiffness(mesh) if K is None else K)
        boundary = np.unique(np.asarray(boundary, int))
        if boundary.size == 0:
            raise SolverError("empty Dirichlet boundary")
        self.boundary = boundary
        free = mesh.active_nodes.copy()
        free[boundary] = False
        self.free = np.flatnonzero(free)
        self._Kfb = self.K[self.free][:, boundary]
        self._Kff = self.K[self.free][:, self.free]
        self._lu = _factor(self._Kff) if self.free.size else None

    def solve(self, values, load: np.ndarray | None = None, check: bool = True) -> np.ndarray:
        u = np.zeros(self.mesh.n_nodes)
        u[self.boundary] = values
        if self._lu is None:
            return u
        load = np.zeros(self.mesh.n_nodes) if load is None else np.asarray(load, float)
        rhs = load[self.free] - self._Kfb @ u[self.boundary]
        u[self.free] = self._lu.solve(rhs)
        u[self.free] += self._lu.solve(rhs - self._Kff @ u[self.free])
        if check:
            err = _backward_error(self._Kff, u[self.free], rhs)
            if err > RESIDUAL_TOL:
                raise SolverError(f"Dirichlet residual {err:.3e} above tolerance")
        return u


def solve_neumann(mesh: Mesh, K: sp.spmatrix, load: np.ndarray, flux=None,
                  edges: Edges | None = None) -> np.ndarray:
    """Mean-zero solution of ``K u = load + boundary load of flux``."""
    rhs = np.asarray(load, float).copy()
    if flux is not None:
        rhs += boundary_load(mesh, outer_edges(mesh) if edges is None else edges, flux)
    return NeumannSolver(mesh, K).solve(rhs)


def solve_dirichlet(mesh: Mesh, K: sp.spmatrix, boundary: np.ndarray, values,
                    load: np.ndarray | None = None) -> np.ndarray:
    return DirichletSolver(mesh, boundary, K).solve(values, load)


def harmonic_extension(mesh: Mesh, K: sp.spmatrix | None = None, *, neumann=None,
                       dirichlet=None, edges: Edges | None = None) -> np.ndarray:
    """Discrete A-harmonic function with Neumann flux or Dirichlet trace on the outer boundary.

    ``neumann`` is a flux callable ``g(x, y, nx, ny)``; ``dirichlet`` a callable
    ``q(x, y)`` evaluated at outer boundary nodes.  Neumann data is mean-corrected
    along the boundary so that the discrete problem is consistent.
    """
    if (neumann is None) == (dirichlet is None):
        raise ValueError("give exactly one of neumann= or dirichlet=")
    K = assemble_stiffness(mesh) if K is None else K
    edges = outer_edges(mesh) if edges is None else edges
    if dirichlet is not None:
        bn = edges.nodes
        xy = mesh.nodes[bn]
        return solve_dirichlet(mesh, K, bn, dirichlet(xy[:, 0], xy[:, 1]))
    b = consistent_flux_load(mesh, edges, neumann)
    return NeumannSolver(mesh, K).solve(b)


def consistent_flux_load(mesh: Mesh, edges: Edges, flux) -> np.ndarray:
    """Boundary load of ``flux`` minus its mean along ``edges`` (zero net flux)."""
    b = boundary_load(mesh, edges, flux)
    ones = boundary_load(mesh, edges, lambda x, y, nx, ny: 1.0)
    return b - (b.sum() / ones.sum()) * ones


# ------------------------------------------------------------------------ norms

def element_energy(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    """``int_e A grad u . grad u`` for every element (zero on inactive ones)."""
    kxx, kxy, kyy, _ = element_matrices(mesh.hx, mesh.hy)
    ue = u[mesh.elements]
    ue = ue - ue.mean(axis=1, keepdims=True)  # constants are in the kernel; keeps their energy exactly 0
    qxx = np.einsum("ea,ab,eb->e", ue, kxx, ue)
    qxy = np.einsum("ea,ab,eb->e", ue, kxy, ue)
    qyy = np.einsum("ea,ab,eb->e", ue, kyy, ue)
    a = mesh.coeff
    return np.where(mesh.active, a[:, 0] * qxx + 2 * a[:, 1] * qxy + a[:, 2] * qyy, 0.0)


def element_l2(mesh: Mesh, u: np.ndarray, weight=None) -> np.ndarray:
    _, _, _, me = element_matrices(mesh.hx, mesh.hy)
    ue = u[mesh.elements]
    w = np.broadcast_to(np.asarray(1.0 if weight is None else weight, float), (mesh.n_elements,))
    return np.where(mesh.active, w * np.einsum("ea,ab,eb->e", ue, me, ue), 0.0)


def norm(mesh: Mesh, u: np.ndarray, kind: str = "energy", region=None) -> float:
    """Energy, L2 or beta*-weighted L2 norm of ``u`` over the active elements of ``region``."""
    mask = mesh.region_mask(region)
    if kind == "energy":
        vals = element_energy(mesh, u)
    elif kind == "l2":
        vals = element_l2(mesh, u)
    elif kind == "l2star":
        vals = element_l2(mesh, u, mesh.beta_star)
    else:
        raise ValueError(f"unknown norm kind {kind!r}")
    return math.sqrt(max(float(vals[mask].sum()), 0.0))


def interior_residual(mesh: Mesh, K: sp.spmatrix, u: np.ndarray, edges: Edges | None = None) -> float:
    """Relative size of ``K u`` on active nodes away from the outer boundary."""
    edges = outer_edges(mesh) if edges is None else edges
    inner = mesh.active_nodes.copy()
    inner[edges.nodes] = False
    r = (K @ u)[inner]
    scale = abs(K).sum(axis=1).max() * max(np.abs(u).max(), 1e-300)
    return float(np.abs(r).max() / scale) if r.size else 0.0


@dataclass(frozen=True)
class CaccioppoliResult:
    lhs: float
    rhs: float
    ok: bool


def caccioppoli_check(mesh: Mesh, u: np.ndarray, inner: Rect, K: sp.spmatrix | None = None,
                      delta: float | None = None) -> CaccioppoliResult:
    """Compare ``||u||_E(O)`` with ``(2 sqrt(beta) / delta) ||u||_L2(mesh)`` for A-harmonic ``u``."""
    K = assemble_stiffness(mesh) if K is None else K
    res = interior_residual(mesh, K, u)
    if res > HARMONIC_TOL:
        raise ValueError(f"input is not discretely A-harmonic (interior residual {res:.2e})")
    if delta is None:
        r = mesh.rect
        delta = min(inner.x0 - r.x0, r.x1 - inner.x1, inner.y0 - r.y0, r.y1 - inner.y1)
    if delta <= 0:
        raise ValueError("inner region must be strictly inside the mesh")
    beta = float(mesh.beta_star.max())
    lhs = norm(mesh, u, "energy", inner)
    rhs = 2.0 * math.sqrt(beta) / delta * norm(mesh, u, "l2")
    return CaccioppoliResult(lhs, rhs, lhs <= rhs * (1 + 1e-8))
