"""Cellwise-constant coefficient fields A(x) on axis-aligned rectangles.

A field is a grid of symmetric 2x2 matrices sampled at cell centers, with an
optional hole mask marking zero-rigidity cells that are excluded from every
assembled integral.  Fields are treated as immutable once built.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

HOLE = "hole"

_GRID_TOL = 1e-9


class FieldError(ValueError):
    """Invalid coefficient data or misaligned grids."""


@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise FieldError(f"degenerate rectangle {self}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)

    @property
    def diam(self) -> float:
        return math.hypot(self.width, self.height)

    def contains(self, other: "Rect", tol: float = _GRID_TOL) -> bool:
        return (other.x0 >= self.x0 - tol and other.y0 >= self.y0 - tol
                and other.x1 <= self.x1 + tol and other.y1 <= self.y1 + tol)

    def intersect(self, other: "Rect") -> "Rect":
        return Rect(max(self.x0, other.x0), max(self.y0, other.y0),
                    min(self.x1, other.x1), min(self.y1, other.y1))

    def touches_boundary_of(self, other: "Rect", tol: float = _GRID_TOL) -> bool:
        """True when this rectangle shares at least one boundary line with ``other``."""
        return (abs(self.x0 - other.x0) < tol or abs(self.x1 - other.x1) < tol
                or abs(self.y0 - other.y0) < tol or abs(self.y1 - other.y1) < tol)


@dataclass(frozen=True)
class SymMat2:
    a11: float
    a12: float
    a22: float

    @classmethod
    def scalar(cls, a: float) -> "SymMat2":
        return cls(a, 0.0, a)

    @classmethod
    def rotated(cls, d1: float, d2: float, angle: float) -> "SymMat2":
        """R diag(d1, d2) R^T for a rotation by ``angle`` radians."""
        c, s = math.cos(angle), math.sin(angle)
        return cls(d1 * c * c + d2 * s * s, (d1 - d2) * c * s, d1 * s * s + d2 * c * c)

    def as_array(self) -> np.ndarray:
        return np.array([self.a11, self.a12, self.a22])

    def matrix(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a12, self.a22]])

    def eigvals(self) -> tuple[float, float]:
        lo, hi = sym2_eigvals(self.a11, self.a12, self.a22)
        return float(lo), float(hi)

    def is_spd(self) -> bool:
        return self.a11 > 0 and self.a22 > 0 and self.a11 * self.a22 - self.a12 ** 2 > 0


def sym2_eigvals(a11, a12, a22):
    """Closed-form eigenvalues (smallest, largest) of symmetric 2x2 matrices, elementwise."""
    a11, a12, a22 = np.asarray(a11, float), np.asarray(a12, float), np.asarray(a22, float)
    mean = 0.5 * (a11 + a22)
    rad = np.hypot(0.5 * (a11 - a22), a12)
    return mean - rad, mean + rad


def _cells_per(length: float, resolution: int, what: str) -> int:
    n = length * resolution
    k = int(round(n))
    if k < 1 or abs(n - k) > 1e-6:
        raise FieldError(f"{what} extent {length} is not a whole number of cells at resolution {resolution}")
    return k


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Cellwise SPD conductivity on ``domain``.

    ``cells`` has shape (ny, nx, 3) holding (a11, a12, a22); ``holes`` has shape
    (ny, nx).  ``disks`` and ``matrix_value`` are retained for inclusion fields so
    that :func:`clip_inclusions` can restore matrix material.
    """

    domain: Rect
    resolution: tuple[int, int]
    cells: np.ndarray
    holes: np.ndarray
    disks: tuple[tuple[float, float, float], ...] = ()
    matrix_value: SymMat2 | None = None
    alpha: float = dc_field(init=False)
    beta: float = dc_field(init=False)

    def __post_init__(self):
        nx = _cells_per(self.domain.width, self.resolution[0], "x")
        ny = _cells_per(self.domain.height, self.resolution[1], "y")
        cells = np.ascontiguousarray(self.cells, dtype=float)
        holes = np.ascontiguousarray(self.holes, dtype=bool)
        if cells.shape != (ny, nx, 3) or holes.shape != (ny, nx):
            raise FieldError(f"cell array shape {cells.shape} does not match grid {(ny, nx)}")
        cells.setflags(write=False)
        holes.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "holes", holes)
        solid = ~holes
        if not solid.any():
            raise FieldError("field has no non-hole cells")
        c = cells[solid]
        if not (np.all(c[:, 0] > 0) and np.all(c[:, 2] > 0)
                and np.all(c[:, 0] * c[:, 2] - c[:, 1] ** 2 > 0)):
            raise FieldError("non-SPD cell matrix")
        lo, hi = sym2_eigvals(c[:, 0], c[:, 1], c[:, 2])
        object.__setattr__(self, "alpha", float(lo.min()))
        object.__setattr__(self, "beta", float(hi.max()))

    @property
    def shape(self) -> tuple[int, int]:
        return self.holes.shape

    @property
    def cell_size(self) -> tuple[float, float]:
        return 1.0 / self.resolution[0], 1.0 / self.resolution[1]

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        ny, nx = self.shape
        hx, hy = self.cell_size
        xc = self.domain.x0 + (np.arange(nx) + 0.5) * hx
        yc = self.domain.y0 + (np.arange(ny) + 0.5) * hy
        return np.meshgrid(xc, yc)

    def cell_index(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """(row, col) of the cells containing points; points must be interior to cells."""
        hx, hy = self.cell_size
        col = np.floor((np.asarray(x) - self.domain.x0) / hx).astype(int)
        row = np.floor((np.asarray(y) - self.domain.y0) / hy).astype(int)
        ny, nx = self.shape
        if np.any((col < 0) | (col >= nx) | (row < 0) | (row >= ny)):
            raise FieldError("sample point outside the field domain")
        return row, col

    def scaled(self, factor: float) -> "CoefficientField":
        return CoefficientField(self.domain, self.resolution, self.cells * factor, self.holes,
                                self.disks, self.matrix_value)


def constant_field(A0: SymMat2, domain: Rect, resolution: int | tuple[int, int]) -> CoefficientField:
    if not A0.is_spd():
        raise FieldError(f"matrix {A0} is not SPD")
    res = _res(resolution)
    nx = _cells_per(domain.width, res[0], "x")
    ny = _cells_per(domain.height, res[1], "y")
    cells = np.broadcast_to(A0.as_array(), (ny, nx, 3)).copy()
    return CoefficientField(domain, res, cells, np.zeros((ny, nx), bool))


def _res(resolution) -> tuple[int, int]:
    if isinstance(resolution, (int, np.integer)):
        return int(resolution), int(resolution)
    rx, ry = resolution
    return int(rx), int(ry)


def periodic_field(unit_cell: CoefficientField, epsilon: float,
                   domain: Rect = Rect(0.0, 0.0, 1.0, 1.0)) -> CoefficientField:
    """Tile a unit-cell field with period ``epsilon`` = 1/l over ``domain``.

    Cell values are copied, never interpolated: the target resolution is the
    unit-cell resolution times l, so every target cell sits inside one unit cell.
    """
    if unit_cell.domain != Rect(0.0, 0.0, 1.0, 1.0):
        raise FieldError("unit cell must live on [0,1]^2")
    ell = 1.0 / epsilon
    if ell < 1 - 1e-12 or abs(ell - round(ell)) > 1e-9:
        raise FieldError(f"epsilon={epsilon} is not 1/l for a positive integer l")
    ell = int(round(ell))
    rx, ry = unit_cell.resolution
    res = (rx * ell, ry * ell)
    nx = _cells_per(domain.width, res[0], "x")
    ny = _cells_per(domain.height, res[1], "y")
    # global cell offsets must align with the period grid
    ox = domain.x0 * res[0]
    oy = domain.y0 * res[1]
    if abs(ox - round(ox)) > 1e-6 or abs(oy - round(oy)) > 1e-6:
        raise FieldError("domain origin is not on the periodic cell grid")
    cols = (int(round(ox)) + np.arange(nx)) % rx
    rows = (int(round(oy)) + np.arange(ny)) % ry
    cells = unit_cell.cells[np.ix_(rows, cols)]
    holes = unit_cell.holes[np.ix_(rows, cols)]
    return CoefficientField(domain, res, cells, holes)


def laminate_cell(a_left: float, a_right: float, resolution: int = 2) -> CoefficientField:
    """Unit cell with scalar ``a_left`` on x<1/2 and ``a_right`` on x>1/2."""
    if resolution % 2:
        raise FieldError("laminate cell resolution must be even")
    cells = np.empty((resolution, resolution, 3))
    half = resolution // 2
    cells[:, :half] = SymMat2.scalar(a_left).as_array()
    cells[:, half:] = SymMat2.scalar(a_right).as_array()
    return CoefficientField(Rect(0, 0, 1, 1), (resolution, resolution), cells,
                            np.zeros((resolution, resolution), bool))


def checkerboard_cell(a: float, b: float, resolution: int = 2) -> CoefficientField:
    """Unit cell with ``a`` on the lower-left and upper-right quarters, ``b`` elsewhere."""
    if resolution % 2:
        raise FieldError("checkerboard cell resolution must be even")
    half = resolution // 2
    idx = np.arange(resolution) // half
    pattern = (idx[:, None] + idx[None, :]) % 2 == 0
    cells = np.where(pattern[..., None], SymMat2.scalar(a).as_array(), SymMat2.scalar(b).as_array())
    return CoefficientField(Rect(0, 0, 1, 1), (resolution, resolution), cells,
                            np.zeros((resolution, resolution), bool))


def inclusion_field(domain: Rect, resolution, disks: Sequence[tuple[float, float, float]],
                    matrix_value: SymMat2, inclusion_value: SymMat2 | str) -> CoefficientField:
    """Matrix material with circular inclusions decided by the cell-center test.

    ``inclusion_value`` may be :data:`HOLE` for zero-rigidity fibers; hole disks
    must not overlap or touch each other.
    """
    if not matrix_value.is_spd():
        raise FieldError("matrix value is not SPD")
    is_hole = isinstance(inclusion_value, str)
    if is_hole and inclusion_value != HOLE:
        raise FieldError(f"unknown inclusion value {inclusion_value!r}")
    if not is_hole and not inclusion_value.is_spd():
        raise FieldError("inclusion value is not SPD")
    disks = tuple((float(cx), float(cy), float(r)) for cx, cy, r in disks)
    for cx, cy, r in disks:
        if r < 0:
            raise FieldError("negative disk radius")
        if (cx - r < domain.x0 - _GRID_TOL or cx + r > domain.x1 + _GRID_TOL
                or cy - r < domain.y0 - _GRID_TOL or cy + r > domain.y1 + _GRID_TOL):
            raise FieldError(f"disk {(cx, cy, r)} leaves the domain")
    if is_hole:
        for i, (xi, yi, ri) in enumerate(disks):
            for xj, yj, rj in disks[i + 1:]:
                if math.hypot(xi - xj, yi - yj) <= ri + rj:
                    raise FieldError("hole disks overlap")
    base = constant_field(matrix_value, domain, resolution)
    mask = _disk_mask(base, disks)
    cells = base.cells.copy()
    holes = np.zeros(base.shape, bool)
    if is_hole:
        holes = mask
    else:
        cells[mask] = inclusion_value.as_array()
    return CoefficientField(domain, base.resolution, cells, holes, disks, matrix_value)


def _disk_mask(field: CoefficientField, disks) -> np.ndarray:
    X, Y = field.cell_centers()
    mask = np.zeros(field.shape, bool)
    for cx, cy, r in disks:
        mask |= (X - cx) ** 2 + (Y - cy) ** 2 < r * r
    return mask


def _dist_to_boundary(cx: float, cy: float, rect: Rect) -> float:
    inside = rect.x0 <= cx <= rect.x1 and rect.y0 <= cy <= rect.y1
    if inside:
        return min(cx - rect.x0, rect.x1 - cx, cy - rect.y0, rect.y1 - cy)
    dx = max(rect.x0 - cx, 0.0, cx - rect.x1)
    dy = max(rect.y0 - cy, 0.0, cy - rect.y1)
    return math.hypot(dx, dy)


def disk_hits_boundary(disk: tuple[float, float, float], rect: Rect, pad: float = 0.0) -> bool:
    """True when the disk enlarged by ``pad`` meets the boundary of ``rect``."""
    cx, cy, r = disk
    return _dist_to_boundary(cx, cy, rect) <= r + pad


def clip_inclusions(field: CoefficientField, patch_boundary: Rect, pad: float | None = None) -> CoefficientField:
    """Replace every disk meeting the boundary of ``patch_boundary`` by matrix material.

    The cell-center rasterization of a disk can reach up to one cell beyond
    the disk, so by default disks closer than one cell diagonal are clipped as
    well; otherwise a hole could cut a corner of the patch off from the rest.
    """
    if not field.disks:
        return field
    if pad is None:
        pad = math.hypot(*field.cell_size)
    hit = [d for d in field.disks if disk_hits_boundary(d, patch_boundary, pad)]
    if not hit:
        return field
    keep = tuple(d for d in field.disks if d not in hit)
    mask = _disk_mask(field, hit)
    cells = field.cells.copy()
    cells[mask] = field.matrix_value.as_array()
    holes = field.holes & ~mask
    return CoefficientField(field.domain, field.resolution, cells, holes, keep, field.matrix_value)


def coercivity_bounds(field: CoefficientField) -> tuple[float, float]:
    return field.alpha, field.beta


def random_disks(domain: Rect, count: int, r_min: float, r_max: float, gap: float,
                 rng: np.random.Generator, margin: float | None = None,
                 max_tries: int = 200_000) -> list[tuple[float, float, float]]:
    """Random sequential adsorption of non-touching disks (pairwise gap >= ``gap``)."""
    margin = gap if margin is None else margin
    disks: list[tuple[float, float, float]] = []
    tries = 0
    while len(disks) < count:
        tries += 1
        if tries > max_tries:
            raise FieldError(f"could only place {len(disks)} of {count} disks")
        r = rng.uniform(r_min, r_max)
        cx = rng.uniform(domain.x0 + r + margin, domain.x1 - r - margin)
        cy = rng.uniform(domain.y0 + r + margin, domain.y1 - r - margin)
        if all(math.hypot(cx - x, cy - y) >= r + s + gap for x, y, s in disks):
            disks.append((cx, cy, r))
    return disks


def read_disks_csv(path) -> list[tuple[float, float, float]]:
    """Read (cx, cy, r) rows; a non-numeric first row is treated as a header."""
    import csv

    rows = []
    with open(path, newline="") as fh:
        for i, rec in enumerate(csv.reader(fh)):
            if not rec or rec[0].lstrip().startswith("#"):
                continue
            try:
                rows.append(tuple(float(v) for v in rec[:3]))
            except ValueError:
                if i == 0:
                    continue
                raise FieldError(f"{path}: bad disk row {i + 1}: {rec}")
    return rows
