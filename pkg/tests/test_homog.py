import csv
import math

import numpy as np
import pytest

from msgfem import homog
from msgfem.homog import EllipseSetup
from msgfem.localspace import LocalBasis, ellipse_patch, homogenized_trace_space
from msgfem.microstructure import FieldError, Rect, SymMat2, checkerboard_cell, constant_field, laminate_cell

import oracles

UNIT = Rect(0.0, 0.0, 1.0, 1.0)


def test_constant_cell_has_zero_correctors():
    A = SymMat2(2.0, 0.3, 1.5)
    res = homog.cell_problem(constant_field(A, UNIT, 4), 16)
    assert np.abs(res.correctors).max() <= 1e-12
    assert np.allclose(res.A0.as_array(), A.as_array(), rtol=1e-12)


def test_laminate_effective_matrix():
    res = homog.cell_problem(laminate_cell(1.0, 4.0), 32)
    harm, arith = oracles.laminate_effective(1.0, 4.0)
    assert res.A0.a11 == pytest.approx(harm, rel=1e-10)
    assert res.A0.a22 == pytest.approx(arith, rel=1e-10)
    assert abs(res.A0.a12) <= 1e-10 and res.asymmetry <= 1e-10


def test_checkerboard_duality():
    res = homog.cell_problem(checkerboard_cell(2.0, 0.5), 64)
    assert res.A0.a11 == pytest.approx(1.0, rel=0.01)
    assert res.A0.a22 == pytest.approx(1.0, rel=0.01)


@pytest.mark.parametrize("cell", [laminate_cell(1.0, 10.0), checkerboard_cell(1.0, 5.0), laminate_cell(3.0, 0.2, 8)])
def test_voigt_reuss_bounds_and_corrector_properties(cell):
    res = homog.cell_problem(cell, 32)
    lo, hi = homog.voigt_reuss(cell)
    ev = np.linalg.eigvalsh(res.A0.matrix())
    assert lo * (1 - 1e-10) <= ev[0] and ev[1] <= hi * (1 + 1e-10)
    mesh = res.mesh
    n = mesh.nx
    W = res.correctors.reshape(n + 1, n + 1, 2)
    assert np.array_equal(W[:, 0], W[:, -1]) and np.array_equal(W[0], W[-1])
    from msgfem import fem

    w = np.asarray(fem.assemble_weighted_mass(mesh).sum(axis=1)).ravel()
    assert np.abs(w @ res.correctors).max() <= 1e-13


def test_cell_problem_rejects_holes_and_wrong_domain():
    with pytest.raises(FieldError):
        homog.cell_problem(constant_field(SymMat2.scalar(1.0), Rect(0, 0, 2, 1), 4))


def test_analytic_widths():
    w = homog.analytic_ellipse_widths(0.5, 1.0, 3)
    assert [v for v, _ in w] == [0.25, 0.0625, 0.015625] and all(m == 2 for _, m in w)
    assert np.allclose([v for v, _ in homog.analytic_ellipse_widths(0.999999, 1.0, 3)], 1.0, atol=1e-5)
    with pytest.raises(ValueError):
        homog.analytic_ellipse_widths(1.0, 1.0, 2)
    r, rs = 0.3, 0.8
    pairs = [math.sqrt(v) for v, _ in homog.analytic_ellipse_widths(r, rs, 6)]
    for n in range(6):
        assert pairs[n] == pytest.approx(math.exp(-abs(math.log(r / rs)) * (n + 1)), rel=1e-12)
    flat = homog.flatten_widths(homog.analytic_ellipse_widths(r, rs, 3))
    assert list(flat) == [pairs[0] ** 2] * 2 + [pairs[1] ** 2] * 2 + [pairs[2] ** 2] * 2


SMALL = EllipseSetup(h=1 / 32)


def test_constant_cell_sweep_has_zero_deviation():
    A0 = SymMat2.scalar(1.0)
    table = homog.epsilon_sweep(constant_field(A0, UNIT, 2), [0.25, 0.5], 4, SMALL, A0)
    assert table.eps == [0.5, 0.25]
    assert np.abs(table.deviations).max() <= 1e-12
    rows = list(table.rows())
    assert len(rows) == 3 * 4 and rows[0][0] == 0.0


def test_anisotropic_reference_matches_analytic():
    A0 = homog.cell_problem(laminate_cell(1.0, 4.0), 16).A0
    setup = EllipseSetup(h=1 / 64)
    field = constant_field(A0, setup.domain, 64)
    patch = ellipse_patch(field, (0.0, 0.0), setup.r, setup.r_star, setup.h, A0)
    lam = homog.patch_eigenvalues(patch, 4, "full", A0)
    ref = homog.flatten_widths(homog.analytic_ellipse_widths(setup.r, setup.r_star, 2))
    assert np.allclose(lam, ref, rtol=0.05)


def test_q_estimator_constant_limit_and_range():
    A0 = SymMat2.scalar(1.0)
    field = constant_field(A0, Rect(-1, -1, 1, 1), 64)
    patch = ellipse_patch(field, (0.0, 0.0), 0.375, 0.75, 1 / 64, A0)
    V = homogenized_trace_space(patch, A0, 4)
    ref = np.sqrt(homog.flatten_widths(homog.analytic_ellipse_widths(0.375, 0.75, 2)))
    q = np.array([homog.q_estimator(V, i + 1) for i in range(4)])
    assert np.all((q >= 0) & (q <= 1))
    assert np.allclose(q, ref, rtol=0.03)
    with pytest.raises(ValueError):
        homog.q_estimator(LocalBasis(patch, np.zeros((patch.n_nodes, 0)), "empty"), 1)
    with pytest.raises(IndexError):
        homog.q_estimator(V, 5)


def test_csv_writers(tmp_path):
    res = homog.cell_problem(laminate_cell(1.0, 2.0), 4)
    homog.write_correctors_csv(tmp_path / "c.csv", res)
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["x", "y", "w1", "w2"] and len(rows) == 1 + 25
    A0 = SymMat2.scalar(1.0)
    table = homog.epsilon_sweep(constant_field(A0, UNIT, 2), [0.5], 2, SMALL, A0)
    homog.write_sweep_csv(tmp_path / "s.csv", table)
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["eps", "i", "lambda", "deviation", "q"] and len(rows) == 1 + 4
