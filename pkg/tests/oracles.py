"""Independent reference computations used only by the test-suite."""
import math

import numpy as np


def _negative_pivots(a: np.ndarray) -> int:
    """Count negative pivots of symmetric ``a`` by unpivoted LDL^T (Sylvester inertia)."""
    a = [list(map(float, row)) for row in a]
    n = len(a)
    count = 0
    for k in range(n):
        d = a[k][k]
        if d == 0.0:
            d = -1e-300
        if d < 0:
            count += 1
        for i in range(k + 1, n):
            f = a[i][k] / d
            for j in range(k + 1, n):
                a[i][j] -= f * a[k][j]
    return count


def pencil_eigenvalues_bisection(S: np.ndarray, T: np.ndarray, tol: float = 1e-14) -> list[float]:
    """Eigenvalues of ``S v = lam T v`` (T SPD), descending, by inertia bisection.

    The number of eigenvalues below ``sigma`` equals the number of negative
    pivots of ``S - sigma T``.  No eigen-solver is involved.
    """
    n = len(S)
    # Rayleigh quotients are bounded by |S| / lambda_min(T); bracket generously
    bound = sum(abs(x) for row in S for x in row)
    tmin = min(T[i][i] - sum(abs(T[i][j]) for j in range(n) if j != i) for i in range(n))
    lo0 = -bound / max(tmin, 1e-12) - 1.0 if tmin > 0 else -1e6
    hi0 = -lo0
    vals = []
    for k in range(n):  # k-th smallest
        lo, hi = lo0, hi0
        while hi - lo > tol * max(1.0, abs(lo), abs(hi)):
            mid = 0.5 * (lo + hi)
            if _negative_pivots(np.asarray(S) - mid * np.asarray(T)) > k:
                hi = mid
            else:
                lo = mid
        vals.append(0.5 * (lo + hi))
    return sorted(vals, reverse=True)


def bilinear_element_by_hand() -> tuple[np.ndarray, np.ndarray]:
    """Unit-square Q1 stiffness (A=I) and mass matrices from closed-form integrals.

    Shape functions on [0,1]^2: N0=(1-x)(1-y), N1=x(1-y), N2=xy, N3=(1-x)y.
    int (1-x)^2 = 1/3, int x(1-x) = 1/6, int 1 = 1; products separate in x and y.
    """
    # 1D integrals: p[a][b] = int phi_a phi_b, d[a][b] = int phi_a' phi_b' with phi_0=1-x, phi_1=x
    p = [[1 / 3, 1 / 6], [1 / 6, 1 / 3]]
    d = [[1.0, -1.0], [-1.0, 1.0]]
    ix = [0, 1, 1, 0]
    iy = [0, 0, 1, 1]
    K = np.zeros((4, 4))
    M = np.zeros((4, 4))
    for a in range(4):
        for b in range(4):
            K[a, b] = d[ix[a]][ix[b]] * p[iy[a]][iy[b]] + p[ix[a]][ix[b]] * d[iy[a]][iy[b]]
            M[a, b] = p[ix[a]][ix[b]] * p[iy[a]][iy[b]]
    return K, M


def laminate_effective(a1: float, a2: float) -> tuple[float, float]:
    """(harmonic, arithmetic) means of a half-half laminate."""
    return 2.0 / (1.0 / a1 + 1.0 / a2), 0.5 * (a1 + a2)


def disk_widths(ratio: float, count: int) -> list[float]:
    """Flattened (r/r*)^(2j) list with multiplicity two."""
    out = []
    j = 1
    while len(out) < count:
        out += [ratio ** (2 * j)] * 2
        j += 1
    return out[:count]


def rotated_eigs(d1, d2, angle):
    c, s = math.cos(angle), math.sin(angle)
    m = np.array([[c, -s], [s, c]]) @ np.diag([d1, d2]) @ np.array([[c, s], [-s, c]])
    return np.linalg.eigvalsh(m)
