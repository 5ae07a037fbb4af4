"""Finite differences on nonuniform meshes and a tridiagonal solver."""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded

from .errors import MeshTooCoarse, SolveFailure


def fornberg_weights(x0: float, xs: np.ndarray, m: int) -> np.ndarray:
    """Weights for derivatives 0..m at x0 from nodes xs (Fornberg's recursion)."""
    n = len(xs)
    c = np.zeros((n, m + 1))
    c1, c4 = 1.0, xs[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, xs[i] - x0
        for j in range(i):
            c3 = xs[i] - xs[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c


def stencil_derivative(x: np.ndarray, f: np.ndarray, order: int, width: int = 7) -> np.ndarray:
    """High-order derivative of sampled f using centred (shifted at the ends) stencils."""
    n = len(x)
    if n < width:
        raise MeshTooCoarse(f"need at least {width} points, got {n}")
    out = np.empty(n)
    half = width // 2
    for i in range(n):
        lo = min(max(i - half, 0), n - width)
        idx = slice(lo, lo + width)
        w = fornberg_weights(x[i], x[idx], order)[:, order]
        out[i] = w @ f[idx]
    return out


def three_point_weights(x: np.ndarray):
    """Interior three-point weights (lower, diag, upper) for d/dx and d2/dx2.

    Returned arrays have length len(x)-2 and refer to nodes 1..n-2.
    """
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    s = hm + hp
    d1 = (-hp / (hm * s), (hp - hm) / (hm * hp), hm / (hp * s))
    d2 = (2.0 / (hm * s), -2.0 / (hm * hp), 2.0 / (hp * s))
    return d1, d2


def derivatives(x: np.ndarray, f: np.ndarray):
    """Second-order first and second derivatives; one-sided stencils at the ends."""
    x = np.asarray(x, dtype=float)
    f = np.asarray(f, dtype=float)
    if len(x) < 4:
        raise MeshTooCoarse("need at least 4 points")
    d1 = np.gradient(f, x, edge_order=2)
    (a1, b1, c1), (a2, b2, c2) = three_point_weights(x)
    d2 = np.empty_like(f)
    d2[1:-1] = a2 * f[:-2] + b2 * f[1:-1] + c2 * f[2:]
    for i, sl in ((0, slice(0, 4)), (-1, slice(-4, None))):
        w = fornberg_weights(x[i], x[sl], 2)[:, 2]
        d2[i] = w @ f[sl]
    return d1, d2


def solve_tridiagonal(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve a tridiagonal system; lower[i] multiplies x[i-1] in row i, upper[i] x[i+1]."""
    n = len(diag)
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    try:
        out = solve_banded((1, 1), ab, rhs, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolveFailure(str(exc)) from exc
    if not np.all(np.isfinite(out)):
        raise SolveFailure("non-finite tridiagonal solution")
    return out
