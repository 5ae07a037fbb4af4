"""Linearized type-I operator L, its Kummer eigenfunctions, the remainder Q and the heat kernel.

The type-I flow around the cone reads  v_s = L v + Q v  with

    L v = v'' + ((n-2)/y - y/2) v' + ((n-2)/y^2 + 1/2) v,

acting on H = L^2((0, inf); y^{n-2} e^{-y^2/4} dy).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cone_params import ConeParams, SpectralExponents
from .errors import ConeBreach, MeshTooCoarse
from .fd import derivatives, three_point_weights
from .specfn import KummerPolynomial, bessel_i, normalization_c


def weight_tail_cut(n: int, tail: float = 1e-17) -> float:
    """Smallest y (to 0.5) with int_y^inf t^{n-2} e^{-t^2/4} dt below tail."""
    y = 4.0
    while 2.0 * y ** (n - 3) * math.exp(-y * y / 4.0) * (1 + 2 * (n - 3) / y ** 2) > tail:
        y += 0.5
    return y


@dataclass(frozen=True)
class WeightedQuadrature:
    nodes: np.ndarray
    weights: np.ndarray
    n: int

    @classmethod
    def build(cls, n: int, order: int = 20, y_cut: float | None = None,
              n_graded: int = 12, n_uniform: int = 48) -> "WeightedQuadrature":
        """Composite Gauss-Legendre; panels geometric on (0, 1], uniform on [1, y_cut]."""
        if y_cut is None:
            y_cut = weight_tail_cut(n)
        edges = np.concatenate([[0.0], np.geomspace(1e-4, 1.0, n_graded), np.linspace(1.0, y_cut, n_uniform + 1)[1:]])
        x, w = np.polynomial.legendre.leggauss(order)
        a, b = edges[:-1, None], edges[1:, None]
        nodes = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
        weights = (0.5 * (b - a) * w).ravel()
        weights = weights * nodes ** (n - 2) * np.exp(-nodes ** 2 / 4.0)
        return cls(nodes, weights, n)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))


def _on_nodes(f, quad: WeightedQuadrature) -> np.ndarray:
    """Evaluate f on the quadrature nodes: callable, (mesh, values) pair, or array."""
    if callable(f):
        return np.asarray(f(quad.nodes), dtype=float)
    if isinstance(f, tuple):
        mesh, vals = f
        out = np.interp(quad.nodes, mesh, vals)
        out[(quad.nodes < mesh[0]) | (quad.nodes > mesh[-1])] = 0.0
        return out
    return np.asarray(f, dtype=float)


def inner_product_H(f, g, quad: WeightedQuadrature) -> float:
    """<f, g> = int f g y^{n-2} e^{-y^2/4} dy; sampled inputs are zero off their mesh."""
    return quad.integrate(_on_nodes(f, quad) * _on_nodes(g, quad))


def eigenvalue(params: ConeParams, i: int) -> float:
    return -(1.0 - params.alpha) / 2.0 + i


def eigenfunction_eval(params: ConeParams, exps: SpectralExponents, i: int, y):
    """phi_i(y) = c_i y^alpha M(-i, b; y^2/4), normalized in H."""
    y = np.asarray(y, dtype=float)
    c = normalization_c(params, exps, i)
    return c * y ** params.alpha * KummerPolynomial.build(i, exps.b)(y * y / 4.0)


@dataclass(frozen=True)
class EigenPair:
    index: int
    lambda_i: float
    c: float
    poly: KummerPolynomial
    alpha: float

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return self.c * y ** self.alpha * self.poly(y * y / 4.0)

    def derivative(self, y):
        """phi_i'(y) in closed form."""
        y = np.asarray(y, dtype=float)
        z = y * y / 4.0
        dpoly = np.polynomial.polynomial.polyder(self.poly.coefficients)
        dval = np.polynomial.polynomial.polyval(z, dpoly) if len(dpoly) else 0.0 * z
        return self.c * (self.alpha * y ** (self.alpha - 1) * self.poly(z) + y ** self.alpha * dval * y / 2.0)


def eigenpairs(params: ConeParams, exps: SpectralExponents, j_max: int) -> list[EigenPair]:
    return [EigenPair(i, eigenvalue(params, i), normalization_c(params, exps, i),
                      KummerPolynomial.build(i, exps.b), params.alpha) for i in range(j_max + 1)]


def apply_L(y: np.ndarray, f: np.ndarray, params: ConeParams) -> np.ndarray:
    """Three-point discrete L f; the two boundary entries are NaN."""
    y = np.asarray(y, dtype=float)
    f = np.asarray(f, dtype=float)
    if len(y) < 6:
        raise MeshTooCoarse("apply_L needs at least 4 interior points")
    n = params.n
    (a1, b1, c1), (a2, b2, c2) = three_point_weights(y)
    fm, f0, fp = f[:-2], f[1:-1], f[2:]
    d1 = a1 * fm + b1 * f0 + c1 * fp
    d2 = a2 * fm + b2 * f0 + c2 * fp
    yi = y[1:-1]
    out = np.full_like(f, np.nan)
    out[1:-1] = d2 + ((n - 2) / yi - yi / 2) * d1 + ((n - 2) / yi ** 2 + 0.5) * f0
    return out


def _check_cone(ratio: np.ndarray, params: ConeParams):
    bound = min(params.mu, 1.0 / params.mu)
    if np.any(np.abs(ratio) >= bound):
        raise ConeBreach(f"|v/y| reached {np.abs(ratio).max():.3g} >= {bound:.3g}")


def Q_pointwise(y, v, v1, v2, params: ConeParams):
    """Nonlinear remainder Q from values and derivatives."""
    n, mu = params.n, params.mu
    w = v / y
    _check_cone(w, params)
    num = w * w * (v / y ** 2 + v1 / y) + (mu - 1.0 / mu) * w * (v / y ** 2)
    return -v1 ** 2 / (1 + v1 ** 2) * v2 + (n - 2) * num / ((1 - mu * w) * (1 + w / mu))


def apply_Q(y: np.ndarray, f: np.ndarray, params: ConeParams) -> np.ndarray:
    """Q f with second-order finite-difference derivatives."""
    d1, d2 = derivatives(y, f)
    return Q_pointwise(np.asarray(y, float), np.asarray(f, float), d1, d2, params)


def mcf_graph_rhs(x, u, u1, u2, params: ConeParams):
    """Unrescaled normal-graph MCF speed over the cone ray (quotient form)."""
    p, q, mu = params.p, params.q, params.mu
    return u2 / (1 + u1 ** 2) + (p - 1) * (mu + u1) / (x - mu * u) - (q - 1) * (1 - mu * u1) / (mu * x + u)


def type1_rhs(y, v, v1, v2, params: ConeParams):
    """Right side of the type-I equation: graph MCF speed plus the drift (v - y v')/2."""
    return mcf_graph_rhs(y, v, v1, v2, params) + 0.5 * (v - y * v1)


def kernel_gamma(params: ConeParams) -> float:
    return (params.n - 3) / 2.0 + params.alpha


def log_heat_kernel(y, z, s: float, params: ConeParams):
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    n = params.n
    e = math.exp(-s)
    om = -math.expm1(-s)
    arg = math.exp(-s / 2) * y * z / (2 * om)
    log_i = bessel_i(kernel_gamma(params), np.atleast_1d(arg).ravel(), log=True).reshape(np.shape(arg))
    return ((n / 2 - 1) * (np.log(z) - np.log(y)) + 0.5 * (np.log(y) + np.log(z)) + (n - 1) * s / 4
            - math.log(2 * om) + log_i - (e * y * y + z * z) / (4 * om))


def heat_kernel(y, z, s: float, params: ConeParams):
    """Heat kernel of L; exp of the log-space evaluation (underflows quietly to 0)."""
    if s <= 0:
        raise ValueError("heat kernel needs s > 0")
    out = np.exp(log_heat_kernel(y, z, s, params))
    return float(out) if np.ndim(out) == 0 else out


def heat_propagate(f, y, s: float, params: ConeParams, order: int = 16):
    """(e^{sL} f)(y) = int_0^inf K(y,z,s) f(z) dz by composite Gauss-Legendre.

    The z-range is centred on e^{-s/2} y with a width set by the Gaussian factor.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    width = math.sqrt(-math.expm1(-s))
    x, w = np.polynomial.legendre.leggauss(order)
    out = np.empty_like(y)
    for i, yi in enumerate(y):
        top = math.exp(-s / 2) * yi + 30 * width
        panels = max(60, int(math.ceil(4 * top / width)))
        edges = np.linspace(0.0, top, panels + 1)
        a, b = edges[:-1, None], edges[1:, None]
        zn = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
        zw = (0.5 * (b - a) * w).ravel()
        out[i] = np.dot(zw, heat_kernel(yi, zn, s, params) * f(zn))
    return out


def fourier_coeffs(f, j_max: int, quad: WeightedQuadrature, params: ConeParams, exps: SpectralExponents):
    """<f, phi_j> for j = 0..j_max."""
    fv = _on_nodes(f, quad)
    return np.array([quad.integrate(fv * ph(quad.nodes)) for ph in eigenpairs(params, exps, j_max)])
