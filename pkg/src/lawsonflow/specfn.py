"""Special functions: Kummer M, modified Bessel I, log-Gamma, eigenfunction constants."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import DomainError, NonConvergence

BESSEL_SWITCH = 25.0
_SERIES_TERMS = 120


def log_gamma(x):
    """log Gamma(x) for x > 0 (scalar or array)."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa <= 0):
        raise DomainError("log_gamma requires x > 0")
    out = gammaln(xa)
    return float(out) if out.ndim == 0 else out


def _forbidden_b(b: float) -> bool:
    return b <= 0 and float(b).is_integer()


@dataclass(frozen=True)
class KummerPolynomial:
    """M(-l, b; z) as an explicit polynomial in z."""

    l: int
    b: float
    coefficients: tuple

    @classmethod
    def build(cls, l: int, b: float) -> "KummerPolynomial":
        if _forbidden_b(b):
            raise DomainError(f"b={b} is a non-positive integer")
        coeffs = [1.0]
        for j in range(1, l + 1):
            # ratio of consecutive terms of the terminating series
            coeffs.append(coeffs[-1] * (j - 1 - l) / ((b + j - 1) * j))
        return cls(l, float(b), tuple(coeffs))

    def __call__(self, z):
        return np.polynomial.polynomial.polyval(np.asarray(z, dtype=float), self.coefficients)


def kummer_m(a: float, b: float, x, rtol: float = 1e-13, max_terms: int = 2000):
    """Confluent hypergeometric M(a, b; x).

    For a = -i (i a non-negative integer) the series terminates and is summed
    exactly; otherwise terms are added until the term/sum ratio drops below rtol.
    """
    if _forbidden_b(b):
        raise DomainError(f"b={b} is a non-positive integer")
    xa = np.asarray(x, dtype=float)
    if a <= 0 and float(a).is_integer():
        out = KummerPolynomial.build(int(-a), b)(xa)
        return float(out) if np.ndim(out) == 0 else out
    term = np.ones_like(xa)
    total = np.ones_like(xa)
    for k in range(max_terms):
        term = term * (a + k) / (b + k) * xa / (k + 1)
        total = total + term
        if np.all(np.abs(term) <= rtol * np.abs(total)):
            return float(total) if total.ndim == 0 else total
    raise NonConvergence(f"Kummer series did not reach rtol={rtol} in {max_terms} terms")


def _log_bessel_series(nu: float, x: np.ndarray) -> np.ndarray:
    q = 0.25 * x * x
    term = np.ones_like(x)
    total = np.ones_like(x)
    for k in range(1, _SERIES_TERMS):
        term = term * q / (k * (k + nu))
        total += term
    return nu * np.log(0.5 * x) - math.lgamma(nu + 1.0) + np.log(total)


def _log_bessel_asymptotic(nu: float, x: np.ndarray) -> np.ndarray:
    mu4 = 4.0 * nu * nu
    term = np.ones_like(x)
    total = np.ones_like(x)
    prev = np.full_like(x, np.inf)
    for k in range(1, 60):
        new = -term * (mu4 - (2 * k - 1) ** 2) / (k * 8.0 * x)
        # stop each entry once the divergent tail starts growing
        grow = np.abs(new) >= prev
        new = np.where(grow, 0.0, new)
        prev = np.where(grow, 0.0, np.abs(new))
        term = new
        total += term
        if not np.any(term):
            break
    return x - 0.5 * np.log(2.0 * np.pi * x) + np.log(total)


def bessel_i(nu: float, x, log: bool = False):
    """Modified Bessel function I_nu(x), nu >= 0, x > 0.

    Power series up to x = 25 and the Hankel asymptotic expansion beyond. With
    log=True returns log I_nu(x) (I_nu is positive here, so no sign is needed),
    which avoids overflow for large arguments.
    """
    if nu < 0:
        raise DomainError("bessel_i requires nu >= 0")
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xa <= 0):
        raise DomainError("bessel_i requires x > 0")
    out = np.empty_like(xa)
    small = xa <= BESSEL_SWITCH
    if np.any(small):
        out[small] = _log_bessel_series(nu, xa[small])
    if np.any(~small):
        out[~small] = _log_bessel_asymptotic(nu, xa[~small])
    if not log:
        out = np.exp(out)
    return float(out[0]) if np.ndim(x) == 0 else out


def rising_factorial(b: float, j: int) -> float:
    out = 1.0
    for i in range(j):
        out *= b + i
    return out


def normalization_c(params, exps, j: int) -> float:
    """c_j with c_j^{-2} = int y^{n-2+2 alpha} e^{-y^2/4} M(-j, b, y^2/4)^2 dy."""
    b = exps.b
    if b <= 0:
        raise DomainError("normalization needs b > 0")
    log_c = (-(params.n - 2 + 2 * params.alpha) / 2.0 * math.log(2.0) - math.lgamma(b)
             + 0.5 * (math.lgamma(b + j) - math.lgamma(j + 1.0)))
    return math.exp(log_c)


@dataclass(frozen=True)
class EigenCoefficients:
    l: int
    K: tuple
    c: tuple


def expansion_K(l: int, b: float) -> list[float]:
    """K_{l,j} = C(l,j) / ((b)_j 4^j), j = 1..l."""
    return [math.comb(l, j) / (rising_factorial(b, j) * 4.0 ** j) for j in range(1, l + 1)]


def eigenfunction_coeffs(params, exps, l: int) -> EigenCoefficients:
    """Expansion phi_l = c_l y^alpha (1 - K_{l,1} y^2 + K_{l,2} y^4 - ...) and c_0..c_l."""
    if l < 1:
        raise DomainError("eigenfunction_coeffs needs l >= 1")
    K = expansion_K(l, exps.b)
    c = [normalization_c(params, exps, j) for j in range(l + 1)]
    return EigenCoefficients(l, tuple(K), tuple(c))
