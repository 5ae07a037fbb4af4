"""Constants of the Lawson cone C_{p,q} and the spectral exponents built on them."""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

from .errors import DimensionError, ParameterError

VARSIGMA_N8_DEFAULT = 1.0 / 7.0


@dataclass(frozen=True)
class ConeParams:
    p: int
    q: int
    n: int
    mu: float
    alpha: float
    alpha_hat: float
    alpha_tilde: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SpectralExponents:
    l: int
    lambda_l: float
    sigma_l: float
    b: float
    varsigma: float
    kappa: float
    varrho: float

    def as_dict(self) -> dict:
        return asdict(self)


def decay_roots(n: int) -> tuple[float, float]:
    """Roots (alpha, alpha_hat) of x(x-1) + (n-2)(x+1) = 0, alpha_hat < alpha.

    The quadratic is x^2 + (n-3)x + (n-2). The large-magnitude root is taken
    from the usual formula and the other one from the product of roots, which
    avoids cancellation as n grows.
    """
    B = n - 3.0
    disc = B * B - 4.0 * (n - 2.0)
    if disc <= 0:
        raise DimensionError(f"no distinct real decay exponents for n={n}")
    alpha_hat = -0.5 * (B + math.sqrt(disc))
    alpha = (n - 2.0) / alpha_hat
    return alpha, alpha_hat


def derive_cone_params(p: int, q: int) -> ConeParams:
    p, q = int(p), int(q)
    n = p + q
    if p < 2 or q < 2 or n < 8:
        raise DimensionError(f"need p,q >= 2 and p+q >= 8, got p={p}, q={q}")
    if n == 8 and (p < 3 or q < 3):
        raise DimensionError(f"n=8 requires p,q >= 3, got p={p}, q={q}")
    mu = math.sqrt((q - 1.0) / (p - 1.0))
    alpha, alpha_hat = decay_roots(n)
    # n = 8 gives alpha = -2, alpha_hat = -3 exactly, so the max picks alpha_hat there
    alpha_tilde = max(2.0 * alpha - 1.0, alpha_hat)
    return ConeParams(p, q, n, mu, alpha, alpha_hat, alpha_tilde)


def spectral_exponents(params: ConeParams, l: int, varsigma: float | None = None) -> SpectralExponents:
    """Eigenvalue lambda_l of the linearized type-I operator and the derived rates.

    varsigma is fixed by the dimension for n >= 9; at n = 8 it is a free choice
    strictly below (n-3+2 alpha)/(2(1-alpha)) and defaults to 1/7.
    """
    if int(l) != l or l < 2:
        raise ParameterError(f"l must be an integer >= 2, got {l}")
    l = int(l)
    a, n = params.alpha, params.n
    one_m = 1.0 - a
    lam = -0.5 * one_m + l
    sigma = lam / one_m
    b = a + 0.5 * (n - 1)
    upper = (n - 3 + 2 * a) / (2 * one_m)
    if n >= 9:
        vs = min(1.0, upper)
    else:
        vs = VARSIGMA_N8_DEFAULT if varsigma is None else float(varsigma)
        if not 0 < vs < upper:
            raise ParameterError(f"varsigma must lie in (0, {upper}) at n=8, got {vs}")
    kappa = min(0.5, (n - 1 + 2 * a) / (6 * one_m), vs, 1.0 / (lam + 1.0))
    varrho = min(kappa * one_m / 2.0, 0.2)
    return SpectralExponents(l, lam, sigma, b, vs, kappa, varrho)


def rotate_chart(point, params: ConeParams, direction: str = "forward"):
    """Rotation taking the cone ray y = mu x onto the horizontal axis.

    Works on scalars or numpy arrays; `inverse` undoes `forward`.
    """
    x, y = point
    mu = params.mu
    s = math.sqrt(1.0 + mu * mu)
    if direction == "forward":
        return (x + mu * y) / s, (-mu * x + y) / s
    if direction == "inverse":
        return (x - mu * y) / s, (mu * x + y) / s
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def time_frames(t, sigma_l: float):
    """Type-I time s and type-II time tau for unrescaled time t < 0."""
    import numpy as np

    mt = -np.asarray(t, dtype=float)
    return -np.log(mt), mt ** (-2.0 * sigma_l) / (2.0 * sigma_l)
