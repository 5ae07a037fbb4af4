"""Chart containers and exact conversions between the tip-radial and rotated-ray charts.

Tip-radial chart: the profile curve as eta = w(xi) over the first axis.
Rotated-ray chart: the curve as u(x) over the cone ray y = mu x, with x the
distance along the ray and u the signed offset towards the second axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cone_params import ConeParams

TIP = "tip-radial"
ROTATED = "rotated-ray"
OUTER = "outer-parametric"


@dataclass
class ChartFunction:
    chart: str
    frame: str
    mesh: np.ndarray
    values: np.ndarray
    d1: np.ndarray | None = None
    d2: np.ndarray | None = None

    def __post_init__(self):
        self.mesh = np.asarray(self.mesh, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.mesh.shape != self.values.shape:
            raise ValueError("mesh and values differ in shape")
        if np.any(np.diff(self.mesh) <= 0):
            raise ValueError("chart mesh must be strictly increasing")

    def copy(self) -> "ChartFunction":
        return replace(self, mesh=self.mesh.copy(), values=self.values.copy(),
                       d1=None if self.d1 is None else self.d1.copy(),
                       d2=None if self.d2 is None else self.d2.copy())


@dataclass
class ParametricCurve:
    """Planar polyline (xi, eta) in the closed first quadrant, ordered from the
    inner junction towards the first axis."""

    xi: np.ndarray
    eta: np.ndarray
    chart: str = field(default=OUTER)
    frame: str = "t"
    # which end nodes sit on an axis: "second" (xi = 0), "first" (eta = 0) or None
    start_axis: str | None = None
    end_axis: str | None = "first"

    def copy(self) -> "ParametricCurve":
        return replace(self, xi=self.xi.copy(), eta=self.eta.copy())

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.xi, self.eta])

    def segment_lengths(self) -> np.ndarray:
        return np.hypot(np.diff(self.xi), np.diff(self.eta))


def rotated_to_hat(params: ConeParams, x, u, u1=None, u2=None):
    """(x, u, u', u'') on the rotated chart -> (xi, eta, eta', eta'') on the tip chart."""
    mu = params.mu
    s = math.sqrt(1 + mu * mu)
    xi = (x - mu * u) / s
    eta = (mu * x + u) / s
    if u1 is None:
        return xi, eta, None, None
    den = 1 - mu * u1
    e1 = (mu + u1) / den
    e2 = None if u2 is None else u2 * s ** 3 / den ** 3
    return xi, eta, e1, e2


def hat_to_rotated(params: ConeParams, xi, eta, e1=None, e2=None):
    """(xi, eta, eta', eta'') on the tip chart -> (x, u, u', u'') on the rotated chart."""
    mu = params.mu
    s = math.sqrt(1 + mu * mu)
    x = (xi + mu * eta) / s
    u = (-mu * xi + eta) / s
    if e1 is None:
        return x, u, None, None
    den = 1 + mu * e1
    u1 = (e1 - mu) / den
    u2 = None if e2 is None else e2 * s ** 3 / den ** 3
    return x, u, u1, u2


def tip_mesh(z_max: float, n: int = 400, h0: float = 0.02) -> np.ndarray:
    """Smooth mesh on [0, z_max], spacing about h0 at z = 0 and growing exponentially."""
    if h0 * n >= z_max:
        return np.linspace(0.0, z_max, n + 1)
    # z = z_max (e^{k t} - 1)/(e^k - 1), t uniform; pick k from the first spacing
    lo, hi = 1e-8, 60.0
    for _ in range(200):
        k = 0.5 * (lo + hi)
        first = z_max * math.expm1(k / n) / math.expm1(k)
        if first > h0:
            lo = k
        else:
            hi = k
    t = np.linspace(0.0, 1.0, n + 1)
    return z_max * np.expm1(k * t) / math.expm1(k)


def log_mesh(x_lo: float, x_hi: float, per_decade: int) -> np.ndarray:
    """Log-uniform mesh anchored at x_hi so that extending downward keeps old nodes."""
    dl = math.log(10.0) / per_decade
    m = int(math.ceil(math.log(x_hi / x_lo) / dl))
    return x_hi * np.exp(-dl * np.arange(m, -1, -1))
