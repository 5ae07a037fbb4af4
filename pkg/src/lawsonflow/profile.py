"""Minimal hypersurface profiles asymptotic to the Lawson cone.

The tip-chart graph psi_hat(r) solves

    psi_hat''/(1+psi_hat'^2) + (p-1) psi_hat'/r - (q-1)/psi_hat = 0,
    psi_hat(0) = c0, psi_hat'(0) = 0.

It is integrated through the deviation d = psi_hat - mu r from the cone ray.
Because mu^2 (p-1) = q-1 the two large lower-order terms cancel identically and

    d'' = -(1 + (mu+d')^2) (p-1) (mu d + mu r d' + d d') / (r (mu r + d)),

which keeps full relative precision in d even where d is 1e-9 of psi_hat.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .cone_params import ConeParams
from .errors import ChartFold, FitDegenerate, IntegrationBlowup
from .fd import stencil_derivative

R0 = 1e-6


def _deviation_rhs(params: ConeParams):
    p, mu = params.p, params.mu

    def rhs(r, y):
        d, dp = y
        psi = mu * r + d
        d2 = -(1.0 + (mu + dp) ** 2) * (p - 1) * (mu * d + psi * dp) / (r * psi)
        return np.array([dp, d2])

    return rhs


def _tip_rhs(params: ConeParams):
    p, q = params.p, params.q

    def rhs(r, y):
        psi, dpsi = y
        return np.array([dpsi, (1.0 + dpsi * dpsi) * ((q - 1) / psi - (p - 1) * dpsi / r)])

    return rhs


def _d2_from_state(params: ConeParams, r, d, slope, r_switch: float):
    """psi_hat'' from the ODE: tip form for r <= r_switch, deviation form beyond."""
    p, q, mu = params.p, params.q, params.mu
    r = np.asarray(r, dtype=float)
    psi = mu * r + d
    dp = slope - mu
    with np.errstate(divide="ignore", invalid="ignore"):
        far = -(1.0 + slope ** 2) * (p - 1) * (mu * d + psi * dp) / (r * psi)
        near = (1.0 + slope ** 2) * ((q - 1) / psi - (p - 1) * slope / r)
    out = np.where(r <= r_switch, near, far)
    return np.where(r == 0, (q - 1) / (p * psi), out)


@dataclass
class ProfileSolution:
    params: ConeParams
    k: float
    r_max: float
    mesh: np.ndarray
    psi_hat: np.ndarray
    psi_hat_d1: np.ndarray
    psi_hat_d2: np.ndarray
    tip_height: float
    # dense evaluator of the unscaled integration and the dilation applied to it
    _dense: object = field(default=None, repr=False)
    _scale: float = 1.0

    def evaluate(self, r):
        """(psi_hat, psi_hat', psi_hat'') at arbitrary 0 <= r <= r_max."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        lam = self._scale
        rr = r / lam
        d, dp = _dense_state(self._dense, self.params, rr)
        slope = _slope_state(self._dense, self.params, rr)
        d2 = _d2_from_state(self.params, rr, d, slope, self._dense.r_switch)
        return lam * (self.params.mu * rr + d), slope, d2 / lam

    def deviation(self, r):
        """d = psi_hat - mu r evaluated without cancellation."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        d, _ = _dense_state(self._dense, self.params, r / self._scale)
        return self._scale * d

    def residual(self, width: int = 7) -> np.ndarray:
        """Residual of the tip-chart ODE on the interior mesh.

        The second derivative is rebuilt by high-order differencing of the stored
        first derivative, so the check does not reuse the ODE right-hand side.
        """
        p, q = self.params.p, self.params.q
        r = self.mesh[1:]
        d2 = stencil_derivative(r, self.psi_hat_d1[1:], 1, width)
        res = d2 / (1 + self.psi_hat_d1[1:] ** 2) + (p - 1) * self.psi_hat_d1[1:] / r - (q - 1) / self.psi_hat[1:]
        return res[1:-1]


def _dense_state(dense, params: ConeParams, rr: np.ndarray):
    """(d, d') at unscaled radii: series, then tip-form and deviation-form integrations."""
    c0 = dense.c0
    a = (params.q - 1) / (2 * params.p * c0)
    mu = params.mu
    d = np.empty_like(rr)
    dp = np.empty_like(rr)
    inner = rr <= R0
    tip = (rr > R0) & (rr <= dense.r_switch)
    outer = rr > dense.r_switch
    if np.any(inner):
        ri = rr[inner]
        d[inner] = c0 + a * ri * ri - mu * ri
        dp[inner] = 2 * a * ri - mu
    if np.any(tip):
        y = dense.sol_tip(rr[tip])
        d[tip], dp[tip] = y[0] - mu * rr[tip], y[1] - mu
    if np.any(outer):
        y = dense.sol_out(rr[outer])
        d[outer], dp[outer] = y[0], y[1]
    return d, dp


def _slope_state(dense, params: ConeParams, rr: np.ndarray):
    """psi_hat' at unscaled radii without the mu + d' cancellation near the tip."""
    a = (params.q - 1) / (2 * params.p * dense.c0)
    out = np.empty_like(rr)
    inner = rr <= R0
    tip = (rr > R0) & (rr <= dense.r_switch)
    outer = rr > dense.r_switch
    out[inner] = 2 * a * rr[inner]
    if np.any(tip):
        out[tip] = dense.sol_tip(rr[tip])[1]
    if np.any(outer):
        out[outer] = params.mu + dense.sol_out(rr[outer])[1]
    return out


class _Dense:
    def __init__(self, sol_tip, sol_out, c0, r_switch):
        self.sol_tip = sol_tip
        self.sol_out = sol_out
        self.c0 = c0
        self.r_switch = r_switch


def amplitude_ratio(params: ConeParams, r, d):
    """(psi_hat - mu r) / ((1+mu^2)^((alpha+1)/2) r^alpha): tends to k."""
    a = params.alpha
    return d / ((1 + params.mu ** 2) ** ((a + 1) / 2) * np.asarray(r) ** a)


def aitken(g1: float, g2: float, g3: float) -> float:
    """Extrapolated limit of a sequence sampled at geometrically spaced points."""
    den = (g3 - g2) - (g2 - g1)
    if den == 0 or not np.isfinite(den):
        return g3
    return g3 - (g3 - g2) ** 2 / den


def solve_hat_profile(params: ConeParams, c0: float = 1.0, r_max: float = 1e3,
                      rtol: float = 1e-12, n_mesh: int = 1500):
    """Integrate psi_hat from a series start at r = 1e-6 out to r_max.

    Returns the raw solution and the extrapolated amplitude k.
    """
    if c0 <= 0:
        raise ValueError("c0 must be positive")
    p, q, mu = params.p, params.q, params.mu
    a = (q - 1) / (2 * p * c0)

    def crossed(r, y):
        return y[0]

    crossed.terminal = True
    r_switch = min(c0, r_max / 8)
    tip = solve_ivp(_tip_rhs(params), (R0, r_switch), [c0 + a * R0 ** 2, 2 * a * R0], method="DOP853",
                    rtol=rtol, atol=1e-300, dense_output=True)
    if tip.status != 0:
        raise IntegrationBlowup(f"profile integration failed near the tip: {tip.message}")
    y1 = tip.y[:, -1]
    mesh = np.concatenate([[0.0], np.geomspace(R0, r_max, n_mesh)])
    sol = solve_ivp(_deviation_rhs(params), (r_switch, r_max), [y1[0] - mu * r_switch, y1[1] - mu],
                    method="DOP853", rtol=rtol, atol=1e-300, dense_output=True, events=crossed)
    if sol.status != 0:
        raise IntegrationBlowup(f"profile integration stopped at r={sol.t[-1]:.3g}: {sol.message}")
    dense = _Dense(tip.sol, sol.sol, c0, r_switch)
    d, dp = _dense_state(dense, params, mesh)
    slope = _slope_state(dense, params, mesh)
    d2 = _d2_from_state(params, mesh, d, slope, r_switch)
    raw = ProfileSolution(params, float("nan"), r_max, mesh, mu * mesh + d, slope, d2, c0, dense, 1.0)
    checkpoints = np.array([r_max / 4, r_max / 2, r_max])
    dc, _ = _dense_state(dense, params, checkpoints)
    g = amplitude_ratio(params, checkpoints, dc)
    k_est = aitken(*g)
    raw.k = k_est
    return raw, k_est


def normalize_profile(raw: ProfileSolution, k_estimate: float, k_target: float) -> ProfileSolution:
    """Dilate to amplitude k_target using psi_hat_k(r) = k^{1/(1-a)} psi_hat_1(k^{-1/(1-a)} r)."""
    if k_estimate <= 0:
        raise ValueError("k_estimate must be positive")
    lam = (k_target / k_estimate) ** (1.0 / (1.0 - raw.params.alpha))
    return ProfileSolution(raw.params, float(k_target), raw.r_max * lam, raw.mesh * lam,
                           raw.psi_hat * lam, raw.psi_hat_d1.copy(), raw.psi_hat_d2 / lam,
                           raw.tip_height * lam, raw._dense, raw._scale * lam)


def minimal_profile(params: ConeParams, k: float = 1.0, r_max: float = 1e3, rtol: float = 1e-12) -> ProfileSolution:
    """Convenience: solve at c0 = 1 and rescale to amplitude k."""
    raw, k_est = solve_hat_profile(params, 1.0, r_max, rtol)
    return normalize_profile(raw, k_est, k)


@dataclass
class RotatedProfile:
    params: ConeParams
    k: float
    mesh: np.ndarray
    psi: np.ndarray
    psi_d1: np.ndarray
    psi_d2: np.ndarray
    hat: ProfileSolution = field(repr=False, default=None)

    @property
    def start(self) -> float:
        return float(self.mesh[0])

    def evaluate(self, x):
        """(psi, psi', psi'') over the cone ray at arbitrary x >= start.

        Beyond the integrated range the leading asymptotics k x^alpha are used.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        r = self._invert(x)
        out = list(_rotate_state(self.params, r, *self.hat.evaluate(r), self.hat.deviation(r)))
        far = x > self.mesh[-1]
        if np.any(far):
            a, k = self.params.alpha, self.k
            xf = x[far]
            out[1][far] = k * xf ** a
            out[2][far] = k * a * xf ** (a - 1)
            out[3][far] = k * a * (a - 1) * xf ** (a - 2)
        return out[1], out[2], out[3]

    def _invert(self, x: np.ndarray) -> np.ndarray:
        params, mu = self.params, self.params.mu
        s = math.sqrt(1 + mu * mu)
        xm = np.clip(x, self.mesh[0], self.mesh[-1])
        r = np.interp(xm, self.mesh, self.hat.mesh)
        for _ in range(6):
            ph, php, _ = self.hat.evaluate(r)
            f = (r + mu * ph) / s - xm
            r = np.clip(r - f * s / (1 + mu * php), 0.0, self.hat.r_max)
        return r


def _rotate_state(params: ConeParams, r, ph, php, phpp, d):
    mu = params.mu
    s = math.sqrt(1 + mu * mu)
    dp = php - mu
    X = (r + mu * ph) / s
    D = 1 + mu * mu + mu * dp
    if np.any(D <= 0):
        raise ChartFold("rotated profile fails the vertical-line test")
    return X, d / s, dp / D, phpp * (1 + mu * mu) * s / D ** 3


def rotated_profile(hat: ProfileSolution) -> RotatedProfile:
    """Re-express the tip-chart profile as a graph over the cone ray."""
    X, psi, d1, d2 = _rotate_state(hat.params, hat.mesh, hat.psi_hat, hat.psi_hat_d1, hat.psi_hat_d2,
                                   hat.deviation(hat.mesh))
    if np.any(np.diff(X) <= 0):
        raise ChartFold("rotated abscissa is not monotone")
    return RotatedProfile(hat.params, hat.k, X, psi, d1, d2, hat)


def rotated_residual(rot: RotatedProfile) -> np.ndarray:
    """Residual of the rotated-chart ODE at the stored samples past the tip point.

    At the tip point itself two terms are 0/0 (the curve meets the axis), so it
    is left out.
    """
    p, q, mu = rot.params.p, rot.params.q, rot.params.mu
    x, u, u1, u2 = rot.mesh[1:], rot.psi[1:], rot.psi_d1[1:], rot.psi_d2[1:]
    return u2 / (1 + u1 ** 2) + (p - 1) * (mu + u1) / (x - mu * u) - (q - 1) * (1 - mu * u1) / (mu * x + u)


def decay_rate_fit(rot: RotatedProfile, decades: float = 1.0) -> float:
    """Log-log slope of |psi - k x^alpha| over the last `decades` of the mesh."""
    x = rot.mesh
    win = x >= x[-1] * 10.0 ** (-decades)
    xw = x[win]
    res = np.abs(rot.psi[win] - rot.k * xw ** rot.params.alpha)
    floor = 64 * np.finfo(float).eps * np.abs(rot.psi[win])
    if np.any(res <= floor):
        raise FitDegenerate("residual below double-precision floor inside the fit window")
    slope, _ = np.polyfit(np.log(xw), np.log(res), 1)
    return float(slope)


def wz_rhs(params: ConeParams, W, Z):
    """Right side (W', Z') of the autonomous system in s = ln x for W = psi/x."""
    p, q, mu = params.p, params.q, params.mu
    Zp = -Z - (1 + (W + Z) ** 2) * ((p - 1) * (mu + W + Z) / (1 - mu * W) - (q - 1) * (1 - mu * (W + Z)) / (mu + W))
    return Z, Zp


def wz_linear_matrix(params: ConeParams) -> np.ndarray:
    """Jacobian of the autonomous system at the cone (W, Z) = (0, 0)."""
    n = params.n
    return np.array([[0.0, 1.0], [-2.0 * (n - 2), -(n - 1.0)]])


def autonomous_reduction(rot: RotatedProfile):
    """s = ln x, W = e^{-s} psi(e^s), Z = W' on the rotated mesh."""
    s = np.log(rot.mesh)
    W = rot.psi / rot.mesh
    Z = rot.psi_d1 - W
    return s, W, Z
