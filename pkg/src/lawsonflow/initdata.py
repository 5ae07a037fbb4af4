"""Initial profile curve: scaled minimal profile at the tip, eigenfunction packet in the
intermediate region, the cone beyond 2 rho, and a spherical cap closing the curve."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .charts import (ChartFunction, ParametricCurve, ROTATED, TIP, hat_to_rotated, log_mesh,
                     rotated_to_hat, tip_mesh)
from .cone_params import ConeParams, SpectralExponents
from .errors import BlendFailure, OverlapMismatch, ParameterClash, ParameterError
from .fd import derivatives
from .profile import ProfileSolution, RotatedProfile, normalize_profile, rotated_profile
from .specfn import KummerPolynomial


def cutoff_eta(x):
    """Smooth step: 0 for x <= 0, 1 for x >= 1, g(x)/(g(x)+g(1-x)) with g = exp(-1/x)."""
    return cutoff_eta_derivs(x)[0]


def cutoff_eta_derivs(x):
    """eta, eta', eta'' of the smooth step (arrays)."""
    x = np.asarray(x, dtype=float)
    e0 = np.where(x >= 1.0, 1.0, 0.0)
    e1 = np.zeros_like(x)
    e2 = np.zeros_like(x)
    inside = (x > 0) & (x < 1)
    if np.any(inside):
        t = x[inside]
        # eta = expit(-h), h = 1/t - 1/(1-t); near the ends m underflows to 0 before H overflows matter
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            h = 1.0 / t - 1.0 / (1.0 - t)
            e = expit(-h)
            m = e * (1.0 - e)
            H = 1.0 / t ** 2 + 1.0 / (1.0 - t) ** 2
            Hp = -2.0 / t ** 3 + 2.0 / (1.0 - t) ** 3
            first = np.where(m > 0, m * H, 0.0)
            second = np.where(m > 0, first * (1.0 - 2.0 * e) * H + m * Hp, 0.0)
        e0[inside] = e
        e1[inside] = first
        e2[inside] = second
    return e0, e1, e2


@dataclass(frozen=True)
class Packet:
    """Sum_m A_m x^{alpha + 2m}: the low-mode packet written in powers of x."""

    alpha: float
    A: tuple

    def __call__(self, x, deriv: int = 0):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for m, a in enumerate(self.A):
            e = self.alpha + 2 * m
            c = a
            for d in range(deriv):
                c *= e - d
            out += c * x ** (e - deriv)
        return out


def packet_model(params: ConeParams, exps: SpectralExponents, a, t0: float) -> Packet:
    """(-t0)^{1/2+lambda_l} (phi_l/c_l + sum_j a_j phi_j/c_j)(x/sqrt(-t0)) expanded in x.

    phi_j/c_j = y^alpha M(-j, b; y^2/4); collecting powers gives
    sum_m (-t0)^{l-m} 4^{-m} (sum_j w_j kappa_{j,m}) x^{alpha+2m}.
    """
    l = exps.l
    a = np.zeros(l) if a is None else np.asarray(a, dtype=float)
    if a.shape != (l,):
        raise ParameterError(f"a must have length l={l}")
    w = list(a) + [1.0]
    T = -t0
    A = np.zeros(l + 1)
    for j, wj in enumerate(w):
        coeffs = KummerPolynomial.build(j, exps.b).coefficients
        for m, kc in enumerate(coeffs):
            A[m] += wj * kc
    A = tuple(A[m] * T ** (l - m) / 4.0 ** m for m in range(l + 1))
    return Packet(params.alpha, A)


def low_mode_packet(params: ConeParams, exps: SpectralExponents, a, t0: float, x, deriv: int = 0):
    return packet_model(params, exps, a, t0)(x, deriv)


def tip_scale(t: float, exps: SpectralExponents) -> float:
    """(-t)^{1/2+sigma_l}: the type-II length scale."""
    return (-t) ** (0.5 + exps.sigma_l)


@dataclass
class InitialProfile:
    """Closed-form u(x, t0) on the rotated chart, with first and second derivatives."""

    params: ConeParams
    exps: SpectralExponents
    a: np.ndarray
    t0: float
    rho: float
    beta: float
    rot: RotatedProfile = field(repr=False)
    packet: Packet = field(repr=False)
    include_packet: bool = True

    @property
    def scale(self) -> float:
        return tip_scale(self.t0, self.exps)

    def __call__(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        S, beta, rho = self.scale, self.beta, self.rho
        h = beta / 2
        X = x / S
        core = np.zeros_like(x)
        core1 = np.zeros_like(x)
        core2 = np.zeros_like(x)
        valid = X >= self.rot.start
        if np.any(valid):
            c0, c1, c2 = self.rot.evaluate(X[valid])
            core[valid], core1[valid], core2[valid] = S * c0, c1, c2 / S
        g, g1, g2 = cutoff_eta_derivs((X - h) / h)
        g1, g2 = g1 / (S * h), g2 / (S * h) ** 2
        if not self.include_packet:
            return core, core1, core2
        f, f1, f2 = cutoff_eta_derivs((2 * rho - x) / rho)
        f1, f2 = -f1 / rho, f2 / rho ** 2
        P, P1, P2 = self.packet(x), self.packet(x, 1), self.packet(x, 2)
        outer = g * f
        outer1 = g1 * f + g * f1
        outer2 = g2 * f + 2 * g1 * f1 + g * f2
        u = core * (1 - g) + P * outer
        u1 = core1 * (1 - g) - core * g1 + P1 * outer + P * outer1
        u2 = core2 * (1 - g) - 2 * core1 * g1 - core * g2 + P2 * outer + 2 * P1 * outer1 + P * outer2
        return u, u1, u2


def _profile_for(profile: ProfileSolution, k0: float) -> ProfileSolution:
    if abs(profile.k - k0) > 1e-12 * max(1.0, k0):
        return normalize_profile(profile, profile.k, k0)
    return profile


def check_parameters(params: ConeParams, exps: SpectralExponents, a, t0: float, rho: float, beta: float):
    if t0 >= 0:
        raise ParameterError("t0 must be negative")
    if not 0 < rho < 1:
        raise ParameterClash("need 0 < rho < 1")
    inner = beta * tip_scale(t0, exps)
    if inner >= rho:
        raise ParameterClash(f"beta (-t0)^(1/2+sigma_l) = {inner:.4g} >= rho = {rho}")
    a = np.zeros(exps.l) if a is None else np.asarray(a, dtype=float)
    bound = beta ** (params.alpha_tilde - params.alpha)
    if np.linalg.norm(a) >= bound:
        raise ParameterError(f"|a| = {np.linalg.norm(a):.4g} outside the ball of radius {bound:.4g}")
    if 1 + a.sum() <= 0:
        raise ParameterError("1 + sum(a) must be positive")
    return a


def build_initial_u(params: ConeParams, exps: SpectralExponents, a, t0: float, rho: float, beta: float,
                    profile: ProfileSolution, include_packet: bool = True) -> InitialProfile:
    """The rotated-chart initial graph u(., t0) as a closed-form evaluator."""
    a = check_parameters(params, exps, a, t0, rho, beta)
    k0 = 1.0 + a.sum()
    rot = rotated_profile(_profile_for(profile, k0))
    return InitialProfile(params, exps, a, t0, rho, beta, rot, packet_model(params, exps, a, t0), include_packet)


@dataclass
class OuterCap:
    """Tip-chart graph of the cap: ray of slope mu, quintic blend, circle of radius 2."""

    params: ConeParams
    delta: float
    x1: float
    x2: float
    coeffs: np.ndarray

    def evaluate(self, xi):
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        mu = self.params.mu
        v = mu * xi
        d1 = np.full_like(xi, mu)
        d2 = np.zeros_like(xi)
        blend = (xi > self.x1) & (xi < self.x2)
        if np.any(blend):
            w = 2 * self.delta
            t = (xi[blend] - self.x1) / w
            P = np.polynomial.polynomial
            v[blend] = P.polyval(t, self.coeffs)
            d1[blend] = P.polyval(t, P.polyder(self.coeffs)) / w
            d2[blend] = P.polyval(t, P.polyder(self.coeffs, 2)) / w ** 2
        arc = xi >= self.x2
        if np.any(arc):
            xa = xi[arc]
            r = np.sqrt(np.maximum(4 - xa * xa, 0.0))
            v[arc] = r
            with np.errstate(divide="ignore"):
                d1[arc] = -xa / r
                d2[arc] = -4.0 / r ** 3
        return v, d1, d2

    def polyline(self, x_start: float, n_dense: int = 40000) -> np.ndarray:
        """Dense polyline from the ray point at rotated abscissa x_start to (2, 0)."""
        mu = self.params.mu
        s = math.sqrt(1 + mu * mu)
        xi0 = x_start / s
        if xi0 >= self.x1:
            raise BlendFailure("cap start lies beyond the straight piece")
        xs = np.linspace(xi0, self.x2, n_dense // 2)
        ys = self.evaluate(xs)[0]
        th2 = math.atan2(self.evaluate(self.x2)[0][0], self.x2)
        th = np.linspace(th2, 0.0, n_dense // 2)[1:]
        return np.column_stack([np.concatenate([xs, 2 * np.cos(th)]), np.concatenate([ys, 2 * np.sin(th)])])


def build_outer_cap(params: ConeParams, delta: float = 0.05) -> OuterCap:
    """C^2 concave quintic joining the ray eta = mu xi to the circle xi^2 + eta^2 = 4."""
    mu = params.mu
    xc = 2.0 / math.sqrt(1 + mu * mu)
    x1, x2 = xc - delta, xc + delta
    if delta <= 0 or x2 >= 2.0 or x1 <= 0:
        raise BlendFailure(f"delta={delta} does not fit between the ray and the first axis")
    r2 = math.sqrt(4 - x2 * x2)
    w = 2 * delta
    # conditions in t = (xi - x1)/w on [0, 1]
    left = (mu * x1, mu * w, 0.0)
    right = (r2, -x2 / r2 * w, -4.0 / r2 ** 3 * w * w)
    M = np.zeros((6, 6))
    rhs = np.zeros(6)
    for k in range(3):
        for j in range(6):
            # k-th derivative of t^j at t = 0 and t = 1
            fall = math.perm(j, k) if j >= k else 0
            M[k, j] = fall if j == k else 0.0
            M[3 + k, j] = fall
        rhs[k], rhs[3 + k] = left[k], right[k]
    coeffs = np.linalg.solve(M, rhs)
    cap = OuterCap(params, delta, x1, x2, coeffs)
    t = np.linspace(0, 1, 2001)
    curv = np.polynomial.polynomial.polyval(t, np.polynomial.polynomial.polyder(coeffs, 2))
    if np.any(curv > 1e-12 * np.abs(curv).max()):
        raise BlendFailure(f"quintic blend is not concave for delta={delta}")
    return cap


def resample_polyline(poly: np.ndarray, n_nodes: int) -> np.ndarray:
    """Equal-arclength resampling of a dense polyline (endpoints kept)."""
    seg = np.hypot(*np.diff(poly, axis=0).T)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    target = np.linspace(0.0, arc[-1], n_nodes)
    return np.column_stack([np.interp(target, arc, poly[:, 0]), np.interp(target, arc, poly[:, 1])])


@dataclass
class ChartLayout:
    """Chart extents and resolutions for a multi-chart run."""

    tip_nodes: int = 400
    tip_h0: float = 0.02
    tip_factor: float = 1.2       # tip chart reaches tip_factor * 2 beta/sqrt(1+mu^2) in z
    rot_inner: float = 0.8        # rotated chart starts at rot_inner * beta * scale
    rot_outer: float = 1.3        # rotated chart ends at this ray distance
    rot_per_decade: int = 140
    cap_start: float = 0.8        # cap begins at this ray distance
    cap_nodes: int = 400


@dataclass
class InitialData:
    params: ConeParams
    exps: SpectralExponents
    a: np.ndarray
    t0: float
    rho: float
    beta: float
    Lambda: float
    R: float
    delta: float
    k0: float
    tip: ChartFunction
    rot: ChartFunction
    cap: ParametricCurve
    u0: InitialProfile = field(repr=False)
    outer: OuterCap = field(repr=False)
    layout: ChartLayout = field(default_factory=ChartLayout)
    overlap_error: dict = field(default_factory=dict)


def tip_chart_from_profile(u0: InitialProfile, z: np.ndarray) -> np.ndarray:
    """Type-II tip-chart values w(z) = eta(S z)/S of the initial curve.

    Points whose ray abscissa lies in the pure-profile zone use psi_hat_k exactly;
    the others are found by inverting xi(x) on the rotated closed form.
    """
    params = u0.params
    mu = params.mu
    s = math.sqrt(1 + mu * mu)
    S = u0.scale
    hat = u0.rot.hat
    out = np.empty_like(z)
    ph = hat.evaluate(z)[0]
    along = (z + mu * ph) / s
    pure = along <= u0.beta / 2 * 0.999
    if not u0.include_packet:
        pure[:] = True
    out[pure] = ph[pure]
    if np.any(~pure):
        xi_t = S * z[~pure]
        x = S * along[~pure]
        for _ in range(50):
            u, u1, _ = u0(x)
            f = (x - mu * u) / s - xi_t
            step = f * s / (1 - mu * u1)
            x = x - step
            if np.all(np.abs(step) <= 1e-15 * x):
                break
        u, _, _ = u0(x)
        out[~pure] = (mu * x + u) / s / S
    return out


def assemble_initial_curve(params: ConeParams, exps: SpectralExponents, a, t0: float, rho: float, beta: float,
                           delta: float, profile: ProfileSolution, Lambda: float = 1e4, R: float = 10.0,
                           layout: ChartLayout | None = None, include_packet: bool = True) -> InitialData:
    """Sample the initial curve on the tip, rotated and outer-cap charts and cross-check overlaps."""
    layout = layout or ChartLayout()
    u0 = build_initial_u(params, exps, a, t0, rho, beta, profile, include_packet)
    cap = build_outer_cap(params, delta)
    mu = params.mu
    s = math.sqrt(1 + mu * mu)
    S = u0.scale
    if layout.rot_outer >= 2 - delta * s or layout.cap_start >= layout.rot_outer:
        raise OverlapMismatch("rotated chart and cap do not overlap inside the straight piece")

    z_max = layout.tip_factor * 2 * beta / s
    z = tip_mesh(z_max, layout.tip_nodes, layout.tip_h0)
    w = tip_chart_from_profile(u0, z)
    wd1, wd2 = derivatives(z, w)
    tip = ChartFunction(TIP, "tau", z, w, wd1, wd2)

    x = log_mesh(layout.rot_inner * beta * S, layout.rot_outer, layout.rot_per_decade)
    u, u1, u2 = u0(x)
    rot = ChartFunction(ROTATED, "t", x, u, u1, u2)

    nodes = resample_polyline(cap.polyline(layout.cap_start), layout.cap_nodes + 1)
    outer = ParametricCurve(nodes[:, 0], nodes[:, 1])

    data = InitialData(params, exps, u0.a, t0, rho, beta, Lambda, R, delta, 1 + u0.a.sum(), tip, rot, outer,
                       u0, cap, layout)
    data.overlap_error = overlap_errors(data)
    if max(data.overlap_error.values()) > 1e-6:
        raise OverlapMismatch(f"chart overlap discrepancies {data.overlap_error}")
    if not polyline_embedded(full_polyline(data)):
        raise OverlapMismatch("assembled profile curve self-intersects")
    return data


def overlap_errors(data: InitialData) -> dict:
    """Max discrepancy between neighbouring charts on their overlaps, in absolute length."""
    params, S = data.params, tip_scale(data.t0, data.exps)
    # tip vs rotated: rotate tip points onto the ray chart and compare with u0
    xi = S * data.tip.mesh
    eta = S * data.tip.values
    xr, ur, _, _ = hat_to_rotated(params, xi, eta)
    sel = (xr >= data.rot.mesh[0]) & (xr <= data.rot.mesh[-1])
    e_tip = float(np.max(np.abs(np.interp(xr[sel], data.rot.mesh, data.rot.values) - ur[sel]))) if np.any(sel) else 0.0
    e_tip_exact = float(np.max(np.abs(data.u0(xr[sel])[0] - ur[sel]))) if np.any(sel) else 0.0
    # cap vs rotated: cap points in rotated coordinates against the closed form
    xc, uc, _, _ = hat_to_rotated(params, data.cap.xi, data.cap.eta)
    sel = (xc <= data.rot.mesh[-1]) & (np.arange(len(xc)) < np.argmax(xc) + 1)
    e_cap = float(np.max(np.abs(data.u0(xc[sel])[0] - uc[sel]))) if np.any(sel) else 0.0
    return {"tip_rotated": e_tip_exact, "tip_rotated_interp": e_tip, "cap_rotated": e_cap}


def full_polyline(data: InitialData) -> np.ndarray:
    """Whole profile curve from the tip on the second axis to (2, 0)."""
    params, S = data.params, tip_scale(data.t0, data.exps)
    tip_pts = np.column_stack([S * data.tip.mesh, S * data.tip.values])
    xi, eta, _, _ = rotated_to_hat(params, data.rot.mesh, data.rot.values)
    last_tip = tip_pts[-1, 0]
    keep = xi > last_tip
    rot_pts = np.column_stack([xi[keep], eta[keep]])
    cap_pts = data.cap.points
    xc, _, _, _ = hat_to_rotated(params, cap_pts[:, 0], cap_pts[:, 1])
    cap_pts = cap_pts[xc > data.rot.mesh[-1]]
    return np.vstack([tip_pts, rot_pts, cap_pts])


def polyline_embedded(poly: np.ndarray) -> bool:
    """True when no two non-adjacent segments of the polyline intersect."""
    p, q = poly[:-1], poly[1:]
    n = len(p)
    d = q - p
    for i in range(n - 2):
        a, b = p[i], d[i]
        c, e = p[i + 2:], d[i + 2:]
        den = b[0] * e[:, 1] - b[1] * e[:, 0]
        ok = np.abs(den) > 1e-300
        ac = c - a
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (ac[:, 0] * e[:, 1] - ac[:, 1] * e[:, 0]) / den
            v = (ac[:, 0] * b[1] - ac[:, 1] * b[0]) / den
        hit = ok & (t >= 0) & (t <= 1) & (v >= 0) & (v <= 1)
        if np.any(hit):
            return False
    return True


def admissibility_bound(x, t: float, exps: SpectralExponents, params: ConeParams, Lambda: float):
    return Lambda * ((-t) ** exps.l * x ** params.alpha + x ** (2 * exps.lambda_l + 1))


def admissibility_check(x, u, u1, u2, t: float, params: ConeParams, exps: SpectralExponents,
                        Lambda: float, beta: float, rho: float) -> dict:
    """x^i |d^i u| < Lambda((-t)^l x^alpha + x^{2 lambda_l + 1}) on [beta(-t)^{1/2+sigma_l}, rho]."""
    x = np.asarray(x, dtype=float)
    lo = beta * tip_scale(t, exps)
    sel = (x >= lo) & (x <= rho)
    report = {"t": t, "window": (lo, rho), "n_points": int(sel.sum())}
    if not np.any(sel):
        report.update(passed=True, per_order={0: True, 1: True, 2: True}, worst_margin=float("inf"), worst_x=None)
        return report
    xs = x[sel]
    bound = admissibility_bound(xs, t, exps, params, Lambda)
    per, worst, where = {}, float("inf"), None
    for i, d in enumerate((u, u1, u2)):
        val = xs ** i * np.abs(np.asarray(d, dtype=float)[sel])
        margin = bound / np.maximum(val, 1e-300)
        per[i] = bool(np.all(val < bound))
        j = int(np.argmin(margin))
        if margin[j] < worst:
            worst, where = float(margin[j]), float(xs[j])
    report.update(passed=all(per.values()), per_order=per, worst_margin=worst, worst_x=where)
    return report
