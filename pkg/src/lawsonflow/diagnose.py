"""Curvature functionals, rescalings, rate fits, convergence metrics and sub/supersolution residuals."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.optimize import brentq

from .charts import ChartFunction, ParametricCurve, ROTATED, TIP, hat_to_rotated, rotated_to_hat
from .cone_params import ConeParams, SpectralExponents, decay_roots
from .errors import DenominatorBreach, ExponentInfeasible, SpanTooShort, WindowUncovered
from .fd import derivatives
from .profile import ProfileSolution
from .spectral import Q_pointwise, mcf_graph_rhs


# --- graph-chart curvature ---------------------------------------------------------------

def _denominators(x, u, params: ConeParams):
    mu = params.mu
    d1 = x - mu * u
    d2 = mu * x + u
    if np.any(np.asarray(d1) <= 0) or np.any(np.asarray(d2) <= 0):
        raise DenominatorBreach("point left the open first quadrant")
    return d1, d2


def mean_curvature_graph(u, u1, u2, x, params: ConeParams):
    """H of the hypersurface generated by the graph u over the cone ray."""
    u, u1, u2, x = (np.asarray(v, dtype=float) for v in (u, u1, u2, x))
    d1, d2 = _denominators(x, u, params)
    mu, p, q = params.mu, params.p, params.q
    g = 1 + u1 * u1
    return (u2 / g + (p - 1) * (mu + u1) / d1 - (q - 1) * (1 - mu * u1) / d2) / np.sqrt(g)


def PQ_coefficients(xi, params: ConeParams):
    """P(xi), Q(xi) in u_t = u''/(1+u'^2) + P(u/x) u'/x + Q(u/x) u/x^2."""
    mu, n = params.mu, params.n
    den = (1 - mu * xi) * (1 + xi / mu)
    return (n - 2) * (1 + (1 / mu - mu) * xi) / den, (n - 2) / den


def mean_curvature_PQ(u, u1, u2, x, params: ConeParams):
    u, u1, u2, x = (np.asarray(v, dtype=float) for v in (u, u1, u2, x))
    _denominators(x, u, params)
    P, Q = PQ_coefficients(u / x, params)
    g = 1 + u1 * u1
    return (u2 / g + P * u1 / x + Q * u / x ** 2) / np.sqrt(g)


def second_fundamental_norm(u, u1, u2, x, params: ConeParams):
    u, u1, u2, x = (np.asarray(v, dtype=float) for v in (u, u1, u2, x))
    d1, d2 = _denominators(x, u, params)
    mu, p, q = params.mu, params.p, params.q
    g = 1 + u1 * u1
    a2 = ((u2 / g) ** 2 + (p - 1) * ((mu + u1) / d1) ** 2 + (q - 1) * ((1 - mu * u1) / d2) ** 2) / g
    return np.sqrt(a2)


def tip_curvatures(z, w, w1, w2, params: ConeParams):
    """(H, |A|) of the graph eta = w(xi) over the first axis; z = 0 uses the even limit."""
    z, w, w1, w2 = (np.asarray(v, dtype=float) for v in (z, w, w1, w2))
    p, q = params.p, params.q
    if np.any(w <= 0):
        raise DenominatorBreach("tip chart reached the first axis")
    g = np.sqrt(1 + w1 * w1)
    kc = w2 / g ** 3
    with np.errstate(divide="ignore", invalid="ignore"):
        kp = np.where(z > 0, w1 / (z * g), w2)
    kq = 1.0 / (w * g)
    H = kc + (p - 1) * kp - (q - 1) * kq
    A = np.sqrt(kc * kc + (p - 1) * kp * kp + (q - 1) * kq * kq)
    return H, A


def parametric_geometry(xi, eta, start_axis=None, end_axis=None):
    """Signed curvature, left normal and the ratios N_xi/xi, N_eta/eta on a planar polyline.

    Axis endpoints use the mirror node and the symmetric limits N_xi/xi -> -kappa
    (second axis) and N_eta/eta -> -kappa (first axis).
    """
    X = np.column_stack([np.asarray(xi, float), np.asarray(eta, float)])
    m = len(X)
    hm = np.empty(m)
    hp = np.empty(m)
    seg = np.hypot(*np.diff(X, axis=0).T)
    hm[1:], hp[:-1] = seg, seg
    Xg = np.vstack([X[1] * (-1, 1) if start_axis == "second" else 2 * X[0] - X[1], X,
                    X[-2] * (1, -1) if end_axis == "first" else 2 * X[-1] - X[-2]])
    hm[0] = np.hypot(*(X[0] - Xg[0]))
    hp[-1] = np.hypot(*(Xg[-1] - X[-1]))
    Xm, X0, Xp = Xg[:-2], Xg[1:-1], Xg[2:]
    T = (Xp - Xm) / (hm + hp)[:, None]
    T /= np.linalg.norm(T, axis=1)[:, None]
    N = np.column_stack([-T[:, 1], T[:, 0]])
    Xss = 2 * ((Xp - X0) / hp[:, None] - (X0 - Xm) / hm[:, None]) / (hm + hp)[:, None]
    kappa = np.einsum("ij,ij->i", Xss, N)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = N[:, 0] / X[:, 0]
        b = N[:, 1] / X[:, 1]
    if start_axis == "second":
        a[0] = -kappa[0]
    if end_axis == "first":
        b[-1] = -kappa[-1]
    return kappa, a, b, N


def parametric_curvatures(xi, eta, params: ConeParams, start_axis=None, end_axis=None):
    """(H, |A|, N) on a planar polyline; N is the left normal of the node ordering and
    H = kappa - (p-1) N_xi/xi - (q-1) N_eta/eta is the normal speed along N."""
    kappa, a, b, N = parametric_geometry(xi, eta, start_axis, end_axis)
    p, q = params.p, params.q
    H = kappa - (p - 1) * a - (q - 1) * b
    A = np.sqrt(kappa ** 2 + (p - 1) * a ** 2 + (q - 1) * b ** 2)
    return H, A, N


def reconstructed_sup(x, f):
    """max |f| over nodes and mid-cell quadratic vertices; returns (value, location)."""
    x = np.asarray(x, float)
    f = np.abs(np.asarray(f, float))
    i = int(np.argmax(f))
    best, where = float(f[i]), float(x[i])
    if len(x) >= 3:
        x0, x1, x2 = x[:-2], x[1:-1], x[2:]
        f0, f1, f2 = f[:-2], f[1:-1], f[2:]
        # Newton form of the interpolating quadratic
        d01 = (f1 - f0) / (x1 - x0)
        d12 = (f2 - f1) / (x2 - x1)
        c2 = (d12 - d01) / (x2 - x0)
        c1 = d01 - c2 * (x0 + x1)
        with np.errstate(divide="ignore", invalid="ignore"):
            xv = -c1 / (2 * c2)
        ok = (c2 < 0) & (xv > x0) & (xv < x2)
        if np.any(ok):
            fv = f0[ok] + d01[ok] * (xv[ok] - x0[ok]) + c2[ok] * (xv[ok] - x0[ok]) * (xv[ok] - x1[ok])
            j = int(np.argmax(fv))
            if fv[j] > best:
                best, where = float(fv[j]), float(xv[ok][j])
    return best, where


# --- reports -----------------------------------------------------------------------------

@dataclass
class CurvatureReport:
    t: float
    sup_A: float
    sup_H: float
    typeII_A: float
    weighted_H: dict = field(default_factory=dict)
    loc_A: float = float("nan")
    loc_H: float = float("nan")


def chart_curvature_samples(state):
    """Per chart: (monotone parameter, radius |x|, H, |A|) in unscaled units."""
    params = state.params
    out = []
    if state.tip is not None:
        S = state.scale
        c = state.tip
        d1, d2 = (c.d1, c.d2) if c.d1 is not None else derivatives(c.mesh, c.values)
        d1 = d1.copy()
        d1[0] = 0.0
        H, A = tip_curvatures(c.mesh, c.values, d1, d2, params)
        out.append((S * c.mesh, S * np.hypot(c.mesh, c.values), H / S, A / S))
    if state.rot is not None:
        c = state.rot
        d1, d2 = derivatives(c.mesh, c.values)
        H = mean_curvature_graph(c.values, d1, d2, c.mesh, params)
        A = second_fundamental_norm(c.values, d1, d2, c.mesh, params)
        out.append((c.mesh, np.hypot(c.mesh, c.values), H, A))
    if state.cap is not None:
        c = state.cap
        H, A, _ = parametric_curvatures(c.xi, c.eta, params, c.start_axis, c.end_axis)
        arc = np.concatenate([[0.0], np.cumsum(c.segment_lengths())])
        out.append((arc, np.hypot(c.xi, c.eta), H, A))
    return out


def curvature_report(state, weights=()) -> CurvatureReport:
    """sup |A| and sup |H| over all charts; locations are distances from the origin."""
    sup_A = sup_H = -1.0
    loc_A = loc_H = float("nan")
    for par, r, H, A in chart_curvature_samples(state):
        va, la = reconstructed_sup(par, A)
        vh, lh = reconstructed_sup(par, H)
        if va > sup_A:
            sup_A, loc_A = va, float(np.interp(la, par, r))
        if vh > sup_H:
            sup_H, loc_H = vh, float(np.interp(lh, par, r))
    rep = CurvatureReport(state.t, sup_A, sup_H, state.scale * sup_A, {}, loc_A, loc_H)
    for a in weights:
        rep.weighted_H[a] = weighted_H_sup(state, a)
    return rep


def feasible_exponent_max(alpha: float, lambda_l: float) -> float:
    """Largest a with lambda_l (1 - a/(1-alpha)) - 1/2 >= 0."""
    return (1 - alpha) * (1 - 1 / (2 * lambda_l))


def bounded_H_criterion(n: int, l: int) -> bool:
    """True when some weight exponent a in (-alpha, 1-alpha) is feasible."""
    alpha, _ = decay_roots(n)
    lam = -(1 - alpha) / 2 + l
    return feasible_exponent_max(alpha, lam) > -alpha


def weighted_H_sup(state, a: float) -> float:
    """sup over |x| <= sqrt(-t) of (1 + |x|/(-t)^{1/2+sigma_l})^a |H|."""
    alpha = state.params.alpha
    lam = state.exps.lambda_l
    if not (-alpha < a < 1 - alpha) or lam * (1 - a / (1 - alpha)) - 0.5 < 0:
        warnings.warn(ExponentInfeasible(f"weight exponent {a} is not feasible"), stacklevel=2)
    S = state.scale
    rmax = math.sqrt(-state.t)
    best = 0.0
    for _, r, H, _ in chart_curvature_samples(state):
        sel = r <= rmax
        if np.any(sel):
            best = max(best, float(np.max((1 + r[sel] / S) ** a * np.abs(H[sel]))))
    return best


def default_weight(params: ConeParams, exps: SpectralExponents) -> float:
    """Midpoint of the feasible exponent range (or of (-alpha, 1-alpha) when it is empty)."""
    hi = min(1 - params.alpha, feasible_exponent_max(params.alpha, exps.lambda_l))
    lo = -params.alpha
    return 0.5 * (lo + hi) if hi > lo else 0.5 * (lo + 1 - params.alpha)


# --- rescaling -----------------------------------------------------------------------------

def rescale_chart(chart: ChartFunction, t: float, exps: SpectralExponents, mode: str, inverse: bool = False):
    """Parabolic rescaling of a graph chart: type1 by sqrt(-t), type2 by (-t)^{1/2+sigma_l}."""
    if mode == "type1":
        L, frame = math.sqrt(-t), "s"
    elif mode == "type2":
        L, frame = (-t) ** (0.5 + exps.sigma_l), "tau"
    else:
        raise ValueError(f"unknown rescaling mode {mode!r}")
    if inverse:
        L, frame = 1.0 / L, "t"
    d1 = None if chart.d1 is None else chart.d1.copy()
    d2 = None if chart.d2 is None else chart.d2 * L
    return ChartFunction(chart.chart, frame, chart.mesh / L, chart.values / L, d1, d2)


def rescale_state(state, mode: str) -> dict:
    """Rescaled copies of the graph charts of a state (the tip chart is stored type-II already)."""
    out = {}
    if state.rot is not None:
        out[ROTATED] = rescale_chart(state.rot, state.t, state.exps, mode)
    if state.tip is not None:
        tip = state.tip
        if mode == "type2":
            out[TIP] = tip.copy()
        else:
            S = state.scale
            L = math.sqrt(-state.t)
            f = S / L
            out[TIP] = ChartFunction(TIP, "s", tip.mesh * f, tip.values * f, None if tip.d1 is None else tip.d1.copy(),
                                     None if tip.d2 is None else tip.d2 / f)
    return out


# --- rates and convergence -----------------------------------------------------------------

@dataclass
class RateFit:
    slope: float
    band: float
    target: float
    deviation: float
    regime: str
    n_points: int


def blowup_rate_fit(t, sup_A, exps: SpectralExponents | None = None, decades: float = 1.0) -> RateFit:
    """Least-squares slope of log sup|A| against log(-t) over the last `decades` of (-t)."""
    t = np.asarray(t, float)
    A = np.asarray(sup_A, float)
    if len(t) < 10:
        raise SpanTooShort(f"need at least 10 snapshots, got {len(t)}")
    lt = np.log10(-t)
    if lt.max() - lt.min() < decades - 1e-9:
        raise SpanTooShort(f"snapshots span {lt.max() - lt.min():.3f} decades < {decades}")
    sel = lt <= lt.min() + decades
    if sel.sum() < 10:
        raise SpanTooShort("fewer than 10 snapshots in the fitted window")
    res = stats.linregress(np.log(-t[sel]), np.log(A[sel]))
    target = -(0.5 + exps.sigma_l) if exps is not None else float("nan")
    band = 2 * float(res.stderr) if np.isfinite(res.stderr) else 0.0
    regime = "type I" if abs(res.slope + 0.5) <= max(band, 0.05) else ("type II" if res.slope < -0.5 else "sub type I")
    return RateFit(float(res.slope), band, target, float(res.slope - target), regime, int(sel.sum()))


def convergence_metric(state, target: str, window, profile: ProfileSolution | None = None):
    """(C0, C1) sup distance of the rescaled state to the cone (type-I) or to psi_hat_k (type-II)."""
    lo, hi = window
    if target == "profile":
        tip = state.tip
        if tip is None or hi > tip.mesh[-1] or lo < tip.mesh[0]:
            raise WindowUncovered("tip chart does not cover the window")
        sel = (tip.mesh >= lo) & (tip.mesh <= hi)
        z = tip.mesh[sel]
        d1 = tip.d1 if tip.d1 is not None else derivatives(tip.mesh, tip.values)[0]
        ph, ph1, _ = profile.evaluate(z)
        return float(np.max(np.abs(tip.values[sel] - ph))), float(np.max(np.abs(d1[sel] - ph1)))
    if target == "cone":
        if state.type1 is not None:
            c = state.type1
        else:
            c = rescale_chart(state.rot, state.t, state.exps, "type1")
        if hi > c.mesh[-1] or lo < c.mesh[0]:
            raise WindowUncovered("type-I chart does not cover the window")
        sel = (c.mesh >= lo) & (c.mesh <= hi)
        d1 = derivatives(c.mesh, c.values)[0]
        return float(np.max(np.abs(c.values[sel]))), float(np.max(np.abs(d1[sel])))
    raise ValueError(f"unknown target {target!r}")


def sandwich_report(tip: ChartFunction, lower: ProfileSolution, upper: ProfileSolution,
                    z_max: float | None = None) -> dict:
    """Check lower <= w <= upper on the tip chart up to z_max; margins are the minimum gaps."""
    sel = tip.mesh <= (tip.mesh[-1] if z_max is None else z_max)
    z = tip.mesh[sel]
    lo = lower.evaluate(z)[0]
    hi = upper.evaluate(z)[0]
    gap_lo = float(np.min(tip.values[sel] - lo))
    gap_hi = float(np.min(hi - tip.values[sel]))
    return {"inside": gap_lo >= 0 and gap_hi >= 0, "gap_lower": gap_lo, "gap_upper": gap_hi}


# --- Jacobi potential ------------------------------------------------------------------------

def jacobi_potential(params: ConeParams, target: str, r, profile: ProfileSolution | None = None):
    """|A|^2 at distance r from the origin on the cone or on the minimal hypersurface of `profile`."""
    r = np.atleast_1d(np.asarray(r, float))
    if target == "cone":
        return (params.n - 2) / r ** 2
    if target != "profile" or profile is None:
        raise ValueError("profile target needs a ProfileSolution")
    out = np.empty_like(r)
    top = profile.mesh[-1]
    for i, ri in enumerate(r):
        f = lambda z: math.hypot(z, float(profile.evaluate(np.array([z]))[0][0])) - ri
        if f(0.0) >= 0:
            z = 0.0
        else:
            z = brentq(f, 0.0, min(ri, top), xtol=1e-14)
        w, w1, w2 = (v[0] for v in profile.evaluate(np.array([z])))
        _, A = tip_curvatures(np.array([z]), np.array([w]), np.array([w1]), np.array([w2]), params)
        out[i] = A[0] ** 2
    return out


# --- sub/supersolutions ----------------------------------------------------------------------

@dataclass(frozen=True)
class SubSuperSolution:
    """u = C0 (x^{2 lambda_l + 1} - C (-t) x^{2 lambda_l - 1})."""

    sign: str
    C0: float
    C: float
    lambda_l: float
    M1: float
    M2: float

    def terms(self, x, t):
        A = 2 * self.lambda_l + 1
        T = -t
        u = self.C0 * (x ** A - self.C * T * x ** (A - 2))
        u1 = self.C0 * (A * x ** (A - 1) - self.C * T * (A - 2) * x ** (A - 3))
        u2 = self.C0 * (A * (A - 1) * x ** (A - 2) - self.C * T * (A - 2) * (A - 3) * x ** (A - 4))
        ut = self.C0 * self.C * x ** (A - 2)
        return u, u1, u2, ut


def subsuper_constants(params: ConeParams, lambda_l: float):
    n = params.n
    M1 = (2 * lambda_l + 1) * (2 * lambda_l) + (n - 2) * (2 * lambda_l + 2)
    M2 = (2 * lambda_l - 1) * (2 * lambda_l - 2) + (n - 2) * (2 * lambda_l)
    return M1, M2


def make_subsuper(params: ConeParams, exps: SpectralExponents, sign: str, C0: float) -> SubSuperSolution:
    """sign '+' uses C = 2 M1, sign '-' uses C = 0."""
    M1, M2 = subsuper_constants(params, exps.lambda_l)
    if sign not in "+-" or len(sign) != 1:
        raise ValueError("sign must be '+' or '-'")
    return SubSuperSolution(sign, C0, 2 * M1 if sign == "+" else 0.0, exps.lambda_l, M1, M2)


def subsuper_grid(t0: float, t_hat: float, R: float, rho: float, nt: int = 100, nx: int = 100):
    """Grid over {t0 < t < t_hat, 2R sqrt(-t) < x < rho}, interior nodes only."""
    if not t0 < t_hat < 0:
        raise ValueError("need t0 < t_hat < 0")
    if 2 * R * math.sqrt(-t0) >= rho:
        raise ValueError("region is empty: 2R sqrt(-t0) >= rho")
    ts = np.linspace(t0, t_hat, nt + 2)[1:-1]
    frac = np.linspace(0, 1, nx + 2)[1:-1]
    T, F = np.meshgrid(ts, frac, indexing="ij")
    lo = 2 * R * np.sqrt(-T)
    X = lo + F * (rho - lo)
    return T, X


def subsuper_residual(sol: SubSuperSolution, params: ConeParams, T, X) -> dict:
    """(d_t - L~) u - Q u on the grid together with its sign pattern.

    L~ u = u'' + (n-2)/x u' + (n-2)/x^2 u is the Jacobi operator of the cone and
    L~ u + Q u is the graph MCF speed, so the residual is u_t minus that speed.
    """
    u, u1, u2, ut = sol.terms(X, T)
    n = params.n
    lin = ut - (u2 + (n - 2) / X * u1 + (n - 2) / X ** 2 * u)
    full = ut - mcf_graph_rhs(X, u, u1, u2, params)
    Qu = Q_pointwise(X, u, u1, u2, params)
    bound = abs(sol.C0) * sol.M1 * X ** (2 * sol.lambda_l - 1)
    want = np.sign(sol.C0) * (1 if sol.sign == "+" else -1)
    return {
        "residual": full,
        "linear": lin,
        "Q": Qu,
        "expected_sign": int(want),
        "sign_ok": bool(np.all(want * full >= 0)),
        "linear_margin_ok": bool(np.all(want * lin >= bound * (1 - 1e-12))),
        "min_signed": float(np.min(want * full)),
        "max_Q_ratio": float(np.max(np.abs(Qu) / bound)),
    }
