"""Semi-implicit time stepping on the tip, rotated and type-I graph charts, a parametric
evolver for the outer cap, coupled runs, the low-mode map Phi and the shooting on a."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline

from .charts import ChartFunction, ParametricCurve, ROTATED, TIP, log_mesh
from .cone_params import ConeParams, SpectralExponents, derive_cone_params, spectral_exponents
from .config import RunConfig
from .diagnose import (PQ_coefficients, curvature_report, default_weight, parametric_curvatures,
                       parametric_geometry, sandwich_report, tip_curvatures)
from .errors import (ChartCoverage, ConeBreach, CurveDegenerate, LawsonFlowError, NumericalError,
                     RootFindStall, TipCollapse)
from .fd import derivatives, solve_tridiagonal, three_point_weights
from .initdata import (ChartLayout, InitialData, admissibility_check, assemble_initial_curve, cutoff_eta,
                       tip_scale)
from .profile import ProfileSolution, minimal_profile, normalize_profile
from .specfn import normalization_c
from .spectral import eigenpairs


@dataclass
class FlowState:
    params: ConeParams
    exps: SpectralExponents
    t: float
    tip: ChartFunction | None = None
    rot: ChartFunction | None = None
    cap: ParametricCurve | None = None
    type1: ChartFunction | None = None
    beta: float = 20.0
    rho: float = 0.05
    layout: ChartLayout = field(default_factory=ChartLayout)

    @property
    def s(self) -> float:
        return -math.log(-self.t)

    @property
    def tau(self) -> float:
        return tau_of_t(self.t, self.exps)

    @property
    def scale(self) -> float:
        return tip_scale(self.t, self.exps)

    def copy(self) -> "FlowState":
        return replace(self, tip=None if self.tip is None else self.tip.copy(),
                       rot=None if self.rot is None else self.rot.copy(),
                       cap=None if self.cap is None else self.cap.copy(),
                       type1=None if self.type1 is None else self.type1.copy())


def tau_of_t(t: float, exps: SpectralExponents) -> float:
    return (-t) ** (-2 * exps.sigma_l) / (2 * exps.sigma_l)


def t_of_tau(tau: float, exps: SpectralExponents) -> float:
    return -((2 * exps.sigma_l * tau) ** (-1 / (2 * exps.sigma_l)))


def state_from_initial(data: InitialData) -> FlowState:
    tip = data.tip.copy()
    tip.d1, tip.d2 = tip_derivatives(tip.mesh, tip.values)
    return FlowState(data.params, data.exps, data.t0, tip, data.rot.copy(), data.cap.copy(),
                     beta=data.beta, rho=data.rho, layout=data.layout)


# --- graph charts --------------------------------------------------------------------------

def _check_cone(x, f, params: ConeParams):
    bound = min(params.mu, 1 / params.mu)
    r = np.max(np.abs(f / x))
    if not np.isfinite(r) or r >= bound:
        raise ConeBreach(f"|u/x| reached {r:.3g} >= {bound:.3g}")


def semidiscrete_rhs(x, f, params: ConeParams, drift: float = 0.0):
    """Interior right side of the three-point semi-discretization (all terms at one level)."""
    (a1, b1, c1), (a2, b2, c2) = three_point_weights(x)
    d1 = a1 * f[:-2] + b1 * f[1:-1] + c1 * f[2:]
    d2 = a2 * f[:-2] + b2 * f[1:-1] + c2 * f[2:]
    xi, fi = x[1:-1], f[1:-1]
    P, Q = PQ_coefficients(fi / xi, params)
    return d2 / (1 + d1 * d1) + P * d1 / xi + Q * fi / xi ** 2 + drift * (fi - xi * d1)


def graph_step(x, f, dt: float, params: ConeParams, left: float, right: float, drift: float = 0.0):
    """Backward-Euler step with coefficients 1/(1+f'^2), P(f/x), Q(f/x) frozen at the old level.

    Solves f_t = a f'' + (P/x - drift x) f' + (Q/x^2 + drift) f with Dirichlet ends.
    """
    x = np.asarray(x, float)
    f = np.asarray(f, float)
    _check_cone(x, f, params)
    (a1, b1, c1), (a2, b2, c2) = three_point_weights(x)
    d1 = a1 * f[:-2] + b1 * f[1:-1] + c1 * f[2:]
    xi = x[1:-1]
    P, Q = PQ_coefficients(f[1:-1] / xi, params)
    a = 1 / (1 + d1 * d1)
    b = P / xi - drift * xi
    c = Q / xi ** 2 + drift
    n = len(x)
    lower = np.zeros(n)
    diag = np.ones(n)
    upper = np.zeros(n)
    lower[1:-1] = -dt * (a * a2 + b * a1)
    diag[1:-1] = 1 - dt * (a * b2 + b * b1 + c)
    upper[1:-1] = -dt * (a * c2 + b * c1)
    rhs = f.copy()
    rhs[0], rhs[-1] = left, right
    out = solve_tridiagonal(lower, diag, upper, rhs)
    _check_cone(x, out, params)
    return out


def step_unrescaled(state: FlowState, dt: float, bc=None) -> FlowState:
    """One semi-implicit step of the rotated-chart graph flow in t."""
    c = state.rot
    left, right = bc if bc is not None else (c.values[0], c.values[-1])
    new = state.copy()
    vals = graph_step(c.mesh, c.values, dt, state.params, left, right)
    new.rot = ChartFunction(ROTATED, "t", c.mesh, vals, *derivatives(c.mesh, vals))
    new.t = state.t + dt
    return new


def step_type1(state: FlowState, ds: float, bc=None) -> FlowState:
    """One semi-implicit step of the type-I rescaled flow in s (drift (v - y v')/2 implicit)."""
    c = state.type1
    left, right = bc if bc is not None else (c.values[0], c.values[-1])
    new = state.copy()
    vals = graph_step(c.mesh, c.values, ds, state.params, left, right, drift=0.5)
    new.type1 = ChartFunction(c.chart, "s", c.mesh, vals, *derivatives(c.mesh, vals))
    new.t = -math.exp(-(state.s + ds))
    return new


def tip_derivatives(z, w):
    """First and second derivatives with the even extension at z = 0."""
    d1, d2 = derivatives(z, w)
    d1[0] = 0.0
    d2[0] = 2 * (w[1] - w[0]) / z[1] ** 2
    return d1, d2


def tip_drift(tau: float, exps: SpectralExponents) -> float:
    return (0.5 + exps.sigma_l) / (2 * exps.sigma_l * tau)


def tip_step(z, w, dtau: float, params: ConeParams, c: float, right: float):
    """Backward-Euler step of w_tau = a w'' + (p-1) w'/z - (q-1)/w + c (w - z w').

    The node z = 0 uses the radial Laplacian limit p w''(0) through the even ghost node;
    1/w is linearized about the old level.
    """
    p, q = params.p, params.q
    if w[0] <= 0:
        raise TipCollapse("tip height reached zero")
    (a1, b1, c1), (a2, b2, c2) = three_point_weights(z)
    d1 = a1 * w[:-2] + b1 * w[1:-1] + c1 * w[2:]
    zi = z[1:-1]
    a = 1 / (1 + d1 * d1)
    b = (p - 1) / zi - c * zi
    e = c + (q - 1) / w ** 2
    n = len(z)
    lower = np.zeros(n)
    diag = np.ones(n)
    upper = np.zeros(n)
    lower[1:-1] = -dtau * (a * a2 + b * a1)
    diag[1:-1] = 1 - dtau * (a * b2 + b * b1 + e[1:-1])
    upper[1:-1] = -dtau * (a * c2 + b * c1)
    k0 = 2 * p / z[1] ** 2
    diag[0] = 1 + dtau * (k0 - e[0])
    upper[0] = -dtau * k0
    rhs = w - dtau * 2 * (q - 1) / w
    rhs[-1] = right
    out = solve_tridiagonal(lower, diag, upper, rhs)
    if out[0] <= 0:
        raise TipCollapse("tip height reached zero")
    return out


def step_type2(state: FlowState, dtau: float, bc=None) -> FlowState:
    c = state.tip
    right = bc if bc is not None else c.values[-1]
    tau_new = state.tau + dtau
    vals = tip_step(c.mesh, c.values, dtau, state.params, tip_drift(tau_new, state.exps), right)
    new = state.copy()
    new.tip = ChartFunction(TIP, "tau", c.mesh, vals, *tip_derivatives(c.mesh, vals))
    new.t = t_of_tau(tau_new, state.exps)
    return new


# --- outer parametric cap -----------------------------------------------------------------

def calibrate_orientation(params: ConeParams, nodes: int = 200) -> int:
    """Compare the parametric normal speed with the graph formula on a circle of radius 1.

    The polyline runs from the second axis to the first axis, the ordering used by the cap.
    Returns +1 when X_t = H N with N the left normal reproduces the graph flow.
    """
    th = np.linspace(math.pi / 2, 0.0, nodes)
    H, _, N = parametric_curvatures(np.cos(th), np.sin(th), params, "second", "first")
    m = nodes // 2
    z = np.array([math.cos(th[m])])
    w = np.sqrt(1 - z ** 2)
    Hg, _ = tip_curvatures(z, w, -z / w, -1 / w ** 3, params)
    # graph normal (-w', 1)/sqrt(1+w'^2) is the outward radial direction here
    graph_normal = np.array([math.cos(th[m]), math.sin(th[m])])
    sign = int(np.sign(np.dot(N[m], graph_normal)))
    if abs(sign * H[m] - Hg[0]) > 1e-3 * abs(Hg[0]):
        raise CurveDegenerate("parametric normal speed disagrees with the graph formula")
    return sign


def _redistribute(X: np.ndarray) -> np.ndarray:
    arc = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(X, axis=0).T))])
    sp = CubicSpline(arc, X, axis=0)
    return sp(np.linspace(0.0, arc[-1], len(X)))


def cap_substep(X: np.ndarray, dt: float, params: ConeParams, start_axis, end_axis, left=None):
    """Backward Euler for X_ss (arclength weights, lagged) plus explicit lower-order terms."""
    p, q = params.p, params.q
    m = len(X)
    seg = np.hypot(*np.diff(X, axis=0).T)
    hm, hp = seg[:-1], seg[1:]
    wm = 2 / (hm * (hm + hp))
    wp = 2 / (hp * (hm + hp))
    kappa, a, b, N = parametric_geometry(X[:, 0], X[:, 1], start_axis, end_axis)
    V = -((p - 1) * a + (q - 1) * b)[:, None] * N
    out = np.empty_like(X)
    for k in range(2):
        lower = np.zeros(m)
        diag = np.ones(m)
        upper = np.zeros(m)
        lower[1:-1] = -dt * wm
        diag[1:-1] = 1 + dt * (wm + wp)
        upper[1:-1] = -dt * wp
        rhs = X[:, k] + dt * V[:, k]
        if start_axis == "second":
            h = seg[0]
            if k == 0:
                rhs[0] = 0.0
            else:
                diag[0] = 1 + dt * 2 * p / h ** 2
                upper[0] = -dt * 2 * p / h ** 2
                rhs[0] = X[0, 1] - dt * (q - 1) / X[0, 1]
        else:
            rhs[0] = X[0, k] if left is None else left[k]
        if end_axis == "first":
            h = seg[-1]
            if k == 1:
                rhs[-1] = 0.0
            else:
                diag[-1] = 1 + dt * 2 * q / h ** 2
                lower[-1] = -dt * 2 * q / h ** 2
                rhs[-1] = X[-1, 0] - dt * (p - 1) / X[-1, 0]
        else:
            rhs[-1] = X[-1, k]
        out[:, k] = solve_tridiagonal(lower, diag, upper, rhs)
    return out


def cap_stable_dt(X: np.ndarray, params: ConeParams, cfl: float = 0.4) -> float:
    h = np.min(np.hypot(*np.diff(X, axis=0).T))
    return cfl * h * h / (params.n - 2)


def step_outer(state: FlowState, dt: float, left=None) -> FlowState:
    """Advance the parametric cap by dt (substeps at the explicit limit, redistribution as needed)."""
    c = state.cap
    X = c.points
    done = 0.0
    while done < dt:
        h = min(cap_stable_dt(X, state.params), dt - done)
        X = cap_substep(X, h, state.params, c.start_axis, c.end_axis, left)
        done += h
        seg = np.hypot(*np.diff(X, axis=0).T)
        if np.any(seg <= 1e-3 * seg.mean()) or np.any(X[:, 0] < -1e-12) or np.any(X[:, 1] < -1e-12):
            raise CurveDegenerate("cap nodes collided or left the quadrant")
        if seg.max() > 1.5 * seg.min():
            X = _redistribute(X)
            if c.start_axis == "second":
                X[0, 0] = 0.0
            if c.end_axis == "first":
                X[-1, 1] = 0.0
    new = state.copy()
    new.cap = replace(c, xi=X[:, 0].copy(), eta=X[:, 1].copy())
    new.t = state.t + dt
    return new


# --- chart coupling ------------------------------------------------------------------------

def _newton(g, dg, x0, tol=1e-14, it=60):
    x = np.asarray(x0, float).copy()
    for _ in range(it):
        step = g(x) / dg(x)
        x = x - step
        if np.all(np.abs(step) <= tol * np.maximum(np.abs(x), 1e-300)):
            break
    return x


def tip_to_rotated(state: FlowState, x_target):
    """u at rotated abscissae x_target read off the tip chart."""
    mu = state.params.mu
    s = math.sqrt(1 + mu * mu)
    S = state.scale
    sp = CubicSpline(state.tip.mesh, state.tip.values)
    dsp = sp.derivative()
    xt = np.atleast_1d(np.asarray(x_target, float))
    top = state.tip.mesh[-1]
    z = _newton(lambda z: S * (z + mu * sp(z)) / s - xt, lambda z: S * (1 + mu * dsp(z)) / s, xt / (S * s))
    if np.any(z < 0) or np.any(z > top):
        raise ChartCoverage("tip chart does not reach the requested rotated abscissa")
    return S * (sp(z) - mu * z) / s


def rotated_to_tip(state: FlowState, xi_target):
    """Type-II height w at scaled abscissae read off the rotated chart."""
    mu = state.params.mu
    s = math.sqrt(1 + mu * mu)
    S = state.scale
    c = state.rot
    sp = CubicSpline(c.mesh, c.values)
    dsp = sp.derivative()
    xt = S * np.atleast_1d(np.asarray(xi_target, float))
    x = _newton(lambda x: (x - mu * sp(x)) / s - xt, lambda x: (1 - mu * dsp(x)) / s, s * xt)
    if np.any(x < c.mesh[0]) or np.any(x > c.mesh[-1]):
        raise ChartCoverage("rotated chart does not reach the tip chart edge")
    return (mu * x + sp(x)) / s / S


def cap_to_rotated(state: FlowState, x_target: float) -> float:
    mu = state.params.mu
    s = math.sqrt(1 + mu * mu)
    X = state.cap.points
    x = (X[:, 0] + mu * X[:, 1]) / s
    u = (-mu * X[:, 0] + X[:, 1]) / s
    k = int(np.argmax(np.diff(x) <= 0)) if np.any(np.diff(x) <= 0) else len(x) - 1
    if not x[0] <= x_target <= x[k]:
        raise ChartCoverage("cap does not cover the rotated chart's outer edge")
    return float(CubicSpline(x[:k + 1], u[:k + 1])(x_target))


def rotated_point(state: FlowState, x: float) -> np.ndarray:
    mu = state.params.mu
    s = math.sqrt(1 + mu * mu)
    u = float(CubicSpline(state.rot.mesh, state.rot.values)(x))
    return np.array([(x - mu * u) / s, (mu * x + u) / s])


def extend_rotated(state: FlowState) -> None:
    """Prepend rotated-chart nodes (values from the tip chart) once the inner edge lags the
    target rot_inner * beta * scale by more than 20%."""
    c = state.rot
    target = state.layout.rot_inner * state.beta * state.scale
    if c.mesh[0] <= 1.2 * target:
        return
    full = log_mesh(target, c.mesh[-1], state.layout.rot_per_decade)
    extra = full[full < c.mesh[0] * (1 - 1e-12)]
    if len(extra) == 0:
        return
    vals = tip_to_rotated(state, extra)
    mesh = np.concatenate([extra, c.mesh])
    values = np.concatenate([vals, c.values])
    state.rot = ChartFunction(ROTATED, "t", mesh, values, *derivatives(mesh, values))


def step_coupled(state: FlowState, dt: float) -> FlowState:
    """Advance all charts by dt in t with lagged Dirichlet data exchanged through the overlaps."""
    new_t = state.t + dt
    if new_t >= 0:
        raise ValueError("step crosses the singular time")
    lay = state.layout
    S_new = tip_scale(new_t, state.exps)
    # boundary data from the old level
    tip_right = _tip_edge_value(state, S_new)
    rot_left = float(tip_to_rotated(state, state.rot.mesh[0])[0])
    rot_right = cap_to_rotated(state, state.rot.mesh[-1])
    cap_left = rotated_point(state, lay.cap_start)

    tau_old, tau_new = state.tau, tau_of_t(new_t, state.exps)
    tip_vals = tip_step(state.tip.mesh, state.tip.values, tau_new - tau_old, state.params,
                        tip_drift(tau_new, state.exps), tip_right)
    rot_vals = graph_step(state.rot.mesh, state.rot.values, dt, state.params, rot_left, rot_right)
    capped = step_outer(state, dt, left=cap_left).cap

    new = replace(state, t=new_t,
                  tip=ChartFunction(TIP, "tau", state.tip.mesh, tip_vals, *tip_derivatives(state.tip.mesh, tip_vals)),
                  rot=ChartFunction(ROTATED, "t", state.rot.mesh, rot_vals, *derivatives(state.rot.mesh, rot_vals)),
                  cap=capped)
    extend_rotated(new)
    return new


def _tip_edge_value(state: FlowState, S_new: float) -> float:
    """w at the tip chart's outer edge in the new type-II frame, from the old rotated chart."""
    mu = state.params.mu
    s = math.sqrt(1 + mu * mu)
    c = state.rot
    sp = CubicSpline(c.mesh, c.values)
    dsp = sp.derivative()
    xt = S_new * state.tip.mesh[-1]
    x = _newton(lambda x: (x - mu * sp(x)) / s - xt, lambda x: (1 - mu * dsp(x)) / s, np.array([s * xt]))
    if x[0] < c.mesh[0] or x[0] > c.mesh[-1]:
        raise ChartCoverage("rotated chart does not reach the tip chart edge")
    return float((mu * x[0] + sp(x[0])) / s / S_new)


# --- Phi -----------------------------------------------------------------------------------

def _gl_panels(edges, order=16):
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1, None], edges[1:, None]
    return (0.5 * (b - a) * x + 0.5 * (a + b)).ravel(), (0.5 * (b - a) * w).ravel()


def type1_window(state: FlowState):
    """Support of the Phi cutoffs in y: [beta e^{-sigma s}, rho e^{s/2}]."""
    s = state.s
    return state.beta * math.exp(-state.exps.sigma_l * s), state.rho * math.exp(s / 2)


def cutoff_type1(state: FlowState, y, v):
    s = state.s
    return cutoff_eta(math.exp(state.exps.sigma_l * s) * y - state.beta) * cutoff_eta(state.rho * math.exp(s / 2) - y) * v


def mode_amplitudes(state: FlowState, j_max: int, order: int = 16) -> np.ndarray:
    """<v~, phi_j> for j = 0..j_max, v~ the cutoff type-I rescaling of the rotated chart."""
    params, exps = state.params, state.exps
    lo, hi = type1_window(state)
    y_cut = 14.0 + 2 * math.sqrt(params.n)
    top = min(hi, y_cut)
    L = math.sqrt(-state.t)
    c = state.rot
    if lo * L < c.mesh[0] * (1 - 1e-12) or top * L > c.mesh[-1]:
        raise ChartCoverage("rotated chart does not cover the Phi window")
    e = math.exp(-exps.sigma_l * state.s)
    inner = np.linspace(lo, min(lo + e, top), 9)
    pieces = [inner]
    if top > inner[-1]:
        pieces.append(np.geomspace(inner[-1], top, 60)[1:])
    edges = np.concatenate(pieces)
    if hi < y_cut:
        edges = np.union1d(edges, np.linspace(max(hi - 1, lo), hi, 9))
    y, w = _gl_panels(edges, order)
    sp = CubicSpline(c.mesh, c.values)
    v = sp(L * y) / L
    vt = cutoff_type1(state, y, v) * y ** (params.n - 2) * np.exp(-y * y / 4) * w
    return np.array([float(np.dot(vt, ph(y))) for ph in eigenpairs(params, exps, j_max)])


def compute_phi(state: FlowState, s0: float) -> np.ndarray:
    """Phi = e^{lambda_l s0} (c_j <v~, phi_j>)_{j < l}."""
    exps = state.exps
    amps = mode_amplitudes(state, exps.l - 1)
    cs = np.array([normalization_c(state.params, exps, j) for j in range(exps.l)])
    return math.exp(exps.lambda_l * s0) * cs * amps


# --- runs ----------------------------------------------------------------------------------

def layout_from_config(cfg: RunConfig) -> ChartLayout:
    return ChartLayout(cfg.tip_nodes, cfg.tip_h0, cfg.tip_factor, cfg.rot_inner, cfg.rot_outer,
                       cfg.rot_per_decade, cfg.cap_start, cfg.cap_nodes)


@dataclass
class RunContext:
    cfg: RunConfig
    params: ConeParams
    exps: SpectralExponents
    profile: ProfileSolution
    lower: ProfileSolution
    upper: ProfileSolution
    weight: float


def make_context(cfg: RunConfig) -> RunContext:
    params = derive_cone_params(cfg.p, cfg.q)
    exps = spectral_exponents(params, cfg.l)
    prof = minimal_profile(params, 1.0, cfg.profile_rmax, cfg.profile_rtol)
    lower = normalize_profile(prof, prof.k, 0.5)
    upper = normalize_profile(prof, prof.k, 2.0)
    return RunContext(cfg, params, exps, prof, lower, upper, default_weight(params, exps))


def initial_state(ctx: RunContext, a=None) -> FlowState:
    cfg = ctx.cfg
    a = cfg.a_vector if a is None else np.asarray(a, float)
    data = assemble_initial_curve(ctx.params, ctx.exps, a, cfg.t0, cfg.rho, cfg.beta, cfg.delta, ctx.profile,
                                  cfg.Lambda, cfg.R, layout_from_config(cfg), cfg.include_packet)
    return state_from_initial(data)


def series_columns(l: int) -> list[str]:
    return (["t", "s", "tau", "sup_A", "sup_H", "typeII_A", "weighted_H", "loc_A", "loc_H"]
            + [f"phi_{j}" for j in range(l)] + [f"mode_{l}", "admissible", "adm_margin",
                                                "sandwich_inside", "gap_lower", "gap_upper"])


def snapshot_row(state: FlowState, ctx: RunContext) -> dict:
    cfg = ctx.cfg
    rep = curvature_report(state, (ctx.weight,))
    s0 = -math.log(-cfg.t0)
    amps = mode_amplitudes(state, ctx.exps.l)
    cs = np.array([normalization_c(ctx.params, ctx.exps, j) for j in range(ctx.exps.l)])
    phi = math.exp(ctx.exps.lambda_l * s0) * cs * amps[:-1]
    rot = state.rot
    d1, d2 = derivatives(rot.mesh, rot.values)
    adm = admissibility_check(rot.mesh, rot.values, d1, d2, state.t, ctx.params, ctx.exps, cfg.Lambda,
                              cfg.beta, cfg.rho)
    sw = sandwich_report(state.tip, ctx.lower, ctx.upper, 2 * cfg.beta / math.sqrt(1 + ctx.params.mu ** 2))
    row = {"t": state.t, "s": state.s, "tau": state.tau, "sup_A": rep.sup_A, "sup_H": rep.sup_H,
           "typeII_A": rep.typeII_A, "weighted_H": rep.weighted_H[ctx.weight], "loc_A": rep.loc_A,
           "loc_H": rep.loc_H}
    row.update({f"phi_{j}": float(phi[j]) for j in range(ctx.exps.l)})
    row[f"mode_{ctx.exps.l}"] = float(amps[-1])
    row.update(admissible=int(adm["passed"]), adm_margin=adm["worst_margin"], sandwich_inside=int(sw["inside"]),
               gap_lower=sw["gap_lower"], gap_upper=sw["gap_upper"])
    return row


@dataclass
class FlowRun:
    cfg: RunConfig
    snapshots: list
    series: list
    status: str
    message: str = ""
    steps: int = 0
    error: LawsonFlowError | None = None


def _relative_change(old: FlowState, new: FlowState) -> float:
    """Largest displacement per step measured against the local length scale of each chart."""
    dt_tip = np.max(np.abs(new.tip.values - old.tip.values)) / np.max(np.abs(old.tip.values))
    n = len(old.rot.mesh)
    dt_rot = np.max(np.abs(new.rot.values[-n:] - old.rot.values) / old.rot.mesh)
    return float(max(dt_tip, dt_rot))


def advance(state: FlowState, t_target: float, cfg: RunConfig, counter: list | None = None) -> FlowState:
    """Step the coupled system from state.t to t_target (exactly)."""
    ds = cfg.step_ds
    while state.t < t_target:
        dt = min(ds * (-state.t), t_target - state.t)
        if t_target - (state.t + dt) < 1e-9 * (-t_target):
            dt = t_target - state.t
        while True:
            new = step_coupled(state, dt)
            if not cfg.adaptive or _relative_change(state, new) <= cfg.step_tol or dt <= 1e-6 * ds * (-state.t):
                break
            dt *= 0.5
        state = new
        if counter is not None:
            counter[0] += 1
    state.t = t_target
    return state


def snapshot_times(cfg: RunConfig) -> list[float]:
    s0 = -math.log(-cfg.t0)
    s1 = -math.log(-cfg.t_end)
    k = int(math.floor((s1 - s0) / cfg.snapshot_ds + 1e-9))
    ss = [s0 + cfg.snapshot_ds * i for i in range(1, k + 1)]
    ts = [-math.exp(-s) for s in ss]
    if not ts or ts[-1] < cfg.t_end * (1 + 1e-12):
        ts.append(cfg.t_end)
    return [min(t, cfg.t_end) if i == len(ts) - 1 else t for i, t in enumerate(ts)]


def run_flow(cfg: RunConfig, ctx: RunContext | None = None, a=None, keep_states: bool = True) -> FlowRun:
    """Coupled run from t0 to t_end with snapshots every snapshot_ds in s."""
    ctx = ctx or make_context(cfg)
    calibrate_orientation(ctx.params)
    state = initial_state(ctx, a)
    run = FlowRun(cfg, [state.copy()] if keep_states else [], [snapshot_row(state, ctx)], "running")
    counter = [0]
    try:
        for t_snap in snapshot_times(cfg):
            state = advance(state, t_snap, cfg, counter)
            run.series.append(snapshot_row(state, ctx))
            if keep_states:
                run.snapshots.append(state.copy())
    except NumericalError as exc:
        run.status, run.message, run.error = "failed", f"{type(exc).__name__}: {exc}", exc
        if keep_states:
            run.snapshots.append(state.copy())
    else:
        run.status = "completed"
    run.steps = counter[0]
    return run


# --- shooting ------------------------------------------------------------------------------

def phi_at(cfg: RunConfig, ctx: RunContext, a, t_hat: float) -> np.ndarray:
    """Phi_{t_hat}(a): run from t0 with fixed steps in s and evaluate the cutoff modes."""
    state = initial_state(ctx, a)
    s0 = -math.log(-cfg.t0)
    if t_hat > cfg.t0:
        state = advance(state, t_hat, cfg.replace(adaptive=False))
    return compute_phi(state, s0)


def _phi_worker(args):
    cfg, a, t_hat = args
    return phi_at(cfg, make_context(cfg), a, t_hat)


@dataclass
class ShootResult:
    horizons: list
    a_star: list
    phi_norm: list
    trace: list
    tolerance: float
    converged: bool


def shoot_parameters(cfg: RunConfig, horizons_ds=None, tol: float | None = None, ctx: RunContext | None = None,
                     include_t0: bool = True) -> ShootResult:
    """Damped Broyden iteration for Phi_{t_hat}(a) = 0, continued over t_hat = t0 e^{-ds}.

    The Jacobian is seeded by forward differences at each horizon; columns run in
    parallel when cfg.workers > 1 and are merged in index order.
    """
    ctx = ctx or make_context(cfg)
    l = ctx.exps.l
    s0 = -math.log(-cfg.t0)
    if tol is None:
        tol = cfg.shoot_tol if cfg.shoot_tol > 0 else 1e-6 * math.exp(ctx.exps.lambda_l * s0)
    ds_list = list(cfg.shoot_horizons if horizons_ds is None else horizons_ds)
    if include_t0:
        ds_list = [0.0] + ds_list
    bound = cfg.beta ** (ctx.params.alpha_tilde - ctx.params.alpha)
    a = cfg.a_vector.copy()
    res = ShootResult([], [], [], [], tol, True)
    for dsh in ds_list:
        t_hat = cfg.t0 * math.exp(-dsh)
        F = lambda v: phi_at(cfg, ctx, v, t_hat)
        f = F(a)
        res.trace.append({"t_hat": t_hat, "iter": 0, "a": a.tolist(), "phi_norm": float(np.linalg.norm(f))})
        h = 1e-3 * bound
        cols = [a + h * e for e in np.eye(l)]
        if cfg.workers > 1:
            with ProcessPoolExecutor(cfg.workers) as ex:
                vals = list(ex.map(_phi_worker, [(cfg, c, t_hat) for c in cols]))
        else:
            vals = [F(c) for c in cols]
        J = np.column_stack([(v - f) / h for v in vals])
        it = 0
        while np.linalg.norm(f) >= tol:
            it += 1
            if it > cfg.shoot_max_iter:
                res.converged = False
                raise RootFindStall(f"no convergence at t_hat={t_hat:.6g}; best |Phi|={np.linalg.norm(f):.3e}, "
                                    f"a={a.tolist()}")
            if np.linalg.cond(J) > 1e12:
                raise RootFindStall(f"Jacobian near singular at t_hat={t_hat:.6g}")
            step = -np.linalg.solve(J, f)
            lam = 1.0
            while True:
                trial = a + lam * step
                if np.linalg.norm(trial) < bound:
                    ft = F(trial)
                    if np.linalg.norm(ft) < (1 - 1e-4 * lam) * np.linalg.norm(f):
                        break
                lam *= 0.5
                if lam < 1e-4:
                    raise RootFindStall(f"line search failed at t_hat={t_hat:.6g}; best a={a.tolist()}")
            dx = trial - a
            J = J + np.outer(ft - f - J @ dx, dx) / np.dot(dx, dx)
            a, f = trial, ft
            res.trace.append({"t_hat": t_hat, "iter": it, "a": a.tolist(), "phi_norm": float(np.linalg.norm(f))})
        res.horizons.append(t_hat)
        res.a_star.append(a.copy())
        res.phi_norm.append(float(np.linalg.norm(f)))
    return res
