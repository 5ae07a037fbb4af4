import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from lawsonflow.charts import ChartFunction, ParametricCurve, ROTATED, log_mesh, tip_mesh
from lawsonflow.cone_params import derive_cone_params, spectral_exponents, time_frames
from lawsonflow.diagnose import mean_curvature_graph
from lawsonflow.errors import ChartCoverage, ConeBreach, TipCollapse
from lawsonflow.evolve import (FlowState, calibrate_orientation, cap_substep, compute_phi, graph_step,
                               semidiscrete_rhs, step_outer, step_type1, step_type2, step_unrescaled, t_of_tau,
                               tau_of_t, tip_drift, tip_step)
from lawsonflow.profile import normalize_profile, rotated_profile
from lawsonflow.specfn import normalization_c
from lawsonflow.spectral import eigenpairs


def rot_state(params, exps, x, u, t=-1e-2):
    return FlowState(params, exps, t, rot=ChartFunction(ROTATED, "t", x, u))


def test_cone_is_stationary(p44, e44):
    x = np.geomspace(0.01, 1, 200)
    st0 = rot_state(p44, e44, x, np.zeros_like(x))
    st1 = step_unrescaled(st0, 1e-3)
    assert np.all(st1.rot.values == 0)
    assert np.all(semidiscrete_rhs(x, np.zeros_like(x), p44) == 0)


def psi_defect(prof, m):
    rot = rotated_profile(prof)
    x = np.geomspace(2.0, 50.0, m)
    u = rot.evaluate(x)[0]
    dt = 1e-4
    new = graph_step(x, u, dt, prof.params, u[0], u[-1])
    h = np.max(np.diff(np.log(x)))
    return np.max(np.abs(new - u)) / dt, np.max(np.abs(semidiscrete_rhs(x, u, prof.params))), h


def test_minimal_profile_stationary(prof44):
    r1, F1, h1 = psi_defect(prof44, 200)
    r2, F2, h2 = psi_defect(prof44, 400)
    # the per-step change is the local truncation error of the spatial scheme
    assert r1 <= 10 * F1 and r2 <= 10 * F2
    assert 3.2 < r1 / r2 < 4.8


def test_step_matches_fine_rk_oracle(p44):
    x = np.linspace(0.5, 1.5, 101)
    u0 = 0.02 * np.sin(np.pi * (x - 0.5)) * x
    rhs = lambda t, f: np.concatenate([[0.0], semidiscrete_rhs(x, f, p44), [0.0]])
    errs = []
    for dt in (2e-6, 1e-6):
        ref = solve_ivp(rhs, (0, dt), u0, method="RK45", rtol=1e-12, atol=1e-14).y[:, -1]
        errs.append(np.max(np.abs(graph_step(x, u0, dt, p44, u0[0], u0[-1]) - ref)))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)


def test_cone_breach(p44):
    x = np.linspace(0.5, 1.0, 20)
    with pytest.raises(ConeBreach):
        graph_step(x, 1.1 * x, 1e-3, p44, 0.0, 0.0)


def test_type1_exact_family(prof44, e44):
    # v(y, s) = e^{s/2} lam psi(e^{-s/2} y / lam) is the type-I image of a fixed dilation of the minimal profile
    params = prof44.params
    rot = rotated_profile(prof44)
    lam = 0.05
    s0 = 2.0
    exact = lambda y, s: math.exp(s / 2) * lam * rot.evaluate(math.exp(-s / 2) * y / lam)[0]
    errs = []
    for m, ds in ((200, 4e-3), (400, 2e-3)):
        y = np.geomspace(1.0, 8.0, m)
        st0 = FlowState(params, e44, -math.exp(-s0), type1=ChartFunction(ROTATED, "s", y, exact(y, s0)))
        st1 = step_type1(st0, ds, (exact(y[0], s0 + ds)[0], exact(y[-1], s0 + ds)[0]))
        errs.append(np.max(np.abs(st1.type1.values - exact(y, s0 + ds))))
        assert st1.s == pytest.approx(s0 + ds, abs=1e-13)
    assert errs[1] < errs[0] and errs[0] < 1e-5


def test_frame_commutation(prof44, e44):
    """Step u in t then rescale equals rescale then step v in s, to first order in the step."""
    params = prof44.params
    x = np.linspace(0.05, 0.15, 201)
    u = 0.01 * np.sin(np.pi * (x - 0.05) / 0.1) * x
    t0, dt = -1e-2, 1e-6
    su = graph_step(x, u, dt, params, 0.0, 0.0)
    t1 = t0 + dt
    L0, L1 = math.sqrt(-t0), math.sqrt(-t1)
    y = x / L0
    v = u / L0
    ds = -math.log(-t1) + math.log(-t0)
    sv = graph_step(y, v, ds, params, 0.0, 0.0, drift=0.5)
    # compare on the type-I grid: u(L1 y, t1)/L1 interpolated
    via_u = np.interp(L1 * y, x, su) / L1
    inner = slice(20, -20)
    assert np.max(np.abs(via_u - sv)[inner]) < 5e-3 * np.max(np.abs(v))


def test_tip_symmetry_and_drift_defect(prof44, e44):
    params = prof44.params
    z = tip_mesh(30.0, 400, 0.02)
    w = prof44.evaluate(z)[0]
    tau, dtau = 100.0, 1e-3
    c = tip_drift(tau + dtau, e44)
    drift = c * (w - z * prof44.evaluate(z)[1])
    # the curvature part vanishes on the profile up to truncation, so the c-dependent part is the drift
    new = tip_step(z, w, dtau, params, c, w[-1] + dtau * drift[-1])
    still = tip_step(z, w, dtau, params, 0.0, w[-1])
    rel = np.abs((new - still) / dtau - drift)[:-1] / drift[:-1]
    assert np.max(rel) < 1e-2 and np.all(drift > 0)
    assert c == pytest.approx(tip_drift(2 * (tau + dtau), e44) * 2, rel=1e-2)
    st0 = FlowState(params, e44, t_of_tau(tau, e44), tip=ChartFunction("tip-radial", "tau", z, w))
    st1 = step_type2(st0, dtau)
    assert st1.tip.d1[0] == 0.0
    assert st1.tau == pytest.approx(tau + dtau, rel=1e-12)


def test_tip_collapse(p44):
    z = np.linspace(0, 1, 50)
    with pytest.raises(TipCollapse):
        tip_step(z, np.full(50, -1e-3), 1e-3, p44, 0.0, 1.0)


@settings(max_examples=15, deadline=None)
@given(st.floats(1e-3, 0.02), st.floats(0.0, 0.01))
def test_comparison_principle(gap, amp):
    params = derive_cone_params(4, 4)
    x = np.linspace(0.5, 1.5, 81)
    lo = amp * np.sin(3 * x) * x
    hi = lo + gap * np.sin(np.pi * (x - 0.5)) * x
    for _ in range(50):
        lo = graph_step(x, lo, 2e-4, params, lo[0], lo[-1])
        hi = graph_step(x, hi, 2e-4, params, hi[0], hi[-1])
    assert np.all(hi[1:-1] >= lo[1:-1])


def test_time_frames_consistent(e44):
    t = -3.7e-3
    s, tau = time_frames(t, e44.sigma_l)
    st0 = FlowState(derive_cone_params(4, 4), e44, t)
    assert st0.s == s and st0.tau == pytest.approx(tau, rel=1e-15)
    assert t_of_tau(tau_of_t(t, e44), e44) == pytest.approx(t, rel=1e-14)


def test_orientation_calibration(p44):
    assert calibrate_orientation(p44) == 1


def test_cone_segment_has_zero_speed(p44):
    s = np.linspace(0.3, 0.9, 60)
    X = np.column_stack([s / math.sqrt(2), s / math.sqrt(2)])
    out = cap_substep(X, 1e-4, p44, None, None)
    assert np.max(np.abs(out - X)) < 1e-12


def test_sphere_shrinks(p44):
    th = np.linspace(math.pi / 2, 0, 101)
    cap = ParametricCurve(2 * np.cos(th), 2 * np.sin(th), start_axis="second", end_axis="first")
    st0 = FlowState(p44, spectral_exponents(p44, 4), -1.0, cap=cap)
    t_run = 0.5 * 4 / (2 * (p44.n - 1)) / 4
    st1 = step_outer(st0, t_run)
    R = np.hypot(st1.cap.xi, st1.cap.eta)
    assert np.max(np.abs(R / math.sqrt(4 - 2 * (p44.n - 1) * t_run) - 1)) < 1e-3


def synthetic_state(params, exps, t, f):
    L = math.sqrt(-t)
    x = np.geomspace(1e-9, 1.0, 3000)
    return FlowState(params, exps, t, rot=ChartFunction(ROTATED, "t", x, L * f(x / L)), beta=1e-3, rho=0.05)


def test_phi_of_eigenfunctions():
    params = derive_cone_params(4, 4)
    exps = spectral_exponents(params, 2)
    pairs = eigenpairs(params, exps, 2)
    t = -1e-6
    s0 = -math.log(-t)
    for j in range(2):
        phi = compute_phi(synthetic_state(params, exps, t, pairs[j]), s0)
        expect = np.zeros(2)
        expect[j] = math.exp(exps.lambda_l * s0) * normalization_c(params, exps, j)
        assert np.allclose(phi, expect, rtol=1e-4, atol=1e-4 * abs(expect[j]))
    a = compute_phi(synthetic_state(params, exps, t, lambda y: 2 * pairs[0](y) - pairs[1](y)), s0)
    b = 2 * compute_phi(synthetic_state(params, exps, t, pairs[0]), s0) - compute_phi(
        synthetic_state(params, exps, t, pairs[1]), s0)
    assert np.allclose(a, b, rtol=1e-10)


def test_phi_chart_coverage():
    params = derive_cone_params(4, 4)
    exps = spectral_exponents(params, 2)
    x = np.geomspace(1e-2, 1.0, 100)
    st0 = FlowState(params, exps, -1e-6, rot=ChartFunction(ROTATED, "t", x, 0 * x), beta=1e-3, rho=0.05)
    with pytest.raises(ChartCoverage):
        compute_phi(st0, 13.0)
