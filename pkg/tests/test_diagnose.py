import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lawsonflow.charts import ChartFunction, ROTATED, rotated_to_hat
from lawsonflow.cone_params import derive_cone_params, spectral_exponents
from lawsonflow.diagnose import (PQ_coefficients, blowup_rate_fit, bounded_H_criterion, convergence_metric,
                                 feasible_exponent_max, jacobi_potential, make_subsuper, mean_curvature_PQ,
                                 mean_curvature_graph, parametric_curvatures, reconstructed_sup, rescale_chart,
                                 rescale_state, second_fundamental_norm, subsuper_constants, subsuper_grid,
                                 subsuper_residual, weighted_H_sup)
from lawsonflow.errors import DenominatorBreach, ExponentInfeasible, SpanTooShort, WindowUncovered
from lawsonflow.evolve import FlowState
from lawsonflow.fd import derivatives
from lawsonflow.profile import normalize_profile, rotated_profile

PQ = [(4, 4), (4, 5), (5, 5), (3, 5)]


def graph_inputs():
    return st.tuples(st.sampled_from(PQ), st.floats(0.1, 10), st.floats(-0.3, 0.3), st.floats(-3, 3),
                     st.floats(-30, 30))


def test_cone_is_minimal():
    for p, q in PQ:
        params = derive_cone_params(p, q)
        x = np.geomspace(0.01, 100, 50)
        z = np.zeros_like(x)
        assert np.max(np.abs(mean_curvature_graph(z, z, z, x, params) * x)) < 1e-13
        A = second_fundamental_norm(z, z, z, x, params)
        assert np.allclose(A ** 2, (params.n - 2) / x ** 2, rtol=1e-13)


@settings(max_examples=200, deadline=None)
@given(graph_inputs())
def test_graph_curvature_identities(data):
    (p, q), x, r, u1, u2 = data
    params = derive_cone_params(p, q)
    u = r * x / (1 + params.mu)
    H = mean_curvature_graph(u, u1, u2, x, params)
    assert H == pytest.approx(mean_curvature_PQ(u, u1, u2, x, params), rel=1e-10, abs=1e-10 / x)
    A = second_fundamental_norm(u, u1, u2, x, params)
    assert abs(H) <= math.sqrt(params.n - 1) * A * (1 + 1e-12)
    lam = 3.7
    assert second_fundamental_norm(lam * u, u1, u2 / lam, lam * x, params) == pytest.approx(A / lam, rel=1e-12)


def test_denominator_breach(p44):
    with pytest.raises(DenominatorBreach):
        mean_curvature_graph(1.2, 0.0, 0.0, 1.0, p44)


def test_PQ_at_cone(p44):
    P, Q = PQ_coefficients(0.0, p44)
    assert P == pytest.approx(p44.n - 2) and Q == pytest.approx(p44.n - 2)


def test_minimal_profile_H_small(prof44):
    rot = rotated_profile(prof44)
    for m in (400, 800):
        x = np.geomspace(1.0, 100.0, m)
        u, _, _ = rot.evaluate(x)
        d1, d2 = derivatives(x, u)
        H = mean_curvature_graph(u, d1, d2, x, prof44.params)[2:-2]
        h = math.log(x[1] / x[0])
        # second-order stencil error on a log mesh, scaled by the curvature size 1/x
        assert np.max(np.abs(H * x[2:-2])) < 10 * h ** 2


def test_graph_and_parametric_agree():
    params = derive_cone_params(4, 4)
    x = np.geomspace(0.5, 2.0, 4000)
    u = 0.05 * x * np.sin(3 * np.log(x))
    d1, d2 = derivatives(x, u)
    Hg = mean_curvature_graph(u, d1, d2, x, params)
    xi, eta, _, _ = rotated_to_hat(params, x, u)
    Hp, Ap, _ = parametric_curvatures(xi, eta, params)
    inner = slice(10, -10)
    scale = np.max(np.abs(Hg[inner]))
    assert np.max(np.abs(np.abs(Hp[inner]) - np.abs(Hg[inner]))) < 1e-4 * scale
    Ag = second_fundamental_norm(u, d1, d2, x, params)
    assert np.max(np.abs(Ap[inner] / Ag[inner] - 1)) < 1e-4


def test_reconstructed_sup_finds_vertex():
    x = np.linspace(0, 1, 11)
    f = 1 - (x - 0.53) ** 2
    v, loc = reconstructed_sup(x, f)
    assert v == pytest.approx(1.0, abs=1e-12) and loc == pytest.approx(0.53, abs=1e-12)


def test_jacobi_potential(prof44):
    params = prof44.params
    assert jacobi_potential(params, "cone", 2.0)[0] == pytest.approx((params.n - 2) / 4)
    r = np.array([1e-3, prof44.mesh[-1] * 0.9])
    V = jacobi_potential(params, "profile", r, prof44)
    assert np.isfinite(V[0])
    assert V[1] * r[1] ** 2 / (params.n - 2) == pytest.approx(1.0, rel=0.05)
    k = 2.0
    pk = normalize_profile(prof44, prof44.k, k)
    e = 1 / (1 - params.alpha)
    rr = np.array([0.5, 3.0, 20.0])
    lhs = jacobi_potential(params, "profile", rr, pk)
    rhs = k ** (-2 * e) * jacobi_potential(params, "profile", k ** (-e) * rr, prof44)
    assert np.allclose(lhs, rhs, rtol=1e-8)


def test_jacobi_matches_linearized_potential(p44):
    # the zeroth-order part of the linearization at the cone is Q(0)/y^2 = (n-2)/y^2
    y = np.array([0.3, 1.0, 4.0])
    _, Q = PQ_coefficients(0.0, p44)
    assert np.allclose(jacobi_potential(p44, "cone", y), Q / y ** 2)


def test_rescale_round_trip(e44):
    x = np.geomspace(1e-3, 1, 50)
    c = ChartFunction(ROTATED, "t", x, 0.01 * x * np.sin(x), 0.01 * np.cos(x), -0.01 * np.sin(x))
    for mode in ("type1", "type2"):
        fwd = rescale_chart(c, -3e-3, e44, mode)
        back = rescale_chart(fwd, -3e-3, e44, mode, inverse=True)
        assert back.frame == "t"
        assert np.allclose(back.mesh, x, rtol=1e-14) and np.allclose(back.values, c.values, rtol=1e-14)
        assert np.allclose(back.d2, c.d2, rtol=1e-14)
    z = rescale_chart(ChartFunction(ROTATED, "t", x, 0 * x), -1e-2, e44, "type1")
    assert np.all(z.values == 0)


def test_rescale_type1_vs_type2_consistent(p44, e44):
    # type-II = type-I dilated by e^{sigma s}
    t = -2e-3
    x = np.geomspace(1e-4, 1, 40)
    st0 = FlowState(p44, e44, t, rot=ChartFunction(ROTATED, "t", x, 0.01 * x))
    one = rescale_state(st0, "type1")[ROTATED]
    two = rescale_state(st0, "type2")[ROTATED]
    f = math.exp(e44.sigma_l * st0.s)
    assert np.allclose(two.mesh, f * one.mesh, rtol=1e-12) and np.allclose(two.values, f * one.values, rtol=1e-12)


def test_rate_fit_synthetic(e44):
    t = -np.geomspace(1e-2, 1e-4, 30)
    fit = blowup_rate_fit(t, (-t) ** (-(0.5 + e44.sigma_l)), e44)
    assert fit.slope == pytest.approx(-(0.5 + e44.sigma_l), abs=1e-12)
    assert fit.regime == "type II" and abs(fit.deviation) < 1e-12
    fit1 = blowup_rate_fit(t, (-t) ** -0.5, e44)
    assert fit1.slope == pytest.approx(-0.5, abs=1e-12) and fit1.regime == "type I"
    with pytest.raises(SpanTooShort):
        blowup_rate_fit(t[:5], t[:5] ** 2, e44)
    with pytest.raises(SpanTooShort):
        blowup_rate_fit(-np.geomspace(1e-2, 5e-3, 30), np.ones(30), e44)


def test_bounded_H_table():
    for n in range(8, 13):
        for l in range(2, 7):
            assert bounded_H_criterion(n, l) == ((n >= 9 and l >= 3) or (n == 8 and l >= 4))
    assert feasible_exponent_max(-2.0, 2.5) == pytest.approx(2.4, abs=1e-14)
    assert feasible_exponent_max(-2.0, 1.5) == pytest.approx(2.0, abs=1e-14)


def test_weighted_H(p44, e44):
    x = np.geomspace(1e-4, 0.1, 300)
    u = 0.01 * x * np.sin(20 * x)
    st0 = FlowState(p44, e44, -1e-2, rot=ChartFunction(ROTATED, "t", x, u))
    d1, d2 = derivatives(x, u)
    H = mean_curvature_graph(u, d1, d2, x, p44)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        w = weighted_H_sup(st0, 2.0 + 1e-9)
    assert w >= np.max(np.abs(H)) * (1 - 1e-12)
    with pytest.warns(ExponentInfeasible):
        weighted_H_sup(st0, 2.9)


def test_convergence_metric(prof44, p44, e44):
    from lawsonflow.charts import tip_mesh
    z = tip_mesh(20.0, 200, 0.05)
    w, w1, w2 = prof44.evaluate(z)
    st0 = FlowState(p44, e44, -1e-3, tip=ChartFunction("tip-radial", "tau", z, w, w1, w2))
    c0, c1 = convergence_metric(st0, "profile", (0.0, 10.0), prof44)
    assert c0 == 0.0 and c1 == 0.0
    with pytest.raises(WindowUncovered):
        convergence_metric(st0, "profile", (0.0, 30.0), prof44)
    y = np.geomspace(0.1, 10, 50)
    st1 = FlowState(p44, e44, -1e-3, type1=ChartFunction(ROTATED, "s", y, 0 * y))
    assert convergence_metric(st1, "cone", (0.5, 5.0)) == (0.0, 0.0)


def test_subsuper_signs(p44, e44):
    from lawsonflow.runtime import subsuper_leading_coefficient
    M1, M2 = subsuper_constants(p44, e44.lambda_l)
    assert M1 == 72 and M2 > 0
    C0 = subsuper_leading_coefficient(p44, e44)
    rho, R = 0.05, 10.0
    t0 = -(rho / (4 * R)) ** 2
    T, X = subsuper_grid(t0, t0 / 100, R, rho)
    for sgn, expect in (("+", 1), ("-", -1)):
        rep = subsuper_residual(make_subsuper(p44, e44, sgn, C0), p44, T, X)
        assert rep["expected_sign"] == expect and rep["sign_ok"]
    with pytest.raises(ValueError):
        make_subsuper(p44, e44, "+-", C0)
