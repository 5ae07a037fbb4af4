import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, special

from lawsonflow.cone_params import derive_cone_params, spectral_exponents
from lawsonflow.errors import DomainError
from lawsonflow.specfn import (KummerPolynomial, bessel_i, eigenfunction_coeffs, expansion_K, kummer_m,
                               log_gamma, normalization_c)


def test_kummer_examples():
    assert kummer_m(0, 1.5, 7.3) == 1.0
    assert kummer_m(-1, 1.5, 2.0) == pytest.approx(-1 / 3, abs=1e-15)
    a, b, x, h = -3, 1.5, 4.0, 1e-4
    m = lambda z: kummer_m(a, b, z)
    d1 = (m(x + h) - m(x - h)) / (2 * h)
    d2 = (m(x + h) - 2 * m(x) + m(x - h)) / h ** 2
    assert abs(x * d2 + (b - x) * d1 - a * m(x)) < 1e-6
    with pytest.raises(DomainError):
        kummer_m(0.5, -2.0, 1.0)


@given(st.floats(-3, 3), st.floats(0.3, 6), st.floats(0, 20))
def test_kummer_series_matches_scipy(a, b, x):
    ref = special.hyp1f1(a, b, x)
    assert kummer_m(a, b, x) == pytest.approx(ref, rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("l", range(0, 7))
def test_kummer_polynomial_coefficients(l):
    b = 1.5
    poly = KummerPolynomial.build(l, b)
    for j, c in enumerate(poly.coefficients):
        rf = math.prod(b + i for i in range(j))
        assert c == pytest.approx((-1) ** j * math.comb(l, j) / rf, rel=1e-14)
    z = np.linspace(0, 100, 51)
    assert np.allclose(poly(z), special.hyp1f1(-l, b, z), rtol=1e-12, atol=1e-12 * np.abs(poly(z)).max())


@pytest.mark.parametrize("z", [0.5, 2.0, 10.0])
@pytest.mark.parametrize("l", range(1, 6))
def test_kummer_contiguous_recurrence(l, z):
    # (b - a) M(a-1) + (2a - b + z) M(a) - a M(a+1) = 0 with a = -l
    b, a = 1.5, -l
    lhs = (b - a) * kummer_m(a - 1, b, z) + (2 * a - b + z) * kummer_m(a, b, z) - a * kummer_m(a + 1, b, z)
    scale = max(abs(kummer_m(a - 1, b, z)), abs(kummer_m(a, b, z)), abs(kummer_m(a + 1, b, z)), 1.0) * (b - a + z)
    assert abs(lhs) < 1e-10 * scale


def bessel_series_oracle(nu, x, terms=30):
    term = (x / 2) ** nu / math.gamma(nu + 1)
    total = term
    for k in range(1, terms):
        term *= (x / 2) ** 2 / (k * (k + nu))
        total += term
    return total


def test_bessel_examples():
    assert bessel_i(0.5, 2.0) == pytest.approx(bessel_series_oracle(0.5, 2.0), rel=1e-10)
    for nu in (0.0, 0.5, 1.5):
        x = 1e-4
        assert bessel_i(nu, x) / ((x / 2) ** nu / math.gamma(nu + 1)) == pytest.approx(1, abs=1e-6)
    nu8 = (8 - 3) / 2 - 2.0
    r = bessel_i(nu8, 50.0) * math.sqrt(2 * math.pi * 50) / math.exp(50)
    assert 0.9 <= r <= 1.1


@given(st.floats(0, 6), st.floats(0.01, 30))
def test_bessel_against_scipy(nu, x):
    assert bessel_i(nu, x) == pytest.approx(special.iv(nu, x), rel=1e-10)


@given(st.floats(0, 6), st.floats(30, 700))
def test_bessel_log_against_scaled_scipy(nu, x):
    ref = math.log(special.ive(nu, x)) + x
    assert bessel_i(nu, x, log=True) == pytest.approx(ref, rel=1e-11, abs=1e-10)


@pytest.mark.parametrize("nu", [0.0, 0.5, 2.5])
def test_bessel_switch_band_and_monotone(nu):
    x = np.linspace(20, 30, 41)
    series = np.array([bessel_series_oracle(nu, v, 200) for v in x])
    assert np.allclose(bessel_i(nu, x), series, rtol=1e-9)
    grid = np.geomspace(1e-3, 200, 400)
    assert np.all(np.diff(bessel_i(nu, grid, log=True)) > 0)


def test_log_gamma():
    assert log_gamma(1.0) == 0.0
    assert log_gamma(0.5) == pytest.approx(math.log(math.sqrt(math.pi)), rel=1e-14)
    assert log_gamma(11.0) == pytest.approx(math.log(math.factorial(10)), rel=1e-14)
    with pytest.raises(DomainError):
        log_gamma(0.0)


def test_normalization_examples():
    cp = derive_cone_params(4, 4)
    ex = spectral_exponents(cp, 4)
    # c_0^{-2} = int y^2 e^{-y^2/4} dy = 4 Gamma(3/2), so c_0 = 1 / (2 sqrt(Gamma(3/2)))
    assert normalization_c(cp, ex, 0) == pytest.approx(1 / (2 * math.sqrt(math.gamma(1.5))), rel=1e-14)
    for j in range(1, 11):
        ratio = normalization_c(cp, ex, j) / normalization_c(cp, ex, j - 1)
        assert ratio == pytest.approx(math.sqrt((ex.b + j - 1) / j), rel=1e-13)


@pytest.mark.parametrize("pq", [(4, 4), (4, 5)])
@pytest.mark.parametrize("j", [0, 1, 2, 5, 10])
def test_normalization_by_quadrature(pq, j):
    cp = derive_cone_params(*pq)
    ex = spectral_exponents(cp, 4)
    poly = KummerPolynomial.build(j, ex.b)
    f = lambda y: y ** (cp.n - 2 + 2 * cp.alpha) * math.exp(-y * y / 4) * poly(y * y / 4) ** 2
    val = integrate.quad(f, 0, np.inf, limit=400, epsabs=0, epsrel=1e-12)[0]
    assert normalization_c(cp, ex, j) ** 2 * val == pytest.approx(1.0, abs=1e-8)


def test_normalization_growth_bounded():
    cp = derive_cone_params(4, 4)
    ex = spectral_exponents(cp, 4)
    r = [normalization_c(cp, ex, j) / j ** ((ex.b - 1) / 2) for j in range(1, 51)]
    assert max(r) / min(r) < 1.2


def test_expansion_K_examples():
    assert expansion_K(2, 1.5) == pytest.approx([1 / 3, 1 / 60], rel=1e-14)
    for b in (1.5, 2.3):
        assert expansion_K(1, b) == pytest.approx([1 / (4 * b)])
    for l in range(1, 9):
        assert all(k > 0 for k in expansion_K(l, 1.5))


def test_eigenfunction_coeffs_match_polynomial():
    cp = derive_cone_params(4, 4)
    ex = spectral_exponents(cp, 4)
    co = eigenfunction_coeffs(cp, ex, 4)
    poly = KummerPolynomial.build(4, ex.b)
    # (-1)^j K_{l,j} y^{2j} equals the z^j coefficient at z = y^2/4
    for j, K in enumerate(co.K, start=1):
        assert (-1) ** j * K == pytest.approx(poly.coefficients[j] / 4 ** j, rel=1e-14)
    assert len(co.c) == 5 and all(c > 0 for c in co.c)
