import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lawsonflow.cone_params import derive_cone_params, rotate_chart, spectral_exponents, time_frames
from lawsonflow.errors import DimensionError, ParameterError

VALID_PQ = [(p, q) for p in range(2, 9) for q in range(2, 9)
            if p + q >= 8 and not (p + q == 8 and min(p, q) < 3)]


def quad_roots(n):
    # plain quadratic formula, independent of the library's stable variant
    b, c = n - 3.0, n - 2.0
    d = math.sqrt(b * b - 4 * c)
    return (-b + d) / 2, (-b - d) / 2


def test_n8_exponents():
    cp = derive_cone_params(4, 4)
    assert (cp.n, cp.mu, cp.alpha, cp.alpha_hat, cp.alpha_tilde) == (8, 1.0, -2.0, -3.0, -3.0)


def test_n9_exponents():
    cp = derive_cone_params(4, 5)
    a, ah = quad_roots(9)
    assert cp.alpha == pytest.approx(a, abs=1e-14)
    assert cp.alpha == pytest.approx(-1.585786437626905, abs=1e-12)
    assert cp.alpha_tilde == pytest.approx(2 * a - 1, abs=1e-14)
    assert cp.alpha_tilde == pytest.approx(-4.17157287525381, abs=1e-12)


@pytest.mark.parametrize("pq", [(2, 6), (6, 2), (3, 4), (1, 9)])
def test_dimension_errors(pq):
    with pytest.raises(DimensionError):
        derive_cone_params(*pq)


@pytest.mark.parametrize("pq", VALID_PQ)
def test_root_identities(pq):
    cp = derive_cone_params(*pq)
    for x in (cp.alpha, cp.alpha_hat):
        assert abs(x * (x - 1) + (cp.n - 2) * (x + 1)) < 1e-10
    assert cp.alpha_hat < cp.alpha < -1 + 1e-15 and cp.alpha >= -2
    assert cp.alpha_tilde < cp.alpha
    assert cp.mu ** 2 * (cp.p - 1) == pytest.approx(cp.q - 1, rel=1e-12)
    assert (cp.alpha_tilde == cp.alpha_hat) == (cp.n == 8)


def test_spectral_examples():
    cp = derive_cone_params(4, 4)
    e4 = spectral_exponents(cp, 4)
    assert e4.lambda_l == 2.5 and e4.sigma_l == pytest.approx(2.5 / 3, abs=1e-15)
    e2 = spectral_exponents(cp, 2)
    assert e2.lambda_l == 0.5 and e2.sigma_l == pytest.approx(1 / 6, abs=1e-15)
    for l in range(2, 8):
        assert spectral_exponents(cp, l).varsigma == pytest.approx(1 / 7)
    with pytest.raises(ParameterError):
        spectral_exponents(cp, 1)


@pytest.mark.parametrize("pq", VALID_PQ)
@pytest.mark.parametrize("l", [2, 3, 5])
def test_spectral_definitions(pq, l):
    cp = derive_cone_params(*pq)
    e = spectral_exponents(cp, l)
    a, n = cp.alpha, cp.n
    assert e.lambda_l > 0
    upper = (n - 3 + 2 * a) / (2 * (1 - a))
    if n >= 9:
        assert e.varsigma == pytest.approx(min(1.0, upper))
    else:
        assert 0 < e.varsigma < upper
    assert e.kappa == pytest.approx(min(0.5, (n - 1 + 2 * a) / (6 * (1 - a)), e.varsigma, 1 / (e.lambda_l + 1)))
    assert e.varrho == pytest.approx(min(e.kappa * (1 - a) / 2, 0.2))


def test_rotation_examples():
    cp = derive_cone_params(4, 4)
    x, y = rotate_chart((0.0, 1.0), cp)
    assert (x, y) == pytest.approx((1 / math.sqrt(2), 1 / math.sqrt(2)), abs=1e-15)
    cp5 = derive_cone_params(4, 5)
    _, y = rotate_chart((2.0, 2.0 * cp5.mu), cp5)
    assert abs(y) < 1e-15
    back = rotate_chart(rotate_chart((1.3, 0.7), cp5), cp5, "inverse")
    assert back == pytest.approx((1.3, 0.7), abs=1e-14)


@given(st.sampled_from(VALID_PQ), st.floats(-10, 10), st.floats(-10, 10))
def test_rotation_isometry(pq, x, y):
    cp = derive_cone_params(*pq)
    fx, fy = rotate_chart((x, y), cp)
    assert math.hypot(fx, fy) == pytest.approx(math.hypot(x, y), abs=1e-13)
    bx, by = rotate_chart((fx, fy), cp, "inverse")
    assert (bx, by) == pytest.approx((x, y), abs=1e-13)


def test_time_frames():
    s, tau = time_frames(np.array([-1e-2, -1e-3]), 2.5 / 3)
    assert s == pytest.approx([math.log(100), math.log(1000)])
    assert tau[0] == pytest.approx(1e-2 ** (-5 / 3) / (5 / 3))
