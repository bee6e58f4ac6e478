import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mechfringe.core import CouplingConfig, DomainError, ThermalState
from mechfringe.multiport import (cyclotomic_polynomial, filter_N, herald_probability_N,
                                  herald_probability_N_quadrature, multiport_matrix,
                                  noon_projection_check, noon_projection_check_float,
                                  noon_projection_coefficients, upsilon_N,
                                  upsilon_N_coherent_oracle)
from mechfringe.twoport import FilterCurve, herald_probability_closed, upsilon

PI = math.pi


def test_two_port_matrix_is_beam_splitter():
    m = multiport_matrix(2).entries
    np.testing.assert_allclose(m, np.array([[1, 1], [1, -1]]) / math.sqrt(2), atol=1e-15)


def test_three_port_matrix():
    w = cmath.exp(2j * PI / 3)
    want = np.array([[1, 1, 1], [1, w, w * w], [1, w * w, w]]) / math.sqrt(3)
    np.testing.assert_allclose(multiport_matrix(3).entries, want, atol=1e-15)


@pytest.mark.parametrize("N", range(2, 13))
def test_matrix_unitary_and_bordered(N):
    mm = multiport_matrix(N)
    assert mm.unitarity_residual() < 1e-12
    np.testing.assert_allclose(mm.entries[0], 1 / math.sqrt(N), rtol=1e-15)
    np.testing.assert_allclose(mm.entries[:, 0], 1 / math.sqrt(N), rtol=1e-15)


@pytest.mark.parametrize("N", [1, 0, 2.5, True])
def test_matrix_rejects_bad_n(N):
    with pytest.raises(DomainError):
        multiport_matrix(N)


def test_cyclotomic_polynomials():
    assert cyclotomic_polynomial(1) == [-1, 1]
    assert cyclotomic_polynomial(4) == [1, 0, 1]
    assert cyclotomic_polynomial(6) == [1, -1, 1]
    assert cyclotomic_polynomial(12) == [1, 0, -1, 0, 1]


@pytest.mark.parametrize("N", range(2, 9))
def test_noon_projection_exact(N):
    coeffs = noon_projection_coefficients(N)
    # interior monomials reduce to the zero element of Z[w]
    assert all(not any(c) for c in coeffs[1:-1])
    c0n, cn0, cross = noon_projection_check(N)
    assert cross == 0.0
    assert c0n == pytest.approx(1.0, abs=1e-12)
    assert cn0 == pytest.approx(-(-1) ** N, abs=1e-12)


@pytest.mark.parametrize("N", range(2, 9))
def test_noon_projection_float_agrees(N):
    c0n, cn0, cross = noon_projection_check_float(N)
    assert cross < 1e-10
    assert c0n == pytest.approx(1.0, abs=1e-12)
    assert cn0 == pytest.approx(-(-1) ** N, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 3), st.floats(0, 2 * PI), st.floats(0.01, 1.5), st.floats(-5, 5))
def test_upsilon_2_equals_two_port_11(mu, phi, alpha, x):
    cfg = CouplingConfig(mu, phi, alpha)
    a, b = upsilon_N(2, cfg, x), upsilon((1, 1), cfg, x)
    assert abs(a - b) <= 1e-12 * max(abs(b), 1e-300) + 1e-300


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 6), st.floats(0, 3), st.floats(0, 2 * PI), st.floats(0.05, 0.6),
       st.floats(-5, 5))
def test_upsilon_N_matches_coherent_oracle(N, mu, phi, alpha, x):
    cfg = CouplingConfig(mu, phi, alpha)
    a = upsilon_N(N, cfg, x)
    b, w = upsilon_N_coherent_oracle(N, cfg, x, return_output=True)
    assert float(np.sum(np.abs(w) ** 2)) == pytest.approx(2 * alpha ** 2, rel=1e-12)
    scale = math.exp(-alpha ** 2) * alpha ** N * N ** (-N / 2)
    assert abs(a - b) <= 1e-10 * max(abs(b), 1e-4 * scale)


def test_upsilon_N_example():
    cfg = CouplingConfig(1.5, 0.0, 0.4)
    a = upsilon_N(3, cfg, 0.7)
    assert a == pytest.approx(upsilon_N_coherent_oracle(3, cfg, 0.7), rel=1e-12)
    assert a == pytest.approx(3.7093371172919128e-7 - 8.8239858029248994e-5j, rel=1e-12)


def test_coherent_oracle_dark_port():
    assert abs(upsilon_N_coherent_oracle(2, CouplingConfig(0.0, 0.0, 0.8), 1.3)) < 1e-16


@pytest.mark.parametrize("N", [2, 4, 6])
def test_even_N_destructive_interference(N):
    cfg = CouplingConfig(1.1, 0.4, 0.5)
    x = cfg.phi / cfg.mu
    assert abs(upsilon_N(N, cfg, x)) < 1e-17
    assert filter_N(N, cfg, x) == 0.0


def test_filter_N_odd_value_at_phase_match():
    alpha = 0.5
    cfg = CouplingConfig(1.0, 0.3, alpha)
    want = 4 / 27 * math.exp(-2 * alpha ** 2) * alpha ** 6
    assert filter_N(3, cfg, 0.3) == pytest.approx(want, rel=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 8), st.floats(0, 3), st.floats(0, 2 * PI), st.floats(0.05, 1.0),
       st.floats(-5, 5))
def test_filter_N_is_modulus_squared(N, mu, phi, alpha, x):
    cfg = CouplingConfig(mu, phi, alpha)
    assert filter_N(N, cfg, x) == pytest.approx(abs(upsilon_N(N, cfg, x)) ** 2, rel=1e-12,
                                                abs=1e-300)


@pytest.mark.parametrize("N", range(2, 7))
def test_fringe_period_scales_with_N(N):
    mu = 1.5
    cfg = CouplingConfig(mu, 0.2, 0.5)
    xs = np.linspace(-8, 8, 160001)
    period = FilterCurve(xs, filter_N(N, cfg, xs)).period()
    assert period * N * mu == pytest.approx(2 * PI, rel=1e-6)


def test_fringe_period_N4():
    xs = np.linspace(-5, 5, 100001)
    period = FilterCurve(xs, filter_N(4, CouplingConfig(1.5, 0.0, 0.5), xs)).period()
    assert period == pytest.approx(PI / 3, rel=1e-6)


@pytest.mark.parametrize("mu", [0.5, 1.5])
@pytest.mark.parametrize("nbar", [0, 1, 4])
@pytest.mark.parametrize("phi", [0, PI / 2, PI])
@pytest.mark.parametrize("N", [2, 3, 4])
def test_herald_closed_vs_quadrature(N, phi, nbar, mu):
    cfg = CouplingConfig(mu, phi, 0.5)
    closed = herald_probability_N(N, cfg, nbar)
    quad = herald_probability_N_quadrature(N, cfg, ThermalState(nbar))
    assert closed == pytest.approx(quad, abs=1e-8)
    # relative agreement too, since the quadrature is purely relative
    assert closed == pytest.approx(quad, rel=1e-9)


def test_herald_N4_frozen():
    p = herald_probability_N(4, CouplingConfig(1.5, 0.0, 0.5), 1)
    assert p == pytest.approx(1.8509846792953291e-5, rel=1e-12)


@settings(max_examples=60)
@given(st.floats(0, 3), st.floats(0, 2 * PI), st.floats(0.01, 1.5), st.floats(0, 10))
def test_herald_N2_matches_two_port(mu, phi, alpha, nbar):
    cfg = CouplingConfig(mu, phi, alpha)
    assert herald_probability_N(2, cfg, nbar) == pytest.approx(
        herald_probability_closed((1, 1), cfg, nbar), rel=1e-12, abs=1e-300)


@settings(max_examples=60)
@given(st.integers(2, 8), st.floats(1e-3, 3), st.floats(0, 2 * PI), st.floats(0.1, 1.0),
       st.floats(0, 10))
def test_herald_positive_with_spread(N, mu, phi, alpha, nbar):
    assert herald_probability_N(N, CouplingConfig(mu, phi, alpha), nbar) > 0


def test_herald_N_zero_alpha():
    assert herald_probability_N(3, CouplingConfig(1.0, 0.0, 0.0), 1) == 0.0
    with pytest.raises(DomainError):
        herald_probability_N(3, CouplingConfig(1.0, 0.0, 0.5), -1)
