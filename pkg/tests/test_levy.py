import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csbpx.errors import DomainError, ModelError
from csbpx.levy import (CHECK_GRID, Exponential, Gamma, JumpMeasure, LevyModel, esscher, model_from_dict, phi,
                        psi)
from scipy.special import gamma as gamma_fn


def test_brownian_values(bm):
    assert psi(bm, 2.0) == pytest.approx(2.0)
    assert psi(bm, 1.0) == pytest.approx(0.0, abs=1e-14)
    assert bm.p == pytest.approx(1.0)
    assert phi(bm, 2.0) == pytest.approx(2.0)
    assert bm.gamma == pytest.approx(1.0)
    assert bm.phi_prime_zero == pytest.approx(1.0)
    assert bm.w_zero == 0.0
    assert bm.closed_form == "brownian"


def test_cp_closed_form_exponent(cp):
    s = np.array([0.3, 1.0, 2.5, 7.0])
    assert np.allclose(psi(cp, s), s * (s - 1) / (2 * (1 + s)), rtol=1e-10)
    assert cp.p == pytest.approx(1.0, rel=1e-10)
    assert cp.gamma == pytest.approx(0.5)
    assert cp.phi_prime_zero == pytest.approx(4.0, rel=1e-8)
    assert cp.w_zero == pytest.approx(2.0)
    assert cp.bounded_variation


def test_negative_argument_rejected(bm):
    with pytest.raises(DomainError):
        psi(bm, -1.0)
    with pytest.raises(DomainError):
        phi(bm, -0.5)


def test_subordinator_and_negative_drift():
    sub = LevyModel(0.0, 1.0, JumpMeasure.compound_poisson(1.0, Exponential(1.0)))
    assert sub.is_subordinator and math.isinf(sub.p)
    down = LevyModel(0.0, -1.0, JumpMeasure.compound_poisson(1.0, Exponential(1.0)))
    assert down.p == 0.0 and down.gamma < 0


def test_power_tail_exponent_close_to_stable_form():
    # c x^{-1-a} with a = 1.5; small jumps below 0.01 carried by a Gaussian stand-in
    m = LevyModel(0.5, 0.3, JumpMeasure.power_tail(1.0, 1.5, 0.01))
    for s in (0.5, 1.0, 2.0, 4.0):
        exact = 0.25 * s * s - 0.3 * s + gamma_fn(-1.5) * s**1.5 - s / 0.5
        assert float(m.exponent(s)) == pytest.approx(exact, rel=1e-3, abs=1e-3)


def test_model_dict_round_trip(mixed):
    d = mixed.to_dict()
    again = model_from_dict(d)
    assert again.fingerprint() == mixed.fingerprint()
    with pytest.raises(ModelError):
        model_from_dict({**d, "colour": "blue"})


def test_esscher_brownian(bm):
    t = esscher(bm, 1.0)
    assert t.sigma2 == pytest.approx(2.0)
    assert t.mu == pytest.approx(-1.0)
    assert float(t.exponent(2.0)) == pytest.approx(float(bm.exponent(3.0)) - float(bm.exponent(1.0)))


@settings(max_examples=25, deadline=None)
@given(a=st.floats(0.05, 3.0), s=st.floats(0.0, 5.0))
def test_esscher_round_trip(a, s):
    m = LevyModel(1.0, 0.7, JumpMeasure.compound_poisson(2.0, Gamma(2.0, 3.0)))
    t = esscher(m, a)
    assert float(t.exponent(s)) == pytest.approx(float(m.exponent(a + s)) - float(m.exponent(a)), rel=1e-7, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(sigma2=st.one_of(st.just(0.0), st.floats(0.01, 3.0)), mu=st.floats(-2.0, 2.0), rate=st.floats(0.1, 3.0), lam=st.floats(0.5, 4.0))
def test_exponent_convex_and_slope(sigma2, mu, rate, lam):
    m = LevyModel(sigma2, mu, JumpMeasure.compound_poisson(rate, Exponential(lam)))
    s = np.linspace(0.0, 6.0, 61)
    v = np.asarray(m.exponent(s), dtype=float)
    assert np.all(np.diff(v, 2) >= -1e-9 * (1 + np.abs(v[1:-1])))
    h = 1e-6
    fd = (float(m.exponent(h)) - float(m.exponent(0.0))) / h
    assert fd == pytest.approx(-m.gamma, abs=1e-4 * (1 + abs(m.gamma)) + 1e-5)


@settings(max_examples=20, deadline=None)
@given(q=st.floats(0.0, 20.0))
def test_phi_inverts_psi(q):
    m = LevyModel(1.0, 1.0, JumpMeasure.compound_poisson(1.0, Exponential(2.0)))
    r = phi(m, q)
    assert float(m.exponent(r)) == pytest.approx(q, abs=1e-8 * (1 + q))
    assert r >= m.p - 1e-12


def test_check_grid_is_nonnegative():
    assert np.all(CHECK_GRID >= 0)
