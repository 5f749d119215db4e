import math

import numpy as np
import pytest

from csbpx.asymptotics import (estimate_lambda, exp_moment, moment_grid, moment_recursion, omega_wp_integral,
                               phi_and_inverse, prop46_checks)
from csbpx.errors import DomainError, PreconditionError
from csbpx.experiments import sample_limit_law_B, verify_thm1, verify_thm2
from csbpx.levy import JumpMeasure, LevyModel
from csbpx.rates import TabulatedRate, constant, exponential, power
from csbpx.simulation import SimConfig


@pytest.fixture(scope="module")
def bm_moments():
    from conftest import brownian_model

    return moment_recursion(brownian_model(), power(1.0, 2.0), 3)


def test_m0_exact(bm_moments):
    assert bm_moments[0].at(1.0) == pytest.approx(1 - math.exp(-1), abs=1e-15)


def test_m1_against_phi(bm_moments):
    m1 = bm_moments[1]
    r = [m1.at(x) * (1 + x) for x in (10.0, 100.0, 1000.0)]
    assert abs(r[2] - 1) < abs(r[0] - 1)
    assert r[2] == pytest.approx(1.0, abs=0.02)


def test_factorial_bound(bm, bm_moments):
    B = omega_wp_integral(bm, power(1.0, 2.0))
    for n, t in enumerate(bm_moments):
        assert np.all(t.values >= 0)
        assert np.all(t.values <= math.factorial(n) * B**n * (1 + 1e-9))


def test_factorial_bound_with_jumps(mixed):
    R = exponential(1.0)
    tabs = moment_recursion(mixed, R, 2, moment_grid(y_max=1e4, n_geom=200))
    B = omega_wp_integral(mixed, R)
    for n, t in enumerate(tabs):
        assert np.all(t.values <= math.factorial(n) * B**n * (1 + 1e-9))
    assert tabs[0].at(1.0) == pytest.approx(-math.expm1(-mixed.p))


def test_moment_preconditions(bm):
    with pytest.raises(PreconditionError) as exc:
        moment_recursion(bm, power(0.0, 2.5), 1)
    assert exc.value.condition == "H1"
    flat = LevyModel(2.0, 0.0, JumpMeasure.none())
    with pytest.raises(PreconditionError):
        moment_recursion(flat, exponential(1.0), 1)


def test_exp_moment(bm):
    R = exponential(1.0)
    m0 = 1 - math.exp(-1)
    assert exp_moment(bm, R, 0.0, 1.0).value == pytest.approx(m0)
    v = exp_moment(bm, R, -0.3, 1.0).value
    assert 0 < v < m0
    r = exp_moment(bm, R, 0.0, 1.0).radius
    # int_0^inf e^{-y} (1 - e^{-y}) dy = 1/2
    assert r == pytest.approx(2.0, rel=1e-3)
    res = exp_moment(bm, R, 0.5 * r, 1.0)
    assert res.remainder_bound < 1e-8 and res.value > m0
    with pytest.raises(DomainError, match="radius"):
        exp_moment(bm, R, 1.1 * r, 1.0)


def test_phi_and_inverse():
    phi, inv = phi_and_inverse(power(1.0, 2.0), 1.0)
    assert phi(4.0) == pytest.approx(0.2)
    assert inv(0.2) == pytest.approx(4.0)
    assert inv(phi(5.0)) == pytest.approx(5.0, abs=1e-10)
    phi, _ = phi_and_inverse(exponential(2.0), 0.5)
    assert phi(1.0) == pytest.approx(math.exp(-2.0))
    with pytest.raises(PreconditionError):
        phi_and_inverse(constant(1.0), 1.0)


def test_estimate_lambda_closed_forms():
    a = estimate_lambda(power(1.0, 2.0), 1.0)
    assert a.lam == 0.0 and a.regime == "A" and a.side_3a == pytest.approx(2.0) and a.side_3a_ok
    b = estimate_lambda(exponential(1.0), 1.0)
    assert b.lam == 1.0 and b.regime == "B" and b.side_b == pytest.approx(0.5)
    assert estimate_lambda(exponential(2.0), 1.0).lam == 2.0


def test_estimate_lambda_tabulated():
    x = np.linspace(0.0, 10.0, 21)
    tab = TabulatedRate(x, np.exp(1.5 * x), 0.0, ("exponential", 1.5))
    rep = estimate_lambda(tab, 1.0)
    assert rep.conclusive and rep.lam == pytest.approx(1.5, rel=1e-6)
    assert rep.side_b == pytest.approx(1.5 / 2, rel=1e-3)
    tab2 = TabulatedRate(x, (1 + x) ** 3, 0.0, ("power", 3.0))
    rep2 = estimate_lambda(tab2, 1.0)
    assert rep2.regime == "A" and rep2.side_3a > 1


def test_prop46_case_b():
    t = prop46_checks(exponential(1.0), 1.0, 0.5, [1.0, 5.0, 10.0], "b")
    assert np.allclose(t.ratios["double"], 1.0, atol=1e-8)
    assert np.allclose(t.ratios["single"], 1.0, atol=1e-8)
    with pytest.raises(DomainError):
        prop46_checks(exponential(1.0), 1.0, 1.0, [1.0], "b")


def test_prop46_case_a_trend():
    r = prop46_checks(power(1.0, 2.0), 1.0, 1.0, [10.0, 100.0, 1000.0], "a").ratios["ratio"]
    assert np.all(np.diff(r) < 0) and r[-1] < 0.01


def test_prop46_case_c_exact():
    # tail integral e^{-x}: inverse is -log
    r = prop46_checks(exponential(1.0), 1.0, 0.5, [1e-2, 1e-5, 1e-10], "c").ratios["ratio"]
    assert np.allclose(r, 1.0, atol=1e-12)


def test_reference_law_without_jumps(bm):
    s = sample_limit_law_B(bm, 1.0, 200, SimConfig(dt=0.01, x_stop=20.0, seed=1), x_ref=10.0)
    assert s.integral.size == 200
    assert np.all(s.exp_rho == 1.0)
    assert s.tail_bound <= 1e-6 * s.integral.min()


def test_reference_law_overshoot_mean(cp):
    s = sample_limit_law_B(cp, 1.0, 1500, SimConfig(dt=0.01, x_stop=14.0, seed=2), x_ref=8.0)
    target = 1 / (cp.gamma * cp.phi_prime_zero)
    se = np.std(s.exp_rho) / math.sqrt(s.exp_rho.size)
    assert abs(np.mean(s.exp_rho) - target) < 3 * se


def test_reference_law_stable_in_cutoff(bm):
    a = sample_limit_law_B(bm, 1.0, 400, SimConfig(dt=0.01, x_stop=20.0, seed=3))
    b = sample_limit_law_B(bm, 1.0, 400, SimConfig(dt=0.01, x_stop=40.0, seed=3))
    # the same paths up to the first cutoff: values differ only by the tail beyond it
    assert np.allclose(a.integral, b.integral, rtol=1e-6)


def test_verify_thm1_without_explosion(bm):
    rep = verify_thm1(bm, constant(1.0), [5.0], SimConfig(seed=1))
    assert rep.empty


def test_verify_thm2_small(bm):
    rep = verify_thm2(bm, power(1.0, 2.0), [0.5, 0.05], SimConfig(dt=0.01, adapt=1e-4, x_stop=200.0, seed=4),
                      n_accept=50)
    assert rep.regime == "A" and rep.accepted == 50
    assert {r.t for r in rep.rows} == {0.05, 0.5}
    small = min(rep.rows, key=lambda r: r.t)
    assert small.resolvable and 0.5 < small.median < 1.5
    assert small.median_inf <= small.median + 1e-12
