import math

import numpy as np
import pytest

from csbpx.errors import DomainError, PreconditionError
from csbpx.levy import JumpMeasure, LevyModel
from csbpx.omega import (check_h0_h1_h2, classify_boundaries, convergence_order, downward_laplace, h_omega,
                         solve_w_omega, weighted_exit)
from csbpx.rates import constant, exponential, power
from csbpx.scale import compute_scale, exit_down_prob


def test_zero_rate_gives_scale_function(mixed):
    t = solve_w_omega(mixed, constant(math.inf), x_max=5.0, n=100)
    W = compute_scale(mixed, 0.0, t.x)
    lag = t.x[:, None] - t.x[None, :]
    mask = lag >= 0
    assert np.allclose(t.values[mask], W(lag[mask]), rtol=1e-9, atol=1e-12)


def test_diagonal_is_w_zero(cp):
    t = solve_w_omega(cp, power(1.0, 2.0), x_max=3.0, n=60)
    assert np.allclose(np.diag(t.values), cp.w_zero)


def test_constant_rate_matches_q_scale(bm):
    t = solve_w_omega(bm, constant(1.0), x_max=10.0, n=1000)
    W1 = compute_scale(bm, 1.0, t.x)
    gap = np.max(np.abs(t.values[1:, 0] - W1.values[1:]) / W1.values[1:])
    assert gap <= 1e-3


def test_second_order(bm):
    ratio, _ = convergence_order(bm, constant(1.0), 10.0, 800)
    assert 2.5 <= ratio <= 6.0


def test_equation_forms_agree(mixed):
    t = solve_w_omega(mixed, exponential(1.0), x_max=5.0, n=400)
    assert t.residual <= 5 * max(t.error, 1e-10) + 1e-8


def test_monotone_in_rate(mixed):
    lo = solve_w_omega(mixed, power(1.0, 2.0, 1.0), x_max=4.0, n=100)
    hi = solve_w_omega(mixed, power(1.0, 2.0, 0.5), x_max=4.0, n=100)  # twice the w
    mask = np.tril(np.ones_like(lo.U, dtype=bool))
    assert np.all(hi.U[mask] >= lo.U[mask] - 1e-12)


def test_singular_rate_on_grid_rejected(bm):
    with pytest.raises(DomainError):
        solve_w_omega(bm, power(0.0, 1.5), grid=np.linspace(0.0, 1.0, 11))


def test_weighted_exit_constant_rate(bm):
    t = solve_w_omega(bm, constant(1.0), x_max=2.0, n=400)
    W1 = compute_scale(bm, 1.0, np.array([0.0, 1.0, 2.0]))
    assert weighted_exit(t, 1.0, 0.0, 2.0) == pytest.approx(W1.values[1] / W1.values[2], rel=1e-5)
    assert weighted_exit(t, 0.0, 0.0, 2.0) == pytest.approx(1.0)


def test_weighted_exit_zero_rate_is_exit_probability(mixed):
    t = solve_w_omega(mixed, constant(math.inf), x_max=3.0, n=300)
    W = compute_scale(mixed, 0.0, np.array([0.0, 1.0]))
    assert weighted_exit(t, 1.2, 0.3, 3.0) == pytest.approx(exit_down_prob(W, 1.2, 0.3, 3.0), rel=1e-8)


def test_weighted_exit_outside_grid(bm):
    t = solve_w_omega(bm, constant(1.0), x_max=2.0, n=50)
    with pytest.raises(DomainError):
        weighted_exit(t, 1.0, 0.0, 3.0)


def test_h_zero_rate(bm):
    vals, _ = h_omega(bm, constant(math.inf), [0.0, 1.0, 3.0], n=500)
    assert np.allclose(vals, np.exp(-np.array([0.0, 1.0, 3.0])), rtol=1e-9)


def test_h_exponential_rate(bm):
    t = h_omega(bm, exponential(1.0))
    assert np.all(t.H > 0) and np.all(np.isfinite(t.H))
    assert t.tail_bound < 1e-4
    y = t.x_max / 2
    assert float(t.H_at(y)) / math.exp(-y) == pytest.approx(1.0, abs=1e-3)
    # frozen solver values (cross-checked by simulation in test_montecarlo)
    assert float(t.H_at(0.0)) == pytest.approx(1.5906, rel=1e-3)


def test_downward_laplace(bm):
    R = exponential(1.0)
    t = h_omega(bm, R)
    assert downward_laplace(bm, R, 1.0, 1.0, table=t) == pytest.approx(1.0)
    vals = [downward_laplace(bm, R, x, 0.1, table=t) for x in (0.5, 1.0, 2.0, 4.0)]
    assert all(0 < v <= 1 for v in vals)
    assert np.all(np.diff(vals) < 0)


def test_downward_laplace_vanishing_rate(bm):
    R = power(1.0, 2.0, 1e8)  # w close to 0
    v = downward_laplace(bm, R, 2.0, 0.5)
    assert v == pytest.approx(math.exp(-1.5), rel=1e-6)


def test_downward_laplace_needs_h1_at_zero(bm):
    with pytest.raises(PreconditionError):
        downward_laplace(bm, power(0.0, 2.5), 1.0, 0.0)


def test_h_requires_tail_integrability():
    zero_drift = LevyModel(2.0, 0.0, JumpMeasure.none())  # gamma = 0, W linear
    with pytest.raises(PreconditionError):
        h_omega(zero_drift, power(1.0, 1.5))


def test_classify_examples(bm):
    assert classify_boundaries(bm, power(0.0, 1.5)).explosion == "yes"
    assert classify_boundaries(bm, power(0.0, 0.5)).explosion == "no"
    assert classify_boundaries(bm, constant(1.0)).explosion == "no"
    # Brownian W(z) ~ z at 0: extinction iff int_0 z^{1-theta} dz < inf
    assert classify_boundaries(bm, power(0.0, 1.5)).extinction == "yes"
    assert classify_boundaries(bm, power(0.0, 2.5)).extinction == "no"


def test_classify_bounded_variation(cp):
    # W(0) > 0: extinction iff int_0 z^{-theta} dz < inf
    assert classify_boundaries(cp, power(0.0, 0.5)).extinction == "yes"
    assert classify_boundaries(cp, power(0.0, 1.2)).extinction == "no"


def test_conditions(bm):
    c = check_h0_h1_h2(bm, power(1.0, 2.0))
    assert c.H0 and c.H1 and c.lam == 0.0
    assert check_h0_h1_h2(bm, exponential(1.0)).lam == 1.0
    assert not check_h0_h1_h2(bm, constant(1.0)).H0


def test_csv_exports(tmp_path, bm):
    t = h_omega(bm, exponential(1.0), x_max=4.0, n=40)
    t.to_csv(tmp_path / "w.csv")
    t.h_to_csv(tmp_path / "h.csv")
    assert (tmp_path / "w.csv").read_text().splitlines()[0] == "x,y,W_omega"
    assert len((tmp_path / "h.csv").read_text().splitlines()) == 42
