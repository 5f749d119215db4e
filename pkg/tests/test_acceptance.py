"""Acceptance criteria 1-11; each test prints one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` (or as a script).
The lines are repeated in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from csbpx.asymptotics import moment_recursion, omega_wp_integral, phi_and_inverse
from csbpx.experiments import verify_thm1, verify_thm2
from csbpx.levy import Gamma, JumpMeasure, LevyModel
from csbpx.montecarlo import ExperimentSpec, monte_carlo
from csbpx.omega import convergence_order, solve_w_omega, weighted_exit
from csbpx.rates import constant, exponential, power
from csbpx.scale import OvershootLaw, compute_scale, renewal_limit
from csbpx.simulation import SimConfig, lamperti_transform, passage_time_X, simulate_batch, simulate_path

from conftest import brownian_model, cp_model, mixed_model

RESULTS = []


def report(k, ok, detail):
    line = f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_criterion_01_closed_form_scale():
    bm = brownian_model()
    x = np.linspace(0.01, 10.0, 1000)
    t0 = time.perf_counter()
    t = compute_scale(bm, 0.0, np.concatenate([[0.0], x]), method="talbot")
    dt = time.perf_counter() - t0
    err = float(np.max(np.abs(t.values[1:] / np.expm1(x) - 1)))
    report(1, err <= 1e-6 and dt < 1.0, f"max rel err {err:.2e} (<= 1e-6), {dt:.3f} s (< 1 s)")


def test_criterion_02_laplace_round_trip():
    cp = cp_model()
    t0 = time.perf_counter()
    grid = np.concatenate([[0.0], np.geomspace(1e-4, 60.0, 4000)])
    t = compute_scale(cp, 0.0, grid, method="talbot")
    s = cp.p + 0.5 + np.linspace(0.0, 9.0, 10)
    err = float(np.max(t.roundtrip_errors(s)))
    dt = time.perf_counter() - t0
    report(2, err <= 1e-4 and dt < 10.0 and abs(cp.gamma - 0.5) < 1e-12,
           f"gamma {cp.gamma:.3f}, max rel err {err:.2e} over 10 s (<= 1e-4), {dt:.2f} s (< 10 s)")


def test_criterion_03_renewal_exact():
    bm = brownian_model()
    grid = np.linspace(0.0, 20.0, 201)
    t = compute_scale(bm, 0.0, grid)
    worst = 0.0
    for x in (0.1, 1.0, 5.0):
        for y in grid:
            r = renewal_limit(t, x, y)
            worst = max(worst, abs(r.value - (-math.expm1(-x)) / bm.gamma))
    report(3, worst <= 1e-9, f"max |e^(-x)W(x+y) - W(y) - (1-e^(-x))/gamma| = {worst:.1e} (<= 1e-9)")


def test_criterion_04_overshoot_identities():
    models = {"brownian": brownian_model(), "compound_poisson": cp_model(), "mixed": mixed_model(),
              "gamma_jumps": LevyModel(0.5, 1.0, JumpMeasure.compound_poisson(2.0, Gamma(2.0, 3.0))),
              "power_tail": LevyModel(0.5, 0.3, JumpMeasure.power_tail(1.0, 1.5, 0.01))}
    worst = 0.0
    for m in models.values():
        law = OvershootLaw(m)
        worst = max(worst, abs(float(law(0.0)) - 1.0), abs(float(law(m.p)) - 1 / (m.gamma * m.phi_prime_zero)))
    report(4, worst <= 1e-9, f"max deviation {worst:.1e} over {len(models)} models (<= 1e-9)")


def test_criterion_05_volterra_consistency():
    bm = brownian_model()
    t = solve_w_omega(bm, constant(1.0), x_max=10.0, n=1000)
    W1 = compute_scale(bm, 1.0, t.x)
    gap = float(np.max(np.abs(t.values[1:, 0] / W1.values[1:] - 1)))
    ratio, _ = convergence_order(bm, constant(1.0), 10.0, 800)
    report(5, gap <= 1e-3 and 2.5 <= ratio <= 6.0, f"sup rel gap {gap:.2e} (<= 1e-3), halving ratio {ratio:.2f}")


@pytest.mark.slow
def test_criterion_06_exit_law_monte_carlo():
    bm = brownian_model()
    t0 = time.perf_counter()
    cfg = SimConfig(dt=1e-3, x_stop=2.0, seed=20260601)
    p = monte_carlo(ExperimentSpec(bm, constant(1.0), 1.0, ("hit_floor",)), cfg, replicates=10_000)["hit_floor"]
    R = exponential(1.0)
    w = monte_carlo(ExperimentSpec(bm, R, 1.0, ("weighted_exit",)), cfg, replicates=10_000)["weighted_exit"]
    dt = time.perf_counter() - t0
    exact_p = 1 / (math.e + 1)
    exact_w = weighted_exit(solve_w_omega(bm, R, x_max=2.0, n=2000), 1.0, 0.0, 2.0)
    zp = (p.mean - exact_p) / p.stderr
    zw = (w.mean - exact_w) / w.stderr
    report(6, abs(zp) <= 3 and abs(zw) <= 3 and dt < 120,
           f"P {p.mean:.4f} vs {exact_p:.5f} (z={zp:+.2f}); weighted {w.mean:.4f} vs {exact_w:.5f} (z={zw:+.2f}); "
           f"{dt:.1f} s")


@pytest.mark.slow
def test_criterion_07_moment_oracle():
    bm = brownian_model()
    R = power(1.0, 2.0)
    t0 = time.perf_counter()
    tabs = moment_recursion(bm, R, 1)
    m0, m1, qerr = float(tabs[0].at(1.0)), float(tabs[1].at(1.0)), tabs[1].error_at(1.0)
    cfg = SimConfig(dt=1e-3, adapt=1e-3, dt_max=1.0, x_stop=1000.0, seed=20260607)
    reps = monte_carlo(ExperimentSpec(bm, R, 1.0, ("explosion_time_moment", "reach_stop")), cfg, replicates=16_000)
    mc = reps["explosion_time_moment"]
    accepted = int(round(reps["reach_stop"].mean * mc.n))
    dt = time.perf_counter() - t0
    ok = (m0 == 1 - math.exp(-1)) and abs(mc.mean - m1) <= mc.half_width + qerr and accepted >= 10_000 and dt < 300
    report(7, ok, f"m0(1)={m0:.12g}; m1(1) quad {m1:.5f} (+-{qerr:.1e}) vs MC {mc.mean:.5f} +- {mc.half_width:.5f} "
                  f"({accepted} accepted); {dt:.0f} s")


@pytest.mark.slow
def test_criterion_08_regime_a_trend():
    bm = brownian_model()
    t0 = time.perf_counter()
    cfg = SimConfig(dt=0.01, adapt=1e-4, dt_max=1.0, x_stop=4100.0, seed=20260608)
    rep = verify_thm1(bm, power(1.0, 2.0), [10.0, 20.0, 40.0], cfg, n_accept=4000)
    dt = time.perf_counter() - t0
    ex = [r.exceed for r in rep.rows]
    ok = rep.regime == "A" and all(r.n == 4000 for r in rep.rows) and ex[0] > ex[1] > ex[2] and ex[2] <= 0.15
    report(8, ok and dt < 900, "P(|ratio-1|>0.25) at 10/20/40: " + " > ".join(f"{e:.3f}" for e in ex)
           + f" (final <= 0.15); {dt:.0f} s")


@pytest.mark.slow
def test_criterion_09_regime_b_law():
    bm = brownian_model()
    t0 = time.perf_counter()
    cfg = SimConfig(dt=0.01, x_stop=45.0, seed=20260609)
    ref_cfg = SimConfig(dt=0.01, x_stop=30.0, seed=20260610)
    rep = verify_thm1(bm, exponential(1.0), [30.0], cfg, n_accept=2000, reference_config=ref_cfg)
    dt = time.perf_counter() - t0
    row = rep.rows[0]
    ok = rep.regime == "B" and row.n == 2000 and rep.reference.integral.size == 2000 and row.ks <= 0.1
    report(9, ok and dt < 900, f"KS distance {row.ks:.4f} at x=30 (<= 0.1), n=2000 each; {dt:.0f} s")


@pytest.mark.slow
def test_criterion_10_explosion_speed():
    bm = brownian_model()
    t0 = time.perf_counter()
    cfg_a = SimConfig(dt=0.01, adapt=1e-4, dt_max=1.0, x_stop=1000.0, seed=20260611)
    ra = verify_thm2(bm, power(1.0, 2.0), [0.5, 0.2, 0.1, 0.05, 0.02, 0.01], cfg_a, n_accept=1000)
    ta = time.perf_counter() - t0
    t1 = time.perf_counter()
    cfg_b = SimConfig(dt=0.01, x_stop=60.0, seed=20260612)
    rb = verify_thm2(bm, exponential(1.0), np.exp(-np.arange(5.0, 31.0, 5.0)), cfg_b, n_accept=1000)
    tb = time.perf_counter() - t1
    a, b = ra.smallest_resolvable(), rb.smallest_resolvable()
    ok = (a is not None and 0.8 <= a.median <= 1.2 and b is not None and 0.85 <= b.median <= 1.15
          and ta < 900 and tb < 900)
    report(10, ok, f"A: median X/phi^-1(t) {a.median:.3f} at t={a.t:g} ({ta:.0f} s); "
                   f"B: median X/(-log t) {b.median:.3f} at t={b.t:.2e} ({tb:.0f} s)")


def test_criterion_11_structural_invariants():
    t0 = time.perf_counter()
    bm, mixed = brownian_model(), mixed_model()
    checks = {}
    # zero downward overshoot: undershoot at the floor bounded by one continuous increment
    b = simulate_batch(mixed, constant(1.0), SimConfig(dt=1e-2, x_stop=5.0, seed=1), 1.0, np.arange(1000))
    h = b.hit_floor
    checks["downward overshoot"] = bool(h.any() and np.all(b.floor_under[h] <= b.floor_env[h]))
    # eta additivity and the Lamperti passage identity on recorded paths
    R = power(1.0, 2.0)
    add_ok = pas_ok = True
    for pid in range(20):
        rec, _ = simulate_path(bm, R, SimConfig(dt=0.01, x_stop=8.0, seed=2), 1.0, path_id=pid, levels=(3.0, 6.0))
        w = np.asarray(R.omega(rec.xi))
        n = len(rec.xi) - 1
        for i, j in ((0, n // 2), (n // 3, n - 1)):
            seg = np.sum(0.5 * (w[i:j] + w[i + 1:j + 1]) * np.diff(rec.t[i:j + 1]))
            add_ok &= math.isclose(rec.eta[j] - rec.eta[i], seg, rel_tol=1e-12, abs_tol=1e-15)
        T, X = lamperti_transform(rec)
        for lev in rec.events:
            k = int(np.flatnonzero(rec.xi >= lev)[0])
            pas_ok &= passage_time_X(T, X, lev) == rec.eta[k]
    checks["eta additivity"] = bool(add_ok)
    checks["Lamperti passage identity"] = bool(pas_ok)
    # factorial moment bound
    tabs = moment_recursion(bm, R, 4)
    B = omega_wp_integral(bm, R)
    checks["m_n factorial bound"] = all(np.all(t.values <= math.factorial(n) * B**n * (1 + 1e-9))
                                        for n, t in enumerate(tabs))
    # phi round trip
    phi, inv = phi_and_inverse(R, 1.0)
    xs = np.array([0.0, 0.5, 5.0, 50.0, 500.0])
    checks["phi round trip"] = bool(np.allclose(inv(phi(xs)), xs, atol=1e-10, rtol=1e-12))
    dt = time.perf_counter() - t0
    bad = [k for k, v in checks.items() if not v]
    report(11, not bad and dt < 60, f"{len(checks) - len(bad)}/{len(checks)} invariants green"
           + (f" (failed: {', '.join(bad)})" if bad else "") + f"; {dt:.1f} s")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
