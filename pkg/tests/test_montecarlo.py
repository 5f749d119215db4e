import math

import numpy as np
import pytest

from csbpx.errors import DomainError
from csbpx.experiments import weak_error_check
from csbpx.montecarlo import ExperimentSpec, monte_carlo, run_batches
from csbpx.omega import downward_laplace, h_omega
from csbpx.rates import constant, exponential
from csbpx.simulation import SimConfig


def test_ci_halves_with_four_times_paths(bm):
    spec = ExperimentSpec(bm, constant(1.0), 1.0, ("hit_floor",))
    cfg = SimConfig(dt=0.01, x_stop=6.0, seed=1)
    small = monte_carlo(spec, cfg, replicates=1000)["hit_floor"]
    big = monte_carlo(spec, cfg, replicates=2000)["hit_floor"]
    assert big.half_width / small.half_width == pytest.approx(1 / math.sqrt(2), rel=0.2)


def test_acceptance_rate_matches_m0(bm):
    spec = ExperimentSpec(bm, exponential(1.0), 1.0, ("explosion_time",))
    rep = monte_carlo(spec, SimConfig(dt=0.01, x_stop=15.0, seed=2), replicates=2000)["explosion_time"]
    se = math.sqrt(0.25 / 2000)
    assert abs(rep.acceptance - (1 - math.exp(-1))) < 3 * se + 0.01
    assert rep.conditioning == "reach_stop"


def test_empty_conditioning_reports_nan(bm):
    spec = ExperimentSpec(bm, exponential(1.0), 1.0, ("explosion_time",))
    rep = monte_carlo(spec, SimConfig(dt=0.01, x_stop=15.0, t_max=0.01, seed=2), replicates=20)["explosion_time"]
    assert rep.n == 0 and rep.acceptance == 0 and math.isnan(rep.mean)


def test_replicates_and_estimators_checked(bm):
    spec = ExperimentSpec(bm, constant(1.0), 1.0, ("nope",))
    with pytest.raises(DomainError):
        monte_carlo(spec, SimConfig(), replicates=10)
    with pytest.raises(DomainError):
        monte_carlo(ExperimentSpec(bm, constant(1.0), 1.0), SimConfig(), replicates=1)


def test_threads_do_not_change_results(bm):
    cfg = SimConfig(dt=0.01, x_stop=4.0, seed=5, batch_size=64)
    a = run_batches(bm, exponential(1.0), cfg, 1.0, 300, threads=1)
    b = run_batches(bm, exponential(1.0), cfg, 1.0, 300, threads=3)
    assert np.array_equal(np.concatenate([x.end_eta for x in a]), np.concatenate([x.end_eta for x in b]))


def test_downward_laplace_by_simulation(bm):
    R = exponential(1.0)
    exact = downward_laplace(bm, R, 1.0, 0.1, table=h_omega(bm, R))
    # paths reaching 8 return to 0.1 with probability about e^{-8}; that mass is dropped
    spec = ExperimentSpec(bm, R, 1.0, ("weighted_exit",))
    rep = monte_carlo(spec, SimConfig(dt=2e-3, x_stop=8.0, c_floor=0.1, seed=6), replicates=4000)["weighted_exit"]
    assert abs(rep.mean - exact) < 3 * rep.stderr


@pytest.mark.parametrize("name", ["bm", "cp"])
def test_weak_error(name, request):
    model = request.getfixturevalue(name)
    rows = weak_error_check(model, [1.0, 5.0], SimConfig(dt=0.01, seed=7), n=4000, s=0.5)
    for r in rows:
        assert abs(r.z) < 3.0 + 0.01 / r.stderr
