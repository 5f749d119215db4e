"""Monte Carlo verification of the explosion-time limit theorems.

Paths are conditioned on explosion by rejection (they must reach ``x_stop``
before the floor).  Batches are drawn in path-id order, so for fixed seeds
the accepted set does not depend on thread count or round sizes.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .asymptotics import estimate_lambda
from .errors import DomainError
from .levy import LevyModel, psi
from .montecarlo import default_threads, run_batches, summarize
from .rates import ExponentialRate, RateFunction
from .simulation import SimConfig, residual_clock

REFERENCE_STREAM = 7


def _accepted(model, rate, config, start, n_accept, levels=(), record=False, threads=None, reduce=None,
              stream=0, max_paths=None):
    """Yield ``reduce(batch)`` over batches until ``n_accept`` paths reached ``x_stop``.

    Returns ``(parts, accepted, total)``.  The last batch may overshoot
    ``n_accept``; callers trim by path order.
    """
    threads = threads or default_threads()
    reduce = reduce or (lambda b: b)
    max_paths = max_paths or 50 * n_accept + 1000
    parts, acc, total = [], 0, 0
    rate_hat = 0.5
    while acc < n_accept and total < max_paths:
        need = n_accept - acc
        n = int(min(max_paths - total, math.ceil(need / max(rate_hat, 0.02) * 1.05) + 8))
        got = 0
        chunk = max(1, config.batch_size) * max(1, threads)
        for s in range(0, n, chunk):
            m = min(chunk, n - s)
            for b in run_batches(model, rate, config, start, m, levels, record, threads, stream, first_id=total):
                parts.append(reduce(b))
                got += int(b.reached_stop.sum())
            total += m
            if acc + got >= n_accept:
                break
        acc += got
        rate_hat = max(acc / total, 0.02) if total else 0.5
    return parts, acc, total


# ---------------------------------------------------------------------------
# reference law


@dataclass
class LimitLawSample:
    integral: np.ndarray  # lambda gamma int_0^inf e^{-lambda xi_t} dt
    exp_rho: np.ndarray  # e^{-lambda varrho}
    rejected: int
    tail_bound: float
    x_ref: float


def sample_limit_law_B(model: LevyModel, lam, n, config: SimConfig, x_ref=None, tol=1e-6, threads=None):
    """Reference samples for the regime-B limits, from the free process started at 0.

    The integral is accumulated by the simulator with ``w(x) = lam gamma e^{-lam x}``;
    beyond ``x_stop`` the remainder ``e^{-lam xi}`` is added and samples whose
    remainder exceeds ``tol`` times the value are rejected.  ``varrho`` is
    the jump overshoot over ``x_ref`` (zero for creeping passages).
    """
    if not lam > 0:
        raise DomainError("lambda must be positive")
    g = model.gamma
    if not (0 < model.p < math.inf and 0 < g < math.inf):
        raise DomainError("reference law needs p, gamma in (0, inf)")
    x_ref = float(config.x_stop / 2 if x_ref is None else x_ref)
    if not x_ref < config.x_stop:
        raise DomainError("x_ref must lie below x_stop")
    rate = ExponentialRate(lam, 1.0 / (lam * g))
    cfg = dataclasses.replace(config, c_floor=None)

    def red(b):
        ok = b.reached_stop
        tail = b.T_inf - b.end_eta
        rho = np.where(b.ev_jump[:, 0], b.ev_over[:, 0], 0.0)
        return b.path_ids, ok, b.T_inf, tail, rho

    parts, _, _ = _accepted(model, rate, cfg, 0.0, n, (x_ref,), False, threads, red, REFERENCE_STREAM)
    ids = np.concatenate([p[0] for p in parts])
    ok = np.concatenate([p[1] for p in parts])
    val = np.concatenate([p[2] for p in parts])
    tail = np.concatenate([p[3] for p in parts])
    rho = np.concatenate([p[4] for p in parts])
    order = np.argsort(ids, kind="stable")
    ok, val, tail, rho = ok[order], val[order], tail[order], rho[order]
    good = ok & (tail <= tol * val)
    rejected = int(np.sum(ok & ~good))
    sel = np.flatnonzero(good)[:n]
    return LimitLawSample(val[sel], np.exp(-lam * rho[sel]), rejected, float(np.max(tail[sel], initial=0.0)), x_ref)


# ---------------------------------------------------------------------------
# residual explosion time after a level


@dataclass
class LevelRow:
    level: float
    n: int
    median: float
    mean: float
    ci: tuple
    exceed: float  # regime A: P(|ratio - 1| > band)
    ks: float = math.nan  # regime B: KS distance to the reference law
    ks_pvalue: float = math.nan
    ks_overshoot: float = math.nan  # phi(X(T_x^+)) / phi(x) vs e^{-lam varrho}
    samples: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)

    def to_dict(self):
        return {"level": self.level, "n": self.n, "median": self.median, "mean": self.mean, "ci95": list(self.ci),
                "exceed": self.exceed, "ks": self.ks, "ks_pvalue": self.ks_pvalue,
                "ks_overshoot": self.ks_overshoot}


@dataclass
class Thm1Report:
    regime: str
    lam: float
    rows: list
    accepted: int
    total: int
    reference: LimitLawSample | None = None

    @property
    def empty(self):
        return not self.rows


def verify_thm1(model: LevyModel, rate: RateFunction, levels, config: SimConfig, n_accept=1000, start=1.0,
                band=0.25, reference_n=None, reference_config=None, threads=None):
    """Distribution of ``(T_inf - T_x^+)`` normalised by ``phi`` at each level.

    Regime A reports the fraction of accepted paths with ``|ratio - 1| > band``;
    regime B reports the KS distance between ``(T_inf - T_x^+) / phi(X(T_x^+))``
    and ``sample_limit_law_B``.
    """
    levels = tuple(sorted(float(v) for v in levels))
    if not rate.explodes:
        return Thm1Report("none", math.nan, [], 0, 0)
    if not levels or levels[-1] >= config.x_stop:
        raise DomainError("levels must lie below x_stop")
    g = model.gamma
    reg = estimate_lambda(rate, g)
    L = len(levels)

    def red(b):
        ok = b.reached_stop
        tail = b.T_inf - b.end_eta
        resid = b.ev_after + tail[:, None]
        xpass = np.where(b.ev_jump, np.asarray(levels)[None, :] + b.ev_over, np.asarray(levels)[None, :])
        return b.path_ids[ok], resid[ok], xpass[ok]

    parts, acc, total = _accepted(model, rate, config, start, n_accept, levels, False, threads, red)
    ids = np.concatenate([p[0] for p in parts])
    resid = np.concatenate([p[1] for p in parts]).reshape(-1, L)
    xpass = np.concatenate([p[2] for p in parts]).reshape(-1, L)
    order = np.argsort(ids, kind="stable")[:n_accept]
    resid, xpass = resid[order], xpass[order]
    ref = None
    if reg.regime == "B":
        rc = reference_config or config
        ref = sample_limit_law_B(model, reg.lam, reference_n or resid.shape[0], rc, x_ref=levels[-1]
                                 if levels[-1] < rc.x_stop else None, threads=threads)
    rows = []
    for li, lev in enumerate(levels):
        if reg.regime == "A":
            r = resid[:, li] / float(rate.phi(lev, g))
        else:
            r = resid[:, li] / np.asarray(rate.phi(xpass[:, li], g))
        rep = summarize("ratio", r, np.ones(r.size, dtype=bool), config.seed, "reach_stop")
        row = LevelRow(lev, r.size, float(np.median(r)), rep.mean, rep.ci, float(np.mean(np.abs(r - 1) > band)),
                       samples=r)
        if ref is not None and ref.integral.size:
            ks = stats.ks_2samp(r, ref.integral)
            row.ks, row.ks_pvalue = float(ks.statistic), float(ks.pvalue)
            over = np.asarray(rate.phi(xpass[:, li], g)) / float(rate.phi(lev, g))
            row.ks_overshoot = float(stats.ks_2samp(over, ref.exp_rho).statistic)
        rows.append(row)
    return Thm1Report(reg.regime, reg.lam, rows, int(resid.shape[0]), total, ref)


# ---------------------------------------------------------------------------
# speed of explosion


@dataclass
class SpeedRow:
    t: float
    target: float  # phi^{-1}(t) in regime A, -log(t) / lambda in regime B
    n: int
    excluded: int
    median: float
    median_inf: float
    quartiles: tuple
    resolvable: bool

    def to_dict(self):
        return {"t": self.t, "target": self.target, "n": self.n, "excluded": self.excluded, "median": self.median,
                "median_inf": self.median_inf, "quartiles": list(self.quartiles), "resolvable": self.resolvable}


@dataclass
class Thm2Report:
    regime: str
    lam: float
    rows: list
    accepted: int
    total: int

    def smallest_resolvable(self):
        ok = [r for r in self.rows if r.resolvable]
        return min(ok, key=lambda r: r.t) if ok else None


def _speed_reduce(t_grid):
    t_grid = np.asarray(t_grid, dtype=float)

    def red(b):
        ok = b.reached_stop
        res = residual_clock(b)[ok]
        xi = b.traj_xi[ok]
        tail = (b.T_inf - b.end_eta)[ok]
        m = res.shape[0]
        val = np.full((m, t_grid.size), np.nan)
        vinf = np.full((m, t_grid.size), np.nan)
        for j, t in enumerate(t_grid):
            usable = (tail <= t) & (res[:, 0] >= t)  # T_inf - t must fall inside the path
            after = res <= t  # NaN compares False
            k = np.argmax(after, axis=1)  # first index at or after T_inf - t
            kb = np.maximum(k - 1, 0)
            # X(T_inf - t) is the state held on the step that straddles T_inf - t
            x_at = xi[np.arange(m), kb]
            suffix = np.where(after, xi, np.inf)
            x_inf = np.minimum(np.min(suffix, axis=1), x_at)
            val[usable, j] = x_at[usable]
            vinf[usable, j] = x_inf[usable]
        return b.path_ids[ok], val, vinf

    return red


def verify_thm2(model: LevyModel, rate: RateFunction, t_grid, config: SimConfig, n_accept=500, start=1.0,
                resolve_factor=10.0, min_fraction=0.9, threads=None):
    """``X(T_inf - t)`` against its predicted size for each ``t`` in ``t_grid``.

    A time ``t`` is excluded on a path when the analytic tail beyond
    ``x_stop`` exceeds ``t`` (the path is not resolved there).  A grid value
    is marked resolvable when ``t >= resolve_factor * phi(x_stop)`` and at
    least ``min_fraction`` of the accepted paths resolve it.
    """
    if not rate.explodes:
        return Thm2Report("none", math.nan, [], 0, 0)
    g = model.gamma
    reg = estimate_lambda(rate, g)
    t_grid = np.sort(np.asarray(t_grid, dtype=float))
    if np.any(t_grid <= 0):
        raise DomainError("t_grid must be positive")
    parts, acc, total = _accepted(model, rate, config, start, n_accept, (), True, threads, _speed_reduce(t_grid))
    ids = np.concatenate([p[0] for p in parts])
    order = np.argsort(ids, kind="stable")[:n_accept]
    val = np.concatenate([p[1] for p in parts]).reshape(-1, t_grid.size)[order]
    vinf = np.concatenate([p[2] for p in parts]).reshape(-1, t_grid.size)[order]
    phi_stop = float(rate.phi(config.x_stop, g))
    rows = []
    for j, t in enumerate(t_grid):
        target = float(rate.phi_inverse(t, g)) if reg.regime == "A" else -math.log(t) / reg.lam
        v = val[:, j]
        ok = np.isfinite(v)
        n = int(ok.sum())
        if n and target > 0:
            r = v[ok] / target
            ri = vinf[ok, j] / target
            med, medi = float(np.median(r)), float(np.median(ri))
            qs = tuple(float(q) for q in np.quantile(r, [0.25, 0.75]))
        else:
            med = medi = math.nan
            qs = (math.nan, math.nan)
        resolvable = bool(t >= resolve_factor * phi_stop and n >= min_fraction * v.size and target > 0)
        rows.append(SpeedRow(float(t), target, n, int(v.size - n), med, medi, qs, resolvable))
    return Thm2Report(reg.regime, reg.lam, rows, int(val.shape[0]), total)


# ---------------------------------------------------------------------------
# weak error of the Euler scheme


@dataclass
class WeakErrorRow:
    t: float
    exact: float
    mean: float
    stderr: float

    @property
    def z(self):
        return (self.mean - self.exact) / self.stderr if self.stderr > 0 else math.nan


def weak_error_check(model: LevyModel, times, config: SimConfig, n=4000, s=1.0, start=0.0, threads=None):
    """Empirical ``E[e^{-s (xi_t - start)}]`` against ``e^{t psi(s)}`` for the free process."""
    from .rates import constant

    rows = []
    for t in times:
        cfg = dataclasses.replace(config, c_floor=None, x_stop=math.inf, t_max=float(t))
        bs = run_batches(model, constant(math.inf), cfg, start, n, (), False, threads)
        x = np.concatenate([b.end_xi for b in bs])
        v = np.exp(-s * (x - start))
        rows.append(WeakErrorRow(float(t), math.exp(float(t) * float(psi(model, s))), float(np.mean(v)),
                                 float(np.std(v, ddof=1) / math.sqrt(v.size))))
    return rows
