"""Euler simulation of the driving process, the additive functional
``eta(t) = int_0^t omega(xi_s) ds`` and the Lamperti time change.

Paths are advanced in vectorised batches.  Per step the continuous part
moves by ``drift dt + sigma sqrt(dt) Z`` (sigma includes the Gaussian
stand-in for truncated small jumps), then the compound-Poisson jumps of the
step are added at its end.  ``eta`` uses the trapezoid rule on the
continuous part.  Crossings of the floor and of upward levels between grid
points are detected with the Brownian-bridge probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericError, PreconditionError
from .levy import JumpMeasure, LevyModel
from .omega import classify_boundaries
from .rates import RateFunction
from .rng import CounterRNG

EXTINCT, EXTINGUISHED, EXPLODED, DRIFTS, CENSORED = range(5)
OUTCOME_NAMES = ("Extinct", "Extinguished", "Exploded", "DriftsToInfinity", "Censored")

SLOT_NORMAL, SLOT_COUNT, SLOT_FLOOR = 0, 1, 2
SLOT_LEVEL0 = 16  # bridge uniforms for upward levels
SLOT_JUMP0 = 1024  # jump sizes


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``adapt > 0`` lets the step grow to ``adapt * ell(xi)**2`` (capped at
    ``dt_max``) where ``ell = omega / |omega'|`` is the scale on which the
    weight varies; ``c_floor=None`` disables the lower barrier and
    ``x_stop=inf`` the upper one.
    """

    dt: float = 1e-2
    epsilon: float | None = None
    x_stop: float = 100.0
    c_floor: float | None = 0.0
    t_max: float = math.inf
    seed: int = 0
    replicates: int = 1000
    bridge_correction: bool = True
    adapt: float = 0.0
    dt_max: float = 1.0
    batch_size: int = 512
    max_steps: int = 10_000_000
    lookahead: float = 0.0  # horizon after the last level for the running-infimum check

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if self.c_floor is not None and self.c_floor < 0:
            raise DomainError("c_floor must be nonnegative")
        if self.epsilon is not None and not self.epsilon > 0:
            raise DomainError("epsilon must be positive")
        if self.dt_max < self.dt:
            object.__setattr__(self, "dt_max", self.dt)

    def to_dict(self):
        d = dict(self.__dict__)
        for k in ("x_stop", "t_max"):
            if math.isinf(d[k]):
                d[k] = "inf"
        return d


def sim_model(model: LevyModel, epsilon=None) -> LevyModel:
    """Model the simulator actually runs: a power tail is re-truncated at
    ``epsilon`` with the removed jumps folded into the Gaussian part."""
    j = model.jumps
    if epsilon is None or j.kind != "power_tail":
        return model
    jm = JumpMeasure.power_tail(j.params["coefficient"], j.params["exponent"], epsilon)
    return LevyModel(model.sigma2, model.mu, jm)


@dataclass
class PathBatch:
    """Per-path results of one batch (arrays indexed like ``path_ids``)."""

    path_ids: np.ndarray
    outcome: np.ndarray
    end_time: np.ndarray  # tau at termination (xi time)
    end_eta: np.ndarray  # eta at termination
    end_xi: np.ndarray
    T_inf: np.ndarray  # explosion time estimate (NaN unless Exploded)
    bias: np.ndarray
    levels: tuple
    ev_time: np.ndarray  # (n, L) passage times, NaN if not reached
    ev_eta: np.ndarray
    ev_over: np.ndarray  # raw overshoot over the level
    ev_jump: np.ndarray  # crossing happened by a jump
    floor_under: np.ndarray  # c - xi at the floor crossing step (0 for bridge detections)
    floor_env: np.ndarray  # |continuous increment| of that step
    ev_after: np.ndarray  # eta accumulated after each passage, up to termination
    steps: int
    traj_t: np.ndarray | None = None
    traj_xi: np.ndarray | None = None
    traj_eta: np.ndarray | None = None

    @property
    def n(self):
        return self.path_ids.size

    @property
    def hit_floor(self):
        return (self.outcome == EXTINCT) | (self.outcome == EXTINGUISHED)

    @property
    def reached_stop(self):
        return (self.outcome == EXPLODED) | (self.outcome == DRIFTS)


class _Stepper:
    def __init__(self, model, rate, cfg: SimConfig, stream=0):
        self.model = model
        self.rate = rate
        self.cfg = cfg
        self.sm = sim_model(model, cfg.epsilon)
        self.sig = math.sqrt(self.sm.sigma2_eff)
        self.drift = self.sm.drift
        self.jumps = self.sm.jumps
        self.rng = CounterRNG(cfg.seed, stream)
        b = classify_boundaries(model, rate)
        self.extinction = b.extinction == "yes"
        self.h0 = rate.explodes
        self.lam = rate.lam
        self.gamma = model.gamma
        if self.jumps.active:
            m = self.jumps.rate * cfg.dt_max
            self.kmax = int(max(16, math.ceil(m + 10 * math.sqrt(m) + 10)))

    def dt_eff(self, a, t):
        cfg = self.cfg
        dt = np.full(a.shape, cfg.dt)
        if cfg.adapt > 0:
            ell = np.asarray(self.rate.local_scale(np.maximum(a, 0.0)), dtype=float)
            with np.errstate(over="ignore", invalid="ignore"):
                dt = np.clip(cfg.adapt * ell**2, cfg.dt, cfg.dt_max)
        if math.isfinite(cfg.t_max):
            dt = np.minimum(dt, cfg.t_max - t)
        return dt

    def omega(self, x):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return np.asarray(self.rate.omega(x), dtype=float)

    def jump_sum(self, ids, step, dt):
        J = np.zeros(ids.size)
        if not self.jumps.active:
            return J
        m = self.jumps.rate * dt
        u = self.rng.uniform(ids, step, SLOT_COUNT)
        pmf = np.exp(-m)
        cdf = pmf.copy()
        N = np.zeros(ids.size, dtype=int)
        for k in range(self.kmax):
            more = u > cdf
            if not more.any():
                break
            N += more
            pmf = pmf * m / (k + 1)
            cdf = cdf + pmf
        for k in range(int(N.max(initial=0))):
            sel = N > k
            v = self.rng.uniform(ids[sel], step, SLOT_JUMP0 + k)
            J[sel] += self.jumps.density.ppf(v)
        return J

    def phi(self, x):
        if not self.h0:
            return np.full_like(np.asarray(x, dtype=float), math.inf)
        return np.asarray(self.rate.tail(x), dtype=float) / self.gamma

    def run(self, start, path_ids, levels=(), record=False) -> PathBatch:
        cfg = self.cfg
        start = float(start)
        if cfg.c_floor is not None and not start > cfg.c_floor:
            raise DomainError("start must lie above c_floor")
        ids = np.asarray(path_ids, dtype=np.uint64)
        n = ids.size
        levels = tuple(sorted(float(v) for v in levels))
        lv = np.array(levels + (cfg.x_stop,))
        L = lv.size
        xi = np.full(n, start)
        t = np.zeros(n)
        eta = np.zeros(n)
        alive = np.ones(n, dtype=bool)
        outcome = np.full(n, CENSORED)
        end_t, end_eta, end_xi = np.zeros(n), np.zeros(n), np.full(n, start)
        ev = {k: np.full((n, L), np.nan) for k in ("t", "eta", "over")}
        ev_jump = np.zeros((n, L), dtype=bool)
        ev_after = np.zeros((n, L))
        for li, lev in enumerate(lv):
            if start >= lev:
                ev["t"][:, li] = 0.0
                ev["eta"][:, li] = 0.0
                ev["over"][:, li] = start - lev
        floor_under = np.full(n, np.nan)
        floor_env = np.full(n, np.nan)
        traj = ([t.copy()], [xi.copy()], [eta.copy()]) if record else None
        sig, d, c = self.sig, self.drift, cfg.c_floor
        step = 0
        if start >= cfg.x_stop:
            alive[:] = False
            outcome[:] = EXPLODED if self.h0 else DRIFTS
        while alive.any():
            if step >= cfg.max_steps:
                break
            idx = np.flatnonzero(alive)
            pid = ids[idx]
            a, ti, ei = xi[idx], t[idx], eta[idx]
            dt = self.dt_eff(a, ti)
            sq = np.sqrt(dt)
            Z = self.rng.normal(pid, step, SLOT_NORMAL)
            inc = d * dt + sig * sq * Z
            e = a + inc
            wa, we = self.omega(a), self.omega(e)
            dead = np.zeros(idx.size, dtype=bool)
            rec_t, rec_x, rec_e = ti + dt, e.copy(), ei + 0.5 * (wa + we) * dt
            prev = ~np.isnan(ev["t"][idx])  # levels passed before this step
            rel_cross = np.zeros((idx.size, L))  # eta offset of passages within this step
            # lower barrier (only the continuous part can go down)
            if c is not None:
                hit = e <= c
                frac = np.where(hit, (a - c) / np.where(hit, a - e, 1.0), 0.5)
                if cfg.bridge_correction and sig > 0:
                    with np.errstate(over="ignore", divide="ignore"):
                        pc = np.exp(-2.0 * (a - c) * np.maximum(e - c, 0.0) / (sig**2 * dt))
                    ub = self.rng.uniform(pid, step, SLOT_FLOOR)
                    hit_b = (~hit) & (ub < pc)
                else:
                    hit_b = np.zeros_like(hit)
                h = hit | hit_b
                if h.any():
                    wc = self.omega(np.full(h.sum(), c))
                    k = idx[h]
                    fr = frac[h]
                    end_t[k] = ti[h] + fr * dt[h]
                    end_eta[k] = ei[h] + fr * dt[h] * 0.5 * (wa[h] + wc)
                    end_xi[k] = c
                    outcome[k] = EXTINCT if self.extinction else EXTINGUISHED
                    floor_under[k] = np.where(hit[h], c - e[h], 0.0)
                    floor_env[k] = np.abs(inc[h])
                    dead |= h
                    rec_t[h], rec_x[h], rec_e[h] = end_t[k], c, end_eta[k]
            J = self.jump_sum(pid, step, dt)
            post = e + J
            # upward levels, x_stop last
            for li, lev in enumerate(lv):
                pend = np.isnan(ev["t"][idx, li]) & ~dead
                if not pend.any():
                    continue
                cont = pend & (e >= lev)
                brid = np.zeros_like(cont)
                if cfg.bridge_correction and sig > 0 and math.isfinite(lev):
                    cand = pend & ~cont
                    if cand.any():
                        with np.errstate(over="ignore"):
                            pu = np.exp(-2.0 * (lev - a[cand]) * (lev - e[cand]) / (sig**2 * dt[cand]))
                        ub = self.rng.uniform(pid[cand], step, SLOT_LEVEL0 + li)
                        brid[cand] = ub < pu
                jmp = pend & ~cont & ~brid & (post >= lev)
                crossed = cont | brid | jmp
                if not crossed.any():
                    continue
                fr = np.where(cont, (lev - a) / np.where(cont, e - a, 1.0), np.where(brid, 0.5, 1.0))
                wl = np.where(jmp, we, self.omega(np.full(a.shape, lev)))
                et = ti + fr * dt
                ee = ei + fr * dt * 0.5 * (wa + wl)
                k = idx[crossed]
                ev["t"][k, li] = et[crossed]
                ev["eta"][k, li] = ee[crossed]
                ev["over"][k, li] = np.where(jmp, post - lev, np.where(cont, e - lev, 0.0))[crossed]
                ev_jump[k, li] = jmp[crossed]
                rel_cross[crossed, li] = (ee - ei)[crossed]
                if li == L - 1:  # x_stop: hand off to the analytic tail
                    xs = np.where(jmp, post, lev)[crossed]
                    end_t[k] = et[crossed]
                    end_eta[k] = ee[crossed]
                    end_xi[k] = xs
                    outcome[k] = EXPLODED if self.h0 else DRIFTS
                    dead |= crossed
                    rec_t[crossed], rec_x[crossed], rec_e[crossed] = et[crossed], xs, ee[crossed]
            live = ~dead
            k = idx[live]
            xi[k] = post[live]
            t[k] = ti[live] + dt[live]
            eta[k] = ei[live] + 0.5 * (wa[live] + we[live]) * dt[live]
            if math.isfinite(cfg.t_max):
                cen = live & (t[idx] >= cfg.t_max * (1 - 1e-12))
                kc = idx[cen]
                end_t[kc], end_eta[kc], end_xi[kc] = t[kc], eta[kc], xi[kc]
                dead |= cen
            alive[idx[dead]] = False
            # eta gained after each passage, accumulated without subtracting large totals
            end_rel = rec_e - ei
            new = ~prev & ~np.isnan(ev["t"][idx])
            ev_after[idx] += np.where(prev, end_rel[:, None], np.where(new, end_rel[:, None] - rel_cross, 0.0))
            if record:
                rt, rx, re_ = (np.full(n, np.nan) for _ in range(3))
                rt[idx], re_[idx] = rec_t, rec_e
                rx[idx] = np.where(dead, rec_x, post)
                traj[0].append(rt)
                traj[1].append(rx)
                traj[2].append(re_)
            step += 1
        # still alive after max_steps: censored at the current state
        k = np.flatnonzero(alive)
        end_t[k], end_eta[k], end_xi[k] = t[k], eta[k], xi[k]
        T_inf = np.full(n, np.nan)
        bias = np.full(n, np.nan)
        ex = outcome == EXPLODED
        if ex.any():
            tail = self.phi(end_xi[ex])
            T_inf[ex] = end_eta[ex] + tail
            rel = 0.5 if self.lam == 0 else 1.0
            grid = cfg.dt_max * self.omega(end_xi[ex])
            bias[ex] = np.maximum(tail * rel, grid)
        out = PathBatch(ids, outcome, end_t, end_eta, end_xi, T_inf, bias, levels, ev["t"][:, :-1], ev["eta"][:, :-1],
                        ev["over"][:, :-1], ev_jump[:, :-1], floor_under, floor_env, ev_after[:, :-1], step)
        if record:
            out.traj_t, out.traj_xi, out.traj_eta = (np.stack(v, axis=1) for v in traj)
        return out


def simulate_batch(model, rate, config: SimConfig, start, path_ids, levels=(), record=False, stream=0) -> PathBatch:
    """Simulate the paths ``path_ids`` (their randomness depends only on the id)."""
    return _Stepper(model, rate, config, stream).run(start, path_ids, levels, record)


# ---------------------------------------------------------------------------
# single paths


@dataclass
class SimOutcome:
    kind: str
    time: float  # T_0^- for Extinct, T_inf estimate for Exploded, eta at termination otherwise
    bias_bound: float = math.nan
    diagnostics: dict = field(default_factory=dict)


@dataclass
class PathRecord:
    t: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    events: dict  # level -> dict(time, eta, overshoot, by_jump)
    floor: dict | None = None
    T_inf: float = math.nan

    @property
    def xi_max(self):
        return np.maximum.accumulate(self.xi)


def _path_from_batch(b: PathBatch, i=0):
    m = ~np.isnan(b.traj_t[i])
    events = {}
    for li, lev in enumerate(b.levels):
        if not np.isnan(b.ev_time[i, li]):
            events[lev] = {"time": float(b.ev_time[i, li]), "eta": float(b.ev_eta[i, li]),
                           "overshoot": float(b.ev_over[i, li]), "by_jump": bool(b.ev_jump[i, li])}
    floor = None
    if b.hit_floor[i]:
        floor = {"time": float(b.end_time[i]), "eta": float(b.end_eta[i]), "undershoot": float(b.floor_under[i]),
                 "envelope": float(b.floor_env[i])}
    rec = PathRecord(b.traj_t[i][m], b.traj_xi[i][m], b.traj_eta[i][m], events, floor, float(b.T_inf[i]))
    kind = OUTCOME_NAMES[b.outcome[i]]
    if kind == "Exploded":
        out = SimOutcome(kind, float(b.T_inf[i]), float(b.bias[i]), {"xi_stop": float(b.end_xi[i]), "eta_stop": float(b.end_eta[i])})
    else:
        out = SimOutcome(kind, float(b.end_eta[i]), math.nan, {"tau": float(b.end_time[i]), "xi": float(b.end_xi[i])})
    return rec, out


def simulate_path(model: LevyModel, rate: RateFunction, config: SimConfig, start, path_id=0, levels=()):
    """One recorded path and its boundary outcome."""
    b = simulate_batch(model, rate, config, start, [path_id], levels, record=True)
    return _path_from_batch(b, 0)


def lamperti_transform(path: PathRecord):
    """Time-changed trajectory ``(T, X)`` with ``T = eta(t)``, ``X = xi(t)``.

    Passage times of ``X`` are the ``eta``-images of those of ``xi`` on the grid.
    """
    d = np.diff(path.eta)
    if np.any(d <= 0):
        raise NumericError("eta is not strictly increasing along the path", detail={"min_increment": float(d.min())})
    return path.eta.copy(), path.xi.copy()


def passage_time_X(T, X, level):
    """First grid time at which the time-changed path is at or above ``level``."""
    k = np.flatnonzero(X >= level)
    return float(T[k[0]]) if k.size else math.inf


def estimate_explosion_time(eta_stop, xi_stop, rate: RateFunction, gamma, dt=0.0, regime_rel=None):
    """``T_inf ~ eta(tau_stop) + phi(xi(tau_stop))`` and a bias bound."""
    if not rate.explodes:
        raise PreconditionError("explosion estimate requested but int^inf 1/R diverges", condition="H0")
    tail = float(rate.tail(xi_stop)) / gamma
    rel = regime_rel if regime_rel is not None else (0.5 if rate.lam == 0 else 1.0)
    grid = dt * float(rate.omega(xi_stop))
    return eta_stop + tail, max(tail * rel, grid)


def running_max_ratio_check(path: PathRecord, threshold):
    """``min_{t >= t0} xi_t / max_{s<=t} xi_s`` where ``t0`` is the first time
    the running maximum reaches ``threshold``."""
    mx = path.xi_max
    k = np.flatnonzero(mx >= threshold)
    if not k.size:
        return math.nan
    return float(np.min(path.xi[k[0]:] / mx[k[0]:]))


def inf_ratio_after(path: PathRecord, level, horizon):
    """``inf_{tau <= s <= tau + horizon} xi_s / xi_tau`` after the first passage above ``level``."""
    k = np.flatnonzero(path.xi >= level)
    if not k.size:
        return math.nan
    k0 = k[0]
    w = (path.t >= path.t[k0]) & (path.t <= path.t[k0] + horizon)
    return float(np.min(path.xi[w]) / path.xi[k0])


def residual_clock(b: PathBatch):
    """``T_inf - eta`` along each recorded exploded path (reverse cumulative
    sums of the increments, so no cancellation against ``T_inf``)."""
    if b.traj_eta is None:
        raise DomainError("trajectory was not recorded")
    inc = np.diff(b.traj_eta, axis=1)
    inc = np.where(np.isnan(inc), 0.0, inc)
    rev = np.cumsum(inc[:, ::-1], axis=1)[:, ::-1]
    rev = np.concatenate([rev, np.zeros((b.n, 1))], axis=1)
    tail = b.T_inf - b.end_eta
    res = rev + tail[:, None]
    return np.where(np.isnan(b.traj_eta), np.nan, res)


def default_x_stop(rate: RateFunction, gamma, start, tol=1e-3, fallback=100.0):
    """``phi^{-1}(tol * phi(start))`` when the rate explodes, else ``fallback``."""
    if not rate.explodes:
        return fallback
    return float(rate.phi_inverse(tol * float(rate.phi(start, gamma)), gamma))


__all__ = [
    "SimConfig", "PathBatch", "PathRecord", "SimOutcome", "simulate_batch", "simulate_path", "lamperti_transform",
    "estimate_explosion_time", "running_max_ratio_check", "inf_ratio_after", "residual_clock", "default_x_stop",
    "sim_model", "OUTCOME_NAMES", "EXTINCT", "EXTINGUISHED", "EXPLODED", "DRIFTS", "CENSORED",
]
