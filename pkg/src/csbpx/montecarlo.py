"""Replicated simulation with per-path counter streams and mergeable summaries."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .simulation import PathBatch, SimConfig, simulate_batch

ESTIMATORS = {
    # name: (per-path value, conditioning)
    "hit_floor": (lambda b: b.hit_floor.astype(float), None),
    "reach_stop": (lambda b: b.reached_stop.astype(float), None),
    "weighted_exit": (lambda b: np.where(b.hit_floor, np.exp(-b.end_eta), 0.0), None),
    "explosion_time": (lambda b: b.T_inf, "reach_stop"),
    "explosion_time_sq": (lambda b: b.T_inf**2, "reach_stop"),
    "explosion_time_moment": (lambda b: np.where(b.reached_stop, b.T_inf, 0.0), None),
}


@dataclass
class ExperimentSpec:
    model: object
    rate: object
    start: float
    estimators: tuple = ("hit_floor",)
    levels: tuple = ()


@dataclass
class MonteCarloReport:
    """Aggregated estimator with a normal-approximation 95% interval."""

    estimator: str
    n: int
    mean: float
    variance: float
    ci: tuple
    conditioning: str | None
    acceptance: float
    seed: int
    samples: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)

    @property
    def half_width(self):
        return 0.5 * (self.ci[1] - self.ci[0])

    @property
    def stderr(self):
        return math.sqrt(self.variance / self.n) if self.n > 1 else math.nan

    def to_dict(self):
        return {"estimator": self.estimator, "n": self.n, "mean": self.mean, "variance": self.variance,
                "ci95": list(self.ci), "conditioning": self.conditioning, "acceptance": self.acceptance,
                "seed": self.seed}


def default_threads():
    try:
        return max(1, int(os.environ.get("CSBPX_THREADS", "1")))
    except ValueError:
        return 1


def run_batches(model, rate, config: SimConfig, start, n_paths, levels=(), record=False, threads=None,
                stream=0, first_id=0) -> list[PathBatch]:
    """Simulate ``n_paths`` paths in batches; result order is the batch order."""
    threads = threads or default_threads()
    bs = max(1, int(config.batch_size))
    chunks = [np.arange(first_id + s, first_id + min(s + bs, n_paths)) for s in range(0, n_paths, bs)]

    def work(ids):
        return simulate_batch(model, rate, config, start, ids, levels, record, stream)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(work, chunks))
    return [work(c) for c in chunks]


def merge_field(batches, getter):
    return np.concatenate([getter(b) for b in batches]) if batches else np.empty(0)


def summarize(name, values, accept, seed, conditioning):
    total = accept.size
    vals = values[accept]
    n = vals.size
    acc = n / total if total else math.nan
    if n == 0:
        return MonteCarloReport(name, 0, math.nan, math.nan, (math.nan, math.nan), conditioning, acc, seed, vals)
    mean = float(np.mean(vals))
    var = float(np.var(vals, ddof=1)) if n > 1 else math.nan
    hw = 1.959963984540054 * math.sqrt(var / n) if n > 1 else math.nan
    return MonteCarloReport(name, n, mean, var, (mean - hw, mean + hw), conditioning, acc, seed, vals)


def monte_carlo(spec: ExperimentSpec, config: SimConfig, threads=None, replicates=None):
    """Run ``replicates`` paths and return one report per estimator.

    Conditional estimators keep only paths that reached ``x_stop`` before
    the floor (the finite-horizon stand-in for explosion).
    """
    n = int(replicates or config.replicates)
    if n < 2:
        raise DomainError("monte_carlo needs at least 2 replicates")
    unknown = [e for e in spec.estimators if e not in ESTIMATORS]
    if unknown:
        raise DomainError(f"unknown estimator {unknown[0]!r}")
    batches = run_batches(spec.model, spec.rate, config, spec.start, n, spec.levels, threads=threads)
    reached = merge_field(batches, lambda b: b.reached_stop)
    out = {}
    for name in spec.estimators:
        fn, cond = ESTIMATORS[name]
        vals = merge_field(batches, fn)
        accept = reached if cond == "reach_stop" else np.ones(vals.size, dtype=bool)
        out[name] = summarize(name, vals, accept, config.seed, cond)
    return out
