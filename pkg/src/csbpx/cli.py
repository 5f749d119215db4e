"""Command line front end: ``csbpx run config.json [--out DIR] [--seed N] [--threads N]``.

Exit codes
    0  success
    2  invalid configuration (schema violation or out-of-domain value)
    3  a precondition of the requested computation fails (condition is named)
    4  numerical failure
    1  any other error

Every run writes ``manifest.json`` to the output directory, also on
failure; it lists each artifact with its sha256 and records the status.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile

import jsonschema
import numpy as np

from . import asymptotics, experiments, montecarlo, omega, scale
from .errors import CsbpError, DomainError, ModelError, NumericError, PreconditionError
from .levy import model_from_dict
from .rates import rate_from_dict
from .simulation import SimConfig

EXIT_OK, EXIT_OTHER, EXIT_SCHEMA, EXIT_PRECONDITION, EXIT_NUMERIC = 0, 1, 2, 3, 4
STOCHASTIC = {"simulate", "verify-thm1", "verify-thm2"}
KINDS = ["scale", "omega", "moments", "simulate", "verify-thm1", "verify-thm2", "classify", "prop46"]

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_num_or_inf = {"anyOf": [_num, {"const": "inf"}]}
_pos_list = {"type": "array", "items": _pos, "minItems": 1}

_density = {
    "type": "object",
    "required": ["type"],
    "properties": {"type": {"enum": ["exponential", "gamma", "pareto", "tilted"]}, "rate": _pos, "shape": _pos,
                   "alpha": _num, "xm": _pos, "base": {"type": "object"}},
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["kind", "model"],
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": KINDS},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "out": {"type": "string"},
        "threads": {"type": "integer", "minimum": 1},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sigma2": {"type": "number", "minimum": 0},
                "mu": _num,
                "jumps": {
                    "type": "object",
                    "required": ["type"],
                    "additionalProperties": False,
                    "properties": {
                        "type": {"enum": ["none", "compound_poisson", "power_tail"]},
                        "rate": _pos, "density": _density, "gaussian_variance": {"type": "number", "minimum": 0},
                        "coefficient": _pos, "exponent": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2},
                        "truncation": _pos,
                    },
                },
            },
        },
        "rate": {
            "type": "object",
            "required": ["type"],
            "additionalProperties": False,
            "properties": {
                "type": {"enum": ["power", "exponential", "constant", "tabulated"]},
                "c": {"type": "number", "minimum": 0}, "theta": _num, "lambda": _pos, "scale": _num_or_inf,
                "value": _num_or_inf, "x": {"type": "array", "items": _num, "minItems": 2},
                "R": {"type": "array", "items": _pos, "minItems": 2}, "head_exponent": _num,
                "tail": {"type": "object", "additionalProperties": False, "required": ["kind"],
                         "properties": {"kind": {"enum": ["power", "exponential", "zero"]}, "exponent": _num}},
            },
        },
        "grid": {
            "anyOf": [
                {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2},
                {"type": "object", "additionalProperties": False, "required": ["hi", "n"],
                 "properties": {"lo": _pos, "hi": _pos, "n": {"type": "integer", "minimum": 2},
                                "spacing": {"enum": ["uniform", "geometric"]}}},
            ]
        },
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt": _pos, "epsilon": {"anyOf": [_pos, {"type": "null"}]}, "x_stop": _num_or_inf,
                "c_floor": {"anyOf": [{"type": "number", "minimum": 0}, {"type": "null"}]}, "t_max": _num_or_inf,
                "replicates": {"type": "integer", "minimum": 2}, "bridge_correction": {"type": "boolean"},
                "adapt": {"type": "number", "minimum": 0}, "dt_max": _pos,
                "batch_size": {"type": "integer", "minimum": 1}, "max_steps": {"type": "integer", "minimum": 1},
                "lookahead": {"type": "number", "minimum": 0},
            },
        },
        "params": {"type": "object"},
    },
    "allOf": [],
}

_PARAMS = {
    "scale": {"q": {"type": "number", "minimum": 0}, "method": {"enum": ["auto", "talbot", "closed"]},
              "M": {"type": "integer", "minimum": 4}},
    "omega": {"x_max": _pos, "n": {"type": "integer", "minimum": 4}, "h": {"type": "boolean"}},
    "moments": {"n_max": {"type": "integer", "minimum": 0, "maximum": 40}, "x": _pos_list,
                "q": {"type": "array", "items": _num}},
    "simulate": {"start": _pos, "levels": _pos_list,
                 "estimators": {"type": "array", "items": {"enum": sorted(montecarlo.ESTIMATORS)}, "minItems": 1},
                 "paths_csv": {"type": "boolean"}},
    "verify-thm1": {"start": _pos, "levels": _pos_list, "n_accept": {"type": "integer", "minimum": 2},
                    "band": _pos, "reference_x_stop": _pos},
    "verify-thm2": {"start": _pos, "t_grid": _pos_list, "n_accept": {"type": "integer", "minimum": 2}},
    "classify": {},
    "prop46": {"case": {"enum": ["a", "b", "c"]}, "alpha": _num, "x": _pos_list, "gamma": _pos},
}
for _k, _props in _PARAMS.items():
    SCHEMA["allOf"].append({
        "if": {"properties": {"kind": {"const": _k}}, "required": ["kind"]},
        "then": {"properties": {"params": {"type": "object", "properties": _props, "additionalProperties": False}}},
    })
SCHEMA["allOf"].append({
    "if": {"properties": {"kind": {"enum": sorted(STOCHASTIC)}}, "required": ["kind"]},
    "then": {"required": ["seed"]},
})
SCHEMA["allOf"].append({
    "if": {"properties": {"kind": {"not": {"const": "scale"}}}, "required": ["kind"]},
    "then": {"required": ["rate"]},
})


class ConfigError(CsbpError):
    def __init__(self, message, path="$"):
        super().__init__(message)
        self.path = path


def validate(cfg):
    """Schema check; raises ``ConfigError`` with a JSON path to the first bad field."""
    v = jsonschema.Draft7Validator(SCHEMA)
    errs = sorted(v.iter_errors(cfg), key=lambda e: (len(list(e.absolute_path)), list(map(str, e.absolute_path))))
    if errs:
        # prefer the most specific error
        e = max(errs, key=lambda e: len(list(e.absolute_path)))
        path = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in e.absolute_path)
        raise ConfigError(e.message, path)


# ---------------------------------------------------------------------------
# output helpers


def fmt(v):
    return f"{float(v):.12g}"


def _clean(obj):
    """JSON-ready copy with floats rounded to 12 significant digits."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return float(fmt(v))
    return obj


class Writer:
    """Atomic writes into one directory, tracking hashes for the manifest."""

    def __init__(self, out):
        self.out = os.path.abspath(out)
        os.makedirs(self.out, exist_ok=True)
        self.files = {}

    def _commit(self, name, data: bytes):
        if os.path.basename(name) != name:
            raise ValueError("artifact names must be plain file names")
        fd, tmp = tempfile.mkstemp(dir=self.out, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, os.path.join(self.out, name))
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.files[name] = (hashlib.sha256(data).hexdigest(), len(data))

    def csv(self, name, header, rows):
        lines = [",".join(header)]
        for r in rows:
            lines.append(",".join(v if isinstance(v, str) else fmt(v) for v in r))
        self._commit(name, ("\n".join(lines) + "\n").encode())

    def json(self, name, obj, track=True):
        data = (json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n").encode()
        if track:
            self._commit(name, data)
        else:
            fd, tmp = tempfile.mkstemp(dir=self.out, prefix=f".{name}.", suffix=".tmp")
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, os.path.join(self.out, name))

    def manifest(self, status, exit_code, cfg_hash, kind, seed, error=None):
        outputs = [{"file": k, "sha256": v[0], "bytes": v[1]} for k, v in sorted(self.files.items())]
        self.json("manifest.json", {"status": status, "exit_code": exit_code, "kind": kind, "seed": seed,
                                    "config_sha256": cfg_hash, "outputs": outputs, "error": error}, track=False)


# ---------------------------------------------------------------------------
# dispatch


def _grid(spec, default):
    if spec is None:
        return default
    if isinstance(spec, list):
        g = np.asarray(spec, dtype=float)
    elif spec.get("spacing", "uniform") == "geometric":
        g = np.concatenate([[0.0], np.geomspace(spec.get("lo", 1e-3), spec["hi"], spec["n"])])
    else:
        g = np.linspace(0.0, spec["hi"], spec["n"] + 1)
    if g[0] != 0 or np.any(np.diff(g) <= 0):
        raise ConfigError("grid must start at 0 and increase", "$.grid")
    return g


def _sim_config(cfg):
    d = dict(cfg.get("sim", {}))
    for k in ("x_stop", "t_max"):
        if d.get(k) == "inf":
            d[k] = math.inf
    return SimConfig(seed=int(cfg.get("seed", 0)), **d)


def _run_scale(cfg, model, rate, w, threads):
    p = cfg.get("params", {})
    grid = _grid(cfg.get("grid"), np.linspace(0.0, 10.0, 1001))
    t = scale.compute_scale(model, p.get("q", 0.0), grid, p.get("method", "auto"), p.get("M", scale.DEFAULT_M))
    w.csv("scale.csv", ["x", "W", "W_p", "error_estimate"], zip(t.grid, t.values, t.W_p, t.error))
    w.json("summary.json", {"p": model.p, "gamma": model.gamma, "phi_prime_zero": model.phi_prime_zero, "q": t.q,
                            "shift": t.shift, "method": t.method, "M": t.M, "max_error": float(np.max(t.error)),
                            "fingerprint": t.fingerprint})


def _run_omega(cfg, model, rate, w, threads):
    p = cfg.get("params", {})
    x_max, n = p.get("x_max", 10.0), p.get("n", 200)
    t = omega.solve_w_omega(model, rate, x_max=x_max, n=n)
    rows = [(t.x[i], t.x[j], t.values[i, j]) for i in range(t.x.size) for j in range(i + 1)]
    w.csv("w_omega.csv", ["x", "y", "W_omega"], rows)
    summary = {"h": t.h, "richardson_error": t.error, "residual": t.residual}
    if p.get("h", True):
        ht = omega.h_omega(model, rate, n=n)
        w.csv("h_omega.csv", ["y", "H_omega"], zip(ht.x, ht.H))
        summary.update({"x_max_h": ht.x_max, "tail_bound": ht.tail_bound, "tail_parts": ht.tail_parts})
    w.json("summary.json", summary)


def _run_moments(cfg, model, rate, w, threads):
    p = cfg.get("params", {})
    n_max = p.get("n_max", 2)
    xs = np.asarray(p.get("x", [0.5, 1.0, 2.0, 5.0, 10.0]), dtype=float)
    grid = asymptotics.moment_grid(extra=xs)
    tabs = asymptotics.moment_recursion(model, rate, n_max, grid)
    header = ["x"] + [f"m_{n}" for n in range(n_max + 1)] + [f"err_{n}" for n in range(n_max + 1)]
    rows = [[x] + [float(t.at(x)) for t in tabs] + [t.error_at(x) for t in tabs] for x in xs]
    w.csv("moments.csv", header, rows)
    B = asymptotics.omega_wp_integral(model, rate)
    summary = {"B": B, "radius": 1.0 / B, "tail_bounds": [t.tail_bound for t in tabs]}
    if p.get("q"):
        ex = []
        for q in p["q"]:
            for x in xs:
                r = asymptotics.exp_moment(model, rate, q, x)
                ex.append((q, x, r.value, r.remainder_bound, float(r.terms)))
        w.csv("exp_moment.csv", ["q", "x", "value", "remainder_bound", "terms"], ex)
    w.json("summary.json", summary)


def _run_simulate(cfg, model, rate, w, threads):
    p = cfg.get("params", {})
    sc = _sim_config(cfg)
    spec = montecarlo.ExperimentSpec(model, rate, p.get("start", 1.0), tuple(p.get("estimators", ["hit_floor"])),
                                     tuple(p.get("levels", ())))
    if p.get("paths_csv", False):
        bs = montecarlo.run_batches(model, rate, sc, spec.start, sc.replicates, spec.levels, threads=threads)
        from .simulation import OUTCOME_NAMES

        rows = []
        for b in bs:
            for i in range(b.n):
                rows.append([str(int(b.path_ids[i])), OUTCOME_NAMES[int(b.outcome[i])], b.end_time[i], b.end_eta[i],
                             b.end_xi[i], b.T_inf[i]])
        w.csv("paths.csv", ["path", "outcome", "end_time", "end_eta", "end_xi", "T_inf"], rows)
    reps = montecarlo.monte_carlo(spec, sc, threads=threads)
    w.json("report.json", {"config": sc.to_dict(), "estimators": {k: v.to_dict() for k, v in reps.items()}})


def _run_thm1(cfg, model, rate, w, threads):
    p = cfg.get("params", {})
    sc = _sim_config(cfg)
    ref_cfg = None
    if "reference_x_stop" in p:
        import dataclasses

        ref_cfg = dataclasses.replace(sc, x_stop=p["reference_x_stop"])
    rep = experiments.verify_thm1(model, rate, p.get("levels", [10.0, 20.0, 40.0]), sc, p.get("n_accept", 1000),
                                  p.get("start", 1.0), p.get("band", 0.25), reference_config=ref_cfg,
                                  threads=threads)
    w.csv("thm1.csv", ["level", "n", "median", "mean", "ci_lo", "ci_hi", "exceed", "ks", "ks_pvalue"],
          [(r.level, r.n, r.median, r.mean, r.ci[0], r.ci[1], r.exceed, r.ks, r.ks_pvalue) for r in rep.rows])
    w.json("summary.json", {"regime": rep.regime, "lambda": rep.lam, "accepted": rep.accepted, "total": rep.total,
                            "acceptance": rep.accepted / rep.total if rep.total else None,
                            "rows": [r.to_dict() for r in rep.rows]})


def _run_thm2(cfg, model, rate, w, threads):
    p = cfg.get("params", {})
    sc = _sim_config(cfg)
    rep = experiments.verify_thm2(model, rate, p.get("t_grid", [0.1, 0.05, 0.02, 0.01]), sc, p.get("n_accept", 500),
                                  p.get("start", 1.0), threads=threads)
    w.csv("thm2.csv", ["t", "target", "n", "excluded", "median", "median_inf", "q25", "q75", "resolvable"],
          [(r.t, r.target, r.n, r.excluded, r.median, r.median_inf, r.quartiles[0], r.quartiles[1],
            "yes" if r.resolvable else "no") for r in rep.rows])
    w.json("summary.json", {"regime": rep.regime, "lambda": rep.lam, "accepted": rep.accepted, "total": rep.total})


def _run_classify(cfg, model, rate, w, threads):
    b = omega.classify_boundaries(model, rate)
    c = omega.check_h0_h1_h2(model, rate)
    w.json("classify.json", {"extinction": b.extinction, "explosion": b.explosion, "detail": b.detail,
                             "H0": c.H0, "H1": c.H1, "H2": c.H2, "lambda": c.lam, "conditions": c.detail})


def _run_prop46(cfg, model, rate, w, threads):
    p = cfg.get("params", {})
    case = p.get("case", "b")
    g = p.get("gamma", model.gamma)
    default_x = {"a": [10.0, 100.0, 1000.0], "b": [1.0, 5.0, 10.0, 20.0], "c": [1e-2, 1e-4, 1e-8]}[case]
    t = asymptotics.prop46_checks(rate, g, p.get("alpha", 0.5), p.get("x", default_x), case)
    names = sorted(t.ratios)
    w.csv("prop46.csv", ["x"] + names, [[x] + [t.ratios[k][i] for k in names] for i, x in enumerate(t.x)])
    w.json("summary.json", {"case": t.case, "limit": t.limit})


HANDLERS = {"scale": _run_scale, "omega": _run_omega, "moments": _run_moments, "simulate": _run_simulate,
            "verify-thm1": _run_thm1, "verify-thm2": _run_thm2, "classify": _run_classify, "prop46": _run_prop46}


def run(config_path, out=None, seed=None, threads=None, stderr=None):
    """Execute one configuration; returns the exit code."""
    stderr = stderr or sys.stderr
    cfg, cfg_hash, kind = None, None, None
    try:
        with open(config_path, "rb") as fh:
            raw = fh.read()
        cfg_hash = hashlib.sha256(raw).hexdigest()
        cfg = json.loads(raw)
    except (OSError, json.JSONDecodeError) as exc:
        cfg = {}
        err = exc
    else:
        err = None
    out = out or (cfg.get("out") if isinstance(cfg, dict) else None) or "out"
    w = Writer(out)
    if err is not None:
        print(f"error: cannot read config: {err}", file=stderr)
        w.manifest("error", EXIT_SCHEMA, cfg_hash, None, None, {"type": "config", "message": str(err), "path": "$"})
        return EXIT_SCHEMA
    if seed is not None and isinstance(cfg, dict):
        cfg["seed"] = int(seed)
    code, status, error = EXIT_OK, "ok", None
    try:
        validate(cfg)
        kind = cfg["kind"]
        threads = threads or cfg.get("threads") or montecarlo.default_threads()
        model = model_from_dict(cfg["model"])
        rate = rate_from_dict(cfg["rate"]) if "rate" in cfg else None
        HANDLERS[kind](cfg, model, rate, w, threads)
    except ConfigError as exc:
        code, error = EXIT_SCHEMA, {"type": "schema", "message": str(exc), "path": exc.path}
    except (DomainError, ModelError) as exc:
        code, error = EXIT_SCHEMA, {"type": "domain", "message": str(exc), "path": "$"}
    except PreconditionError as exc:
        code, error = EXIT_PRECONDITION, {"type": "precondition", "message": str(exc), "condition": exc.condition}
    except (NumericError, ArithmeticError) as exc:
        code, error = EXIT_NUMERIC, {"type": "numeric", "message": str(exc)}
    except Exception as exc:  # still leave a manifest behind
        code, error = EXIT_OTHER, {"type": "error", "message": f"{type(exc).__name__}: {exc}"}
    if code:
        status = "error"
        where = error.get("path") or error.get("condition") or ""
        print(f"error ({error['type']}{': ' + where if where else ''}): {error['message']}", file=stderr)
    w.manifest(status, code, cfg_hash, kind, cfg.get("seed") if isinstance(cfg, dict) else None, error)
    return code


def main(argv=None):
    ap = argparse.ArgumentParser(prog="csbpx", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment configuration")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output directory (default: config 'out' or ./out)")
    r.add_argument("--seed", type=int, default=None, help="override the configured seed")
    r.add_argument("--threads", type=int, default=None, help="worker threads (default: $CSBPX_THREADS or 1)")
    a = ap.parse_args(argv)
    return run(a.config, a.out, a.seed, a.threads)


if __name__ == "__main__":
    sys.exit(main())
