"""Branching-rate functions ``R`` and their weights ``omega = 1/R``.

Every variant carries endpoint metadata (behaviour of ``R`` at ``0+`` and at
infinity) so the integral tests can be decided from exponents instead of
quadrature, plus the tail integral ``Omega(x) = int_x^inf omega`` and its
inverse, from which ``phi = Omega / gamma`` follows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import DomainError, PreconditionError


@dataclass(frozen=True)
class Endpoint:
    """Asymptotic form of ``R``.

    At ``0+``: ``R ~ const * x**exponent`` (``exponent = 0`` when ``R(0) > 0``).
    At infinity: ``kind`` is ``"power"`` (``R ~ x**exponent``) or
    ``"exponential"`` (``R ~ e^{exponent x}``); ``"zero"`` means ``omega``
    vanishes identically.
    """

    kind: str
    exponent: float


class RateFunction:
    """Base class; subclasses implement ``omega``, ``tail`` and metadata."""

    head: Endpoint
    tail_end: Endpoint

    def R(self, x):
        with np.errstate(divide="ignore"):
            return 1.0 / self.omega(x)

    def omega(self, x):
        raise NotImplementedError

    def tail(self, x):
        """``int_x^inf omega(y) dy`` (``inf`` when the rate grows too slowly)."""
        raise NotImplementedError

    def tail_inverse(self, v):
        """Largest ``x >= 0`` with ``tail(x) >= v``; 0 when ``v >= tail(0)``."""
        v = np.asarray(v, dtype=float)
        out = np.array([self._tail_inverse_scalar(float(t)) for t in v.ravel()]).reshape(v.shape)
        return out if out.ndim else float(out)

    def _tail_inverse_scalar(self, v):
        if v >= float(self.tail(0.0)):
            return 0.0
        if v <= 0:
            return math.inf
        hi = 1.0
        while float(self.tail(hi)) > v:
            hi *= 2.0
        return optimize.brentq(lambda x: float(self.tail(x)) - v, 0.0, hi, xtol=1e-14, rtol=1e-15, maxiter=500)

    def local_scale(self, x):
        """Length over which ``omega`` changes by O(1): ``omega / |omega'|``."""
        raise NotImplementedError

    @property
    def explodes(self):
        """``int^inf 1/R < inf`` (condition H0)."""
        t = self.tail_end
        if t.kind == "zero":
            return True
        if t.kind == "exponential":
            return t.exponent > 0
        return t.exponent > 1

    @property
    def lam(self):
        """Regime index: 0 for power-like rates, the exponent for exponential ones."""
        return self.tail_end.exponent if self.tail_end.kind == "exponential" else 0.0

    @property
    def is_zero(self):
        return False

    def phi(self, x, gamma):
        """Normalised tail integral ``gamma^{-1} int_x^inf dy / R(y)``."""
        self._require_h0()
        return np.asarray(self.tail(x)) / gamma

    def phi_inverse(self, t, gamma):
        """Right inverse of ``phi``; clipped to 0 where ``t >= phi(0)``."""
        self._require_h0()
        return self.tail_inverse(np.asarray(t, dtype=float) * gamma)

    def _require_h0(self):
        if not self.explodes:
            raise PreconditionError("int^inf dy/R(y) diverges", condition="H0")

    def to_dict(self):
        raise NotImplementedError


class PowerRate(RateFunction):
    """``R(x) = scale * (c + x)**theta``; ``scale = inf`` gives ``omega = 0``."""

    def __init__(self, c=1.0, theta=2.0, scale=1.0):
        if c < 0:
            raise DomainError("power rate needs c >= 0")
        if not scale > 0:
            raise DomainError("rate scale must be positive")
        if c == 0 and theta < 0:
            raise DomainError("R must stay bounded away from 0 near the origin")
        self.c, self.theta, self.scale = float(c), float(theta), float(scale)
        self.head = Endpoint("power", self.theta if self.c == 0 else 0.0)
        self.tail_end = Endpoint("zero", 0.0) if self.is_zero else Endpoint("power", self.theta)

    def __repr__(self):
        return f"PowerRate(c={self.c}, theta={self.theta}, scale={self.scale})"

    @property
    def is_zero(self):
        return math.isinf(self.scale)

    def omega(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_zero:
            return np.zeros_like(x)
        with np.errstate(divide="ignore"):
            return (self.c + x) ** (-self.theta) / self.scale

    def tail(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_zero:
            return np.zeros_like(x)
        if self.theta <= 1:
            return np.full_like(x, math.inf)
        with np.errstate(divide="ignore"):
            return (self.c + x) ** (1.0 - self.theta) / ((self.theta - 1.0) * self.scale)

    def tail_inverse(self, v):
        v = np.asarray(v, dtype=float)
        if self.is_zero or self.theta <= 1:
            return super().tail_inverse(v)
        with np.errstate(divide="ignore"):
            x = (v * (self.theta - 1.0) * self.scale) ** (1.0 / (1.0 - self.theta)) - self.c
        return np.maximum(x, 0.0)

    def local_scale(self, x):
        x = np.asarray(x, dtype=float)
        if self.theta == 0 or self.is_zero:
            return np.full_like(x, math.inf)
        return (self.c + x) / abs(self.theta)

    def to_dict(self):
        d = {"type": "power", "c": self.c, "theta": self.theta}
        if self.scale != 1.0:
            d["scale"] = "inf" if self.is_zero else self.scale
        return d


class ExponentialRate(RateFunction):
    """``R(x) = scale * exp(lam * x)``."""

    def __init__(self, lam=1.0, scale=1.0):
        if not lam > 0:
            raise DomainError("exponential rate needs lambda > 0")
        if not (scale > 0 and np.isfinite(scale)):
            raise DomainError("rate scale must be positive and finite")
        self.lam_, self.scale = float(lam), float(scale)
        self.head = Endpoint("power", 0.0)
        self.tail_end = Endpoint("exponential", self.lam_)

    def __repr__(self):
        return f"ExponentialRate(lam={self.lam_}, scale={self.scale})"

    def omega(self, x):
        return np.exp(-self.lam_ * np.asarray(x, dtype=float)) / self.scale

    def tail(self, x):
        return np.exp(-self.lam_ * np.asarray(x, dtype=float)) / (self.lam_ * self.scale)

    def tail_inverse(self, v):
        v = np.asarray(v, dtype=float)
        with np.errstate(divide="ignore"):
            x = -np.log(v * self.lam_ * self.scale) / self.lam_
        return np.maximum(x, 0.0)

    def local_scale(self, x):
        return np.full_like(np.asarray(x, dtype=float), 1.0 / self.lam_)

    def to_dict(self):
        d = {"type": "exponential", "lambda": self.lam_}
        if self.scale != 1.0:
            d["scale"] = self.scale
        return d


class TabulatedRate(RateFunction):
    """Log-linear interpolant of ``R`` through positive knots.

    Below the first knot ``R`` follows ``x**head_exponent`` (constant when the
    first knot is at 0); beyond the last knot it follows the declared tail:
    ``("power", theta)``, ``("exponential", lam)`` or ``("zero", 0)``.
    """

    def __init__(self, x, R, head_exponent=0.0, tail=("power", 0.0)):
        x = np.asarray(x, dtype=float)
        R = np.asarray(R, dtype=float)
        if x.ndim != 1 or x.shape != R.shape or x.size < 2:
            raise DomainError("tabulated rate needs matching 1-d knot arrays of length >= 2")
        if np.any(np.diff(x) <= 0) or x[0] < 0:
            raise DomainError("tabulated knots must be nonnegative and strictly increasing")
        if np.any(~(R > 0)) or np.any(~np.isfinite(R)):
            raise DomainError("tabulated rate values must be positive and finite")
        kind, expo = tail
        if kind not in ("power", "exponential", "zero"):
            raise DomainError(f"unknown tail kind {kind!r}")
        if x[0] == 0:
            head_exponent = 0.0
        self.x, self.logR = x, np.log(R)
        self.head = Endpoint("power", float(head_exponent))
        self.tail_end = Endpoint(kind, float(expo))
        self.slope = np.diff(self.logR) / np.diff(x)  # d log R / dx per cell
        # tail integral at each knot, accumulated from the right
        seg = np.empty(x.size - 1)
        h = np.diff(x)
        w0 = np.exp(-self.logR[:-1])
        for i, (b, hh, w) in enumerate(zip(self.slope, h, w0)):
            seg[i] = w * hh if abs(b * hh) < 1e-12 else w * -math.expm1(-b * hh) / b
        self._tail_last = self._tail_beyond(x[-1])
        self._knot_tail = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]]) + self._tail_last

    def __repr__(self):
        return f"TabulatedRate(knots={self.x.size}, tail={self.tail_end})"

    def _log_R(self, x):
        x = np.asarray(x, dtype=float)
        out = np.interp(x, self.x, self.logR)
        lo = x < self.x[0]
        if np.any(lo):
            with np.errstate(divide="ignore"):
                out[lo] = self.logR[0] + self.head.exponent * np.log(x[lo] / self.x[0])
        hi = x > self.x[-1]
        if np.any(hi):
            k, e = self.tail_end.kind, self.tail_end.exponent
            if k == "power":
                out[hi] = self.logR[-1] + e * np.log(x[hi] / self.x[-1])
            elif k == "exponential":
                out[hi] = self.logR[-1] + e * (x[hi] - self.x[-1])
            else:
                out[hi] = math.inf
        return out

    def omega(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-self._log_R(np.atleast_1d(x))).reshape(x.shape)

    def _tail_beyond(self, x):
        """Tail integral from ``x >= last knot``."""
        k, e = self.tail_end.kind, self.tail_end.exponent
        w = math.exp(-self.logR[-1])
        xN = self.x[-1]
        if k == "zero":
            return 0.0
        if k == "exponential":
            return w * math.exp(-e * (x - xN)) / e if e > 0 else math.inf
        if e <= 1:
            return math.inf
        return w * xN / (e - 1) * (x / xN) ** (1 - e)

    def tail(self, x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x)
        out = np.empty_like(flat)
        for n, v in enumerate(flat):
            if v >= self.x[-1]:
                out[n] = self._tail_beyond(v)
            elif v >= self.x[0]:
                i = min(np.searchsorted(self.x, v, side="right") - 1, self.x.size - 2)
                b, w = self.slope[i], math.exp(-self.logR[i])
                d0, d1 = v - self.x[i], self.x[i + 1] - self.x[i]
                # int_v^{x_{i+1}} w exp(-b (y - x_i)) dy
                part = w * (d1 - d0) if abs(b * d1) < 1e-12 else w * (math.exp(-b * d0) - math.exp(-b * d1)) / b
                out[n] = part + self._knot_tail[i + 1]
            else:
                a, x0, w0 = self.head.exponent, self.x[0], math.exp(-self.logR[0])
                # int_v^{x0} w0 (y/x0)^{-a} dy
                if a == 1:
                    part = w0 * x0 * math.log(x0 / v) if v > 0 else math.inf
                elif v == 0 and a > 1:
                    part = math.inf
                else:
                    part = w0 * x0 ** a * (x0 ** (1 - a) - v ** (1 - a)) / (1 - a)
                out[n] = part + self._knot_tail[0]
        return out.reshape(x.shape)

    def local_scale(self, x):
        x = np.asarray(x, dtype=float)
        eps = 1e-6 * np.maximum(1.0, x)
        d = (self._log_R(x + eps) - self._log_R(np.maximum(x - eps, 0.0))) / (x + eps - np.maximum(x - eps, 0.0))
        with np.errstate(divide="ignore"):
            return np.where(np.abs(d) > 0, 1.0 / np.abs(d), math.inf)

    def to_dict(self):
        return {"type": "tabulated", "x": self.x.tolist(), "R": np.exp(self.logR).tolist(),
                "head_exponent": self.head.exponent,
                "tail": {"kind": self.tail_end.kind, "exponent": self.tail_end.exponent}}


def power(c=1.0, theta=2.0, scale=1.0):
    return PowerRate(c, theta, scale)


def exponential(lam=1.0, scale=1.0):
    return ExponentialRate(lam, scale)


def constant(value=1.0):
    """``R`` identically equal to ``value`` (``inf`` gives ``omega = 0``)."""
    return PowerRate(1.0, 0.0, value)


def rate_from_dict(d):
    kind = d.get("type")
    if kind == "power":
        scale = d.get("scale", 1.0)
        return PowerRate(d.get("c", 0.0), d["theta"], math.inf if scale == "inf" else scale)
    if kind == "exponential":
        return ExponentialRate(d["lambda"], d.get("scale", 1.0))
    if kind == "constant":
        v = d.get("value", 1.0)
        return constant(math.inf if v == "inf" else v)
    if kind == "tabulated":
        t = d.get("tail", {"kind": "power", "exponent": 0.0})
        return TabulatedRate(d["x"], d["R"], d.get("head_exponent", 0.0), (t["kind"], t.get("exponent", 0.0)))
    raise DomainError(f"unknown rate type {kind!r}")
