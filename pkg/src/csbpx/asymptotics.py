"""Moments of the explosion time, the clock ``phi`` and regime diagnostics.

The moments ``m_n(x) = E_x[(T_inf)^n; T_inf < T_0^-]`` satisfy

    m_0(x) = 1 - e^{-px},   m_n(x) = n int_0^inf u(x, y) w(y) m_{n-1}(y) dy

with ``u`` the potential density of the driving process killed below 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import DomainError, PreconditionError
from .levy import LevyModel
from .omega import _h1_head_ok, _h1_tail_ok
from .rates import ExponentialRate, PowerRate, RateFunction
from .scale import compute_scale


# ---------------------------------------------------------------------------
# grids and kernels


def moment_grid(x_uniform=20.0, h=0.02, y_max=1e6, n_geom=600, extra=()):
    """Uniform nodes on ``[0, x_uniform]`` then geometric spacing up to ``y_max``."""
    a = np.arange(0.0, x_uniform + 0.5 * h, h)
    b = np.geomspace(a[-1], y_max, n_geom + 1)[1:]
    g = np.union1d(np.concatenate([a, b]), np.asarray(extra, dtype=float))
    return g


def _trap_weights(y):
    w = np.zeros_like(y)
    d = np.diff(y)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


class _Kernel:
    """Potential density ``u(x_i, y_j)`` on a grid, built from tabulated pieces."""

    def __init__(self, model: LevyModel, grid):
        p, g = model.p, model.gamma
        self.model = model
        self.grid = grid
        k = model.phi_prime_zero
        lag_max = grid[-1]
        if model.closed_form == "brownian":
            self.D = lambda z: np.zeros_like(np.asarray(z, dtype=float))
            self.D0 = 0.0
        else:
            table = compute_scale(model, 0.0, np.array([0.0, 1.0]))
            rem = table.remainder
            lag = np.union1d(np.linspace(0.0, 30.0, 3001), np.geomspace(30.0, max(lag_max, 31.0), 400))
            dv = rem(lag)
            self.D = lambda z: np.interp(z, lag, dv, right=0.0)
            self.D0 = float(dv[0])
        self.p, self.g, self.k = p, g, k

    def matrix(self, xs, ys):
        p, g, k = self.p, self.g, self.k
        X = xs[:, None]
        Y = ys[None, :]
        above = Y > X
        ex = np.exp(-p * X)
        with np.errstate(over="ignore"):
            low = k * np.exp(-p * np.abs(X - Y)) - ex / g
        u = np.where(above, -np.expm1(-p * X) / g, low)
        u = u + ex * self.D(Y)
        u = u - np.where(above, self.D(np.where(above, Y - X, 0.0)), 0.0)
        return np.maximum(u, 0.0)


@dataclass
class MomentTable:
    order: int
    grid: np.ndarray
    values: np.ndarray
    tail_bound: float
    quad_error: np.ndarray = field(default_factory=lambda: np.empty(0))

    def at(self, x):
        return np.interp(x, self.grid, self.values)

    def error_at(self, x):
        return float(np.interp(x, self.grid, self.quad_error)) + self.tail_bound


def _require_moments(model, rate):
    if not 0 < model.p < math.inf or not 0 < model.gamma < math.inf:
        raise PreconditionError("moment recursion needs 0 < p, gamma < inf", condition="p > 0")
    if not (_h1_head_ok(model, rate) and _h1_tail_ok(model, rate)):
        raise PreconditionError("int_{0+}^inf W_p/R diverges", condition="H1")


def omega_wp_integral(model: LevyModel, rate: RateFunction, y_max=1e6):
    """``B = int_0^inf w W_p`` (the series radius is ``1/B``)."""
    _require_moments(model, rate)
    k = model.phi_prime_zero
    xs = np.union1d(np.linspace(0.0, 30.0, 3001), np.geomspace(30.0, y_max, 800))
    table = compute_scale(model, 0.0, xs)
    wp = table.W_p
    w0 = np.asarray(rate.omega(xs), dtype=float)
    if not np.isfinite(w0[0]):
        # integrable singularity at 0: use the power head w ~ C y^{-a}
        a = rate.head.exponent
        y1 = xs[1]
        head = float(rate.omega(y1)) * float(wp[1]) * y1 / (2.0 - a if model.sigma2_eff > 0 else 1.0 - a)
        body = np.sum(_trap_weights(xs[1:]) * w0[1:] * wp[1:])
        return head + body + k * float(rate.tail(y_max))
    return float(np.sum(_trap_weights(xs) * w0 * wp) + k * float(rate.tail(y_max)))


def moment_recursion(model: LevyModel, rate: RateFunction, n_max=2, grid=None, richardson=True):
    """Tables ``m_0 .. m_{n_max}`` on ``grid`` (see ``moment_grid``).

    The integral over ``[0, y_max]`` uses the trapezoid rule (the kink of
    ``u`` at ``y = x`` sits on a node); beyond ``y_max`` the contribution is
    ``n u(x, inf) w-tail m_{n-1}(y_max)`` with ``u(x, inf) = (1 - e^{-px})/gamma``,
    and the bound uses ``u <= Phi'(0)``.  ``quad_error`` is the Richardson gap
    against the grid with every other node removed.
    """
    _require_moments(model, rate)
    y = moment_grid() if grid is None else np.asarray(grid, dtype=float)
    if y[0] != 0 or np.any(np.diff(y) <= 0):
        raise DomainError("moment grid must start at 0 and increase")
    kern = _Kernel(model, y)

    def run(yy):
        w = np.asarray(rate.omega(yy), dtype=float)
        w = np.where(np.isfinite(w), w, 0.0)  # u(x, 0) = 0 removes a singular endpoint weight
        K = kern.matrix(yy, yy) * (_trap_weights(yy) * w)[None, :]
        m = [-np.expm1(-model.p * yy)]
        tails = [0.0]
        Om = float(rate.tail(yy[-1]))
        uinf = -np.expm1(-model.p * yy) / model.gamma
        for n in range(1, n_max + 1):
            prev = m[-1]
            tail = n * uinf * Om * prev[-1]
            m.append(n * K @ prev + tail)
            tails.append(n * model.phi_prime_zero * Om * float(np.max(prev[-5:])))
        return m, tails

    m, tails = run(y)
    err = [np.zeros_like(y) for _ in m]
    if richardson:
        yc = y[::2] if y.size % 2 else np.append(y[:-1:2], y[-1])
        mc, _ = run(yc)
        for n in range(1, n_max + 1):
            err[n] = np.interp(y, yc, np.abs(np.interp(yc, y, m[n]) - mc[n]) / 3.0)
    return [MomentTable(n, y, m[n], tails[n], err[n]) for n in range(n_max + 1)]


@dataclass
class ExpMomentResult:
    value: float
    terms: int
    remainder_bound: float
    radius: float


def exp_moment(model: LevyModel, rate: RateFunction, q, x, tol=1e-10, n_cap=60, grid=None):
    """``E_x[e^{q T_inf}; T_inf < T_0^-] = sum_n q^n m_n(x) / n!``.

    Terms are added until the geometric envelope ``(|q| B)^{N+1} / (1 - |q| B)``
    of the remaining sum drops below ``tol``.
    """
    B = omega_wp_integral(model, rate)
    radius = 1.0 / B
    if abs(q) >= radius:
        raise DomainError(f"|q| must be below the radius {radius:.6g}")
    r = abs(q) * B
    N = 0
    while N < n_cap and (r ** (N + 1) / (1 - r) if r > 0 else 0.0) > tol:
        N += 1
    y = moment_grid(extra=[x]) if grid is None else np.union1d(grid, [x])
    tabs = moment_recursion(model, rate, N, y, richardson=False)
    val = sum(q**n / math.factorial(n) * float(t.at(x)) for n, t in enumerate(tabs))
    bound = r ** (N + 1) / (1 - r) if r > 0 else 0.0
    return ExpMomentResult(val, N + 1, bound, radius)


# ---------------------------------------------------------------------------
# phi and the regime index


def phi_and_inverse(rate: RateFunction, gamma):
    """Evaluators ``phi(x) = gamma^{-1} int_x^inf 1/R`` and its right inverse."""
    if not rate.explodes:
        raise PreconditionError("int^inf 1/R diverges", condition="H0")
    if not 0 < gamma < math.inf:
        raise DomainError("gamma must be positive and finite")

    def phi(x):
        return rate.phi(x, gamma)

    def phi_inv(t):
        return rate.phi_inverse(t, gamma)

    return phi, phi_inv


@dataclass
class RegimeReport:
    lam: float
    regime: str  # "A" (lambda = 0) or "B"
    side_b: float  # limsup phi^{-2} int_x^inf R^{-2} (finite required in regime B)
    side_b_ok: bool
    side_3a: float  # liminf phi(y) / phi(h y) at h = 2 (> 1 required in regime A)
    side_3a_ok: bool
    conclusive: bool = True
    spread: float = 0.0
    trail: list = field(default_factory=list)


def _side_b_numeric(rate, gamma, ys):
    vals = []
    for y in ys:
        num, _ = integrate.quad(lambda z: float(rate.omega(z)) ** 2, y, np.inf, limit=200)
        vals.append(num / float(rate.phi(y, gamma)) ** 2)
    return vals


def estimate_lambda(rate: RateFunction, gamma, ys=None, delta=1.0) -> RegimeReport:
    """Index ``lambda`` with ``phi(x + y) / phi(y) -> e^{-lambda x}`` and the side conditions."""
    if not rate.explodes:
        raise PreconditionError("int^inf 1/R diverges", condition="H0")
    if isinstance(rate, PowerRate) and not rate.is_zero:
        th, c = rate.theta, rate.c
        # phi(y)/phi(2y) -> 2^{theta-1};  phi^{-2} int R^{-2} ~ gamma^2 (theta-1)^2 / ((2 theta - 1)(c + y)) -> 0
        return RegimeReport(0.0, "A", 0.0, True, 2.0 ** (th - 1.0), th > 1.0)
    if isinstance(rate, ExponentialRate):
        lam = rate.lam_
        return RegimeReport(lam, "B", gamma**2 * lam / 2.0, True, math.inf, True)
    if ys is None:
        # stay where phi(2y) is representable
        y_hi = min(1e4, 0.5 * float(rate.phi_inverse(1e-280, gamma)))
        ys = np.geomspace(1.0, max(y_hi, 10.0), 25)
    ys = np.asarray(ys, dtype=float)
    lam_hat = []
    for y in ys:
        a, b = float(rate.phi(y, gamma)), float(rate.phi(y + delta, gamma))
        lam_hat.append(-math.log(b / a) / delta if a > 0 and b > 0 else math.nan)
    lam_hat = np.array(lam_hat)
    last = lam_hat[-5:]
    spread = float(np.nanmax(last) - np.nanmin(last)) if np.all(np.isfinite(last)) else math.inf
    conclusive = spread < 1e-3 * max(1.0, abs(float(last[-1])))
    lam = float(last[-1]) if conclusive else math.nan
    if conclusive and abs(lam) < 1e-3:
        lam = 0.0
    regime = "A" if lam == 0 else "B"
    sb = _side_b_numeric(rate, gamma, ys[-3:])
    s3 = [float(rate.phi(y, gamma)) / float(rate.phi(2 * y, gamma)) for y in ys[-3:]]
    return RegimeReport(lam, regime, float(max(sb)), bool(np.isfinite(max(sb))), float(min(s3)), min(s3) > 1.0,
                        conclusive, spread, lam_hat.tolist())


# ---------------------------------------------------------------------------
# tail-integral asymptotics


@dataclass
class Prop46Table:
    case: str
    x: np.ndarray
    ratios: dict  # name -> array over x
    limit: float


def _weighted_tail(g, alpha, x):
    """``int_x^inf e^{alpha(y-x)} g(y) dy`` in the lag variable, guarded against overflow."""

    def integrand(u):
        v = g(x + u)
        return math.exp(alpha * u + math.log(v)) if v > 0 else 0.0

    val, _ = integrate.quad(integrand, 0.0, np.inf, limit=400, epsabs=0.0, epsrel=1e-11)
    return val


def prop46_checks(rate: RateFunction, gamma, alpha, xs, case="b"):
    """Ratios whose limits follow from the tail index of ``f = w``.

    case ``"b"`` (``0 < alpha < lambda``), both tending to 1::

        double = (lambda - alpha) int_x^inf e^{alpha(y-x)} int_y^inf f / int_x^inf f
        single = (lambda - alpha) int_x^inf e^{alpha(y-x)} f / (lambda int_x^inf f)

    case ``"a"`` (``lambda = 0``): ``int_1^x e^{alpha(y-x)} f / int_x^inf f -> 0``.
    case ``"c"``: ``k(v) / (-log(v) / lambda) -> 1`` as ``v -> 0`` where ``k``
    inverts ``x -> int_x^inf f``; ``xs`` are the values ``v``.
    """
    if not rate.explodes:
        raise PreconditionError("int^inf 1/R diverges", condition="H0")
    xs = np.asarray(xs, dtype=float)
    lam = estimate_lambda(rate, gamma).lam
    f = lambda y: float(rate.omega(y))  # noqa: E731
    Om = lambda y: float(rate.tail(y))  # noqa: E731
    if case == "b":
        if not 0 < alpha < lam:
            raise DomainError("case b needs 0 < alpha < lambda")
        dbl, sgl = [], []
        for x in xs:
            tail = Om(x)
            d = _weighted_tail(Om, alpha, x)
            s = _weighted_tail(f, alpha, x)
            dbl.append((lam - alpha) * d / tail)
            sgl.append((lam - alpha) * s / (lam * tail))
        return Prop46Table("b", xs, {"double": np.array(dbl), "single": np.array(sgl)}, 1.0)
    if case == "a":
        if lam != 0:
            raise DomainError("case a needs lambda = 0")
        if not alpha > 0:
            raise DomainError("case a needs alpha > 0")
        r = []
        for x in xs:
            pts = np.linspace(1.0, x, 9)
            v = sum(integrate.quad(lambda y: math.exp(alpha * (y - x)) * f(y), a, b, limit=200)[0]
                    for a, b in zip(pts[:-1], pts[1:]))
            r.append(v / Om(x))
        return Prop46Table("a", xs, {"ratio": np.array(r)}, 0.0)
    if case == "c":
        if not lam > 0:
            raise DomainError("case c needs lambda > 0")
        k = np.asarray(rate.tail_inverse(xs), dtype=float)
        return Prop46Table("c", xs, {"ratio": k / (-np.log(xs) / lam)}, 1.0)
    raise DomainError(f"unknown case {case!r}")
