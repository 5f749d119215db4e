"""q-scale functions, resolvent density, exit identities and the stationary
overshoot transform.

``W^(q)`` is obtained by inverting ``1 / (psi(s) - q)``.  To keep the
inversion well conditioned the exponential growth is removed first: with
``c = Phi(q)`` the function ``e^{-cx} W^(q)(x)`` has transform
``1 / (psi(s + c) - q)`` and is bounded.

For ``q = 0`` and ``0 < p, gamma < inf`` the renewal remainder

    D(x) = W(x) - Phi'(0) e^{px} + 1 / gamma

is inverted on its own.  Differences of large ``W`` values (resolvent density,
renewal limit) are expressed through ``D`` so no cancellation occurs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ModelError, NumericError, UnsupportedModelError
from .inversion import talbot
from .levy import LevyModel

DEFAULT_M = 32
CONVERGENCE_TOL = 1e-3  # relative discrepancy between node counts that counts as failure


def default_grid(lo=1e-3, hi=50.0, n=400):
    """``0`` followed by a geometric grid on ``[lo, hi]``."""
    return np.concatenate([[0.0], np.geomspace(lo, hi, n)])


def _check_model(model: LevyModel):
    if not np.isfinite(model.p):
        raise ModelError("scale functions are not defined for a process with non-decreasing paths")


# ---------------------------------------------------------------------------
# shifted scale function evaluators


def _brownian_shifted(model, q, x):
    """``e^{-Phi(q) x} W^(q)(x)`` in closed form for Brownian motion with drift."""
    a = 0.5 * model.sigma2_eff
    disc = math.sqrt(model.mu**2 + 4 * a * q)
    hi = (model.mu + disc) / (2 * a)
    lo = (model.mu - disc) / (2 * a)
    gap = hi - lo
    return -np.expm1(-gap * np.asarray(x, dtype=float)) / (a * gap)


def _reciprocal(v):
    # the continued jump transform overflows far left on the contour, where 1/psi -> 0
    with np.errstate(all="ignore"):
        return np.where(np.isfinite(v), 1.0 / np.where(np.isfinite(v), v, 1.0), 0.0)


def _shifted_transform(model, q, c):
    def F(s):
        with np.errstate(all="ignore"):
            return _reciprocal(model.exponent(s + c) - q)
    return F


def _invert_shifted(model, q, c, x, M):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    err = np.zeros_like(x)
    pos = x > 0
    out[~pos] = model.w_zero
    if np.any(pos):
        F = _shifted_transform(model, q, c)
        f = talbot(F, x[pos], M)
        g = talbot(F, x[pos], M // 2)
        out[pos] = f
        err[pos] = np.abs(f - g)
    return out, err


# ---------------------------------------------------------------------------
# renewal remainder D


class Remainder:
    """Evaluator of ``D(x) = W(x) - Phi'(0) e^{px} + 1/gamma``."""

    def __init__(self, model: LevyModel, M=DEFAULT_M):
        if not (0 < model.p < math.inf and 0 < model.gamma < math.inf):
            raise UnsupportedModelError("renewal remainder needs 0 < p, gamma < inf",
                                        condition="p, gamma in (0, inf)")
        self.model = model
        self.M = M
        p = model.p
        self.k = model.phi_prime_zero
        self.b1 = model.derivative(p, 1)
        self.b2 = 0.5 * model.derivative(p, 2)
        self.b3 = model.derivative(p, 3) / 6.0
        try:
            a2 = 0.5 * model.derivative(0.0, 2)
            a3 = model.derivative(0.0, 3) / 6.0
        except ModelError:
            a2 = a3 = math.inf
        self.a2, self.a3 = a2, a3
        self.radius = 1e-5 * max(p, 1.0)
        self.closed_zero = model.closed_form == "brownian"

    def transform(self, s):
        m, p, g, k = self.model, self.model.p, self.model.gamma, self.k
        s = np.asarray(s, dtype=complex)
        out = np.empty_like(s)
        near_p = np.abs(s - p) < self.radius
        near_0 = (np.abs(s) < self.radius) & np.isfinite(self.a2) & np.isfinite(self.a3)
        far = ~(near_p | near_0)
        if np.any(far):
            sf = s[far]
            with np.errstate(all="ignore"):
                out[far] = _reciprocal(m.exponent(sf)) - k / (sf - p) + 1.0 / (g * sf)
        if np.any(near_p):
            h = s[near_p] - p
            b1, b2, b3 = self.b1, self.b2, self.b3
            out[near_p] = -b2 / b1**2 + h * (b2**2 / b1**3 - b3 / b1**2) + 1.0 / (g * s[near_p])
        if np.any(near_0):
            z = s[near_0]
            a2, a3 = self.a2, self.a3
            out[near_0] = -a2 / g**2 - z * (a3 / g**2 + a2**2 / g**3) - k / (z - p)
        return out

    def __call__(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros_like(x)
        if self.closed_zero:
            return out
        pos = x > 0
        out[~pos] = self.model.w_zero - self.k + 1.0 / self.model.gamma
        if np.any(pos):
            out[pos] = talbot(self.transform, x[pos], self.M)
        return out


# ---------------------------------------------------------------------------
# table


@dataclass(frozen=True, eq=False)
class ScaleTable:
    """``W^(q)`` tabulated on a grid, with the exponent shift used to compute it.

    ``shifted[i] = exp(-shift * grid[i]) * W^(q)(grid[i])``; ``values`` may
    overflow to ``inf`` for very large arguments while ``shifted`` stays finite.
    """

    model: LevyModel
    q: float
    grid: np.ndarray
    shifted: np.ndarray
    shift: float
    error: np.ndarray
    method: str
    M: int = DEFAULT_M
    fingerprint: dict = field(default_factory=dict)

    @property
    def values(self):
        with np.errstate(over="ignore"):
            return np.exp(self.shift * self.grid) * self.shifted

    @property
    def W_p(self):
        """``exp(-p x) W^(q)(x)`` on the grid."""
        with np.errstate(over="ignore"):
            return np.exp((self.shift - self.model.p) * self.grid) * self.shifted

    def shifted_at(self, x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x)
        out = np.zeros_like(flat)
        ok = flat >= 0
        if np.any(ok):
            if self.method == "closed":
                out[ok] = _brownian_shifted(self.model, self.q, flat[ok])
            else:
                out[ok] = _invert_shifted(self.model, self.q, self.shift, flat[ok], self.M)[0]
        return out.reshape(x.shape)

    def __call__(self, x):
        """``W^(q)(x)``, zero for ``x < 0``."""
        x = np.asarray(x, dtype=float)
        with np.errstate(over="ignore"):
            return np.where(x >= 0, np.exp(self.shift * np.maximum(x, 0)) * self.shifted_at(x), 0.0)

    def wp_at(self, x):
        """``exp(-p x) W^(q)(x)``."""
        x = np.asarray(x, dtype=float)
        with np.errstate(over="ignore"):
            return np.exp((self.shift - self.model.p) * np.maximum(x, 0)) * self.shifted_at(x)

    @property
    def remainder(self):
        if self.q != 0:
            raise DomainError("the renewal remainder is defined for q = 0")
        rem = self.__dict__.get("_rem")
        if rem is None:
            rem = Remainder(self.model, self.M)
            object.__setattr__(self, "_rem", rem)
        return rem

    def laplace_roundtrip(self, s):
        """Numerical ``int_0^inf e^{-sy} W^(q)(y) dy`` from the table.

        Piecewise-linear ``shifted`` times the exponential is integrated
        exactly on every cell; beyond the grid ``shifted`` is held at its
        last value.
        """
        s = float(s)
        a = s - self.shift
        if not a > 0:
            raise DomainError("round trip needs s > Phi(q)")
        x, f = self.grid, self.shifted
        x0, x1 = x[:-1], x[1:]
        f0, f1 = f[:-1], f[1:]
        h = x1 - x0
        e0, e1 = np.exp(-a * x0), np.exp(-a * x1)
        # int_{x0}^{x1} (f0 + (f1 - f0)(y - x0)/h) e^{-ay} dy
        I0 = (e0 - e1) / a
        I1 = (e0 - e1) / a**2 - h * e1 / a  # int (y - x0) e^{-ay}
        total = np.sum(f0 * I0 + (f1 - f0) / h * I1)
        total += f[-1] * math.exp(-a * x[-1]) / a
        return total

    def roundtrip_errors(self, s_values):
        s_values = np.asarray(s_values, dtype=float)
        num = np.array([self.laplace_roundtrip(s) for s in s_values])
        exact = 1.0 / (np.asarray(self.model.exponent(s_values), dtype=float) - self.q)
        return np.abs(num / exact - 1.0)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "W", "W_p", "error_estimate"])
            for row in zip(self.grid, self.values, self.W_p, self.error):
                w.writerow([f"{v:.12g}" for v in row])


def compute_scale(model: LevyModel, q=0.0, grid=None, method="auto", M=DEFAULT_M) -> ScaleTable:
    """Tabulate ``W^(q)`` on ``grid`` (must start at 0).

    ``method`` is ``"auto"`` (closed form when registered, else Talbot),
    ``"talbot"`` or ``"closed"``.
    """
    _check_model(model)
    if q < 0:
        raise DomainError("q must be nonnegative")
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    if grid[0] != 0 or np.any(np.diff(grid) <= 0):
        raise DomainError("grid must start at 0 and increase strictly")
    c = model.largest_root(float(q))
    if method == "auto":
        method = "closed" if model.closed_form == "brownian" else "talbot"
    if method == "closed":
        if model.closed_form != "brownian":
            raise ModelError("no closed form registered for this model")
        shifted = _brownian_shifted(model, q, grid)
        err = np.zeros_like(grid)
    elif method == "talbot":
        shifted, err = _invert_shifted(model, q, c, grid, M)
        scale = np.maximum(np.abs(shifted), np.max(np.abs(shifted)) * 1e-3)
        rel = err / scale
        worst = int(np.argmax(rel))
        if not np.all(np.isfinite(shifted)) or rel[worst] > CONVERGENCE_TOL:
            raise NumericError("Laplace inversion did not converge",
                               detail={"x": float(grid[worst]), "estimate": float(err[worst])})
    else:
        raise DomainError(f"unknown method {method!r}")
    return ScaleTable(model, float(q), grid, shifted, c, err, method, M, model.fingerprint())


# ---------------------------------------------------------------------------
# identities


def resolvent_density(table: ScaleTable, x, y):
    """Potential density ``u(x, y) = e^{-px} W(y) - W(y - x)`` of the process
    killed below 0, evaluated without cancellation when ``0 < p, gamma < inf``."""
    if table.q != 0:
        raise DomainError("resolvent density needs the q = 0 table")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y < 0):
        raise DomainError("resolvent density needs x > 0 and y >= 0")
    m = table.model
    p, g = m.p, m.gamma
    if 0 < p < math.inf and 0 < g < math.inf:
        D = table.remainder
        xb, yb = (np.array(a, dtype=float) for a in np.broadcast_arrays(np.atleast_1d(x), np.atleast_1d(y)))
        above = yb > xb
        ex = np.exp(-p * xb)
        k = m.phi_prime_zero
        u = np.where(above, -np.expm1(-p * xb) / g, k * np.exp(-p * np.abs(xb - yb)) - ex / g)
        u = u + ex * D(yb.ravel()).reshape(yb.shape)
        if np.any(above):
            u[above] -= D((yb - xb)[above])
    else:
        u = np.exp(-p * x) * table(y) - table(y - x)
    u = np.asarray(u, dtype=float)
    if np.any(u < -1e-9 * max(1.0, float(np.abs(u).max()))):
        raise NumericError("negative resolvent density", detail={"min": float(u.min())})
    u = np.maximum(u, 0.0)
    return u.reshape(np.broadcast(x, y).shape) if np.ndim(x) or np.ndim(y) else float(u.ravel()[0])


def exit_down_prob(table: ScaleTable, x, c, b):
    """``P_x(tau_c^- < tau_b^+) = W(b - x) / W(b - c)``."""
    if not c <= x <= b or c == b:
        raise DomainError("exit probability needs c <= x <= b and c < b")
    if table.q != 0:
        raise DomainError("exit probability needs the q = 0 table")
    num = table.shifted_at(np.array([b - x, b - c]))
    return float(math.exp(-table.shift * (x - c)) * num[0] / num[1])


def ruin_laplace(model: LevyModel, x, c, q=0.0):
    """``E_x[e^{-q tau_c^-}; tau_c^- < inf] = exp(-Phi(q)(x - c))``."""
    if x < c:
        raise DomainError("needs x >= c")
    if q < 0:
        raise DomainError("needs q >= 0")
    r = model.largest_root(float(q))
    if not np.isfinite(r):
        return 1.0 if x == c else 0.0
    return math.exp(-r * (x - c))


@dataclass(frozen=True)
class RenewalCheck:
    value: float
    limit: float
    asymptote: float


def renewal_limit(table: ScaleTable, x, y):
    """``e^{-px} W(x + y) - W(y)``, alongside ``(1 - e^{-px})/gamma`` and ``1/gamma``."""
    m = table.model
    if not 0 < m.gamma < math.inf:
        raise UnsupportedModelError("renewal limit needs 0 < gamma < inf", condition="gamma in (0, inf)")
    if not 0 < m.p < math.inf:
        raise UnsupportedModelError("renewal limit needs p > 0", condition="p > 0")
    x = float(x)
    y = float(y)
    if x < 0 or y < 0:
        raise DomainError("needs x, y >= 0")
    D = table.remainder(np.array([x + y, y]))
    base = -math.expm1(-m.p * x) / m.gamma
    val = base + math.exp(-m.p * x) * D[0] - D[1]
    return RenewalCheck(val, base, 1.0 / m.gamma)


# ---------------------------------------------------------------------------
# stationary overshoot


class OvershootLaw:
    """Stationary overshoot law with ``rho(s) = p psi(s) / (gamma s (s - p))``."""

    def __init__(self, model: LevyModel):
        if not (0 < model.p < math.inf and 0 < model.gamma < math.inf):
            raise UnsupportedModelError("overshoot law needs 0 < p, gamma < inf", condition="p, gamma in (0, inf)")
        self.model = model
        self.p = model.p
        self.gamma = model.gamma
        self.radius = 1e-4 * self.p
        self._d_p = [model.derivative(self.p, k) for k in (1, 2, 3)]
        try:
            d0 = [model.derivative(0.0, k) for k in (1, 2, 3)]
        except ModelError:
            d0 = None
        self._d_0 = d0 if d0 is not None and all(np.isfinite(d0)) else None

    def __call__(self, s):
        return overshoot_transform(self, s)

    @property
    def at_p(self):
        return 1.0 / (self.gamma * self.model.phi_prime_zero)

    def is_completely_monotone_on(self, s_grid):
        v = self(np.asarray(s_grid, dtype=float))
        return bool(np.all(v >= -1e-12) and np.all(np.diff(v) <= 1e-12))


def overshoot_transform(law: OvershootLaw, s):
    """Evaluate the stationary overshoot transform at ``s >= 0``."""
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s_arr < 0):
        raise DomainError("overshoot transform needs s >= 0")
    p, g, m = law.p, law.gamma, law.model
    out = np.empty_like(s_arr)
    near_p = np.abs(s_arr - p) < law.radius
    near_0 = (s_arr < law.radius) & ~near_p
    far = ~(near_p | near_0)
    if np.any(far):
        sf = s_arr[far]
        out[far] = p * np.asarray(m.exponent(sf)) / (g * sf * (sf - p))
    if np.any(near_p):
        h = s_arr[near_p] - p
        d1, d2, d3 = law._d_p
        ratio = d1 + d2 * h / 2 + d3 * h**2 / 6  # psi(s) / (s - p)
        out[near_p] = p * ratio / (g * s_arr[near_p])
    if np.any(near_0):
        z = s_arr[near_0]
        if law._d_0 is not None:
            d1, d2, d3 = law._d_0
            ratio = d1 + d2 * z / 2 + d3 * z**2 / 6  # psi(s) / s
        else:
            zz = np.where(z > 0, z, 1.0)
            ratio = np.where(z > 0, np.asarray(m.exponent(zz)) / zz, -g)
        out[near_0] = p * ratio / (g * (z - p))
    return out if np.ndim(s) else float(out[0])
