"""Generalised scale functions for the weighted occupation functional.

With ``U(x, y) = e^{-p(x-y)} W^w(x, y)`` the defining equation becomes

    U(x, y) = W_p(x - y) + int_y^x W_p(x - z) w(z) U(z, y) dz,

whose kernel is bounded by ``Phi'(0)``.  It is discretised with the product
trapezoidal rule on a uniform grid and marched forward in ``x``; every row
updates all columns ``y`` at once.  The companion equation with the
unknown inside the integral on the other side,

    U(x, y) = W_p(x - y) + int_y^x U(x, z) w(z) W_p(z - y) dz,

is used only as a residual check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import DomainError, NumericError, PreconditionError
from .levy import LevyModel
from .rates import RateFunction
from .scale import compute_scale

SINGULAR_START = 1e-6  # first node when omega blows up at 0


def _trap_weights(n, h):
    w = np.full(n, h)
    if n:
        w[0] = w[-1] = 0.5 * h
    if n == 1:
        w[0] = 0.0
    return w


def _lagged_wp(model, n, h):
    lags = h * np.arange(n)
    return compute_scale(model, 0.0, lags).wp_at(lags) if n else lags


def _march(wp, om, h):
    """Forward-marching product trapezoid solve; returns lower-triangular U."""
    n = wp.size
    U = np.zeros((n, n))
    U[0, 0] = wp[0]
    diag = 1.0 - 0.5 * h * wp[0] * om
    if np.any(diag <= 0):
        raise NumericError("step too coarse for the implicit diagonal", detail={"h": h})
    for i in range(1, n):
        A = wp[i - np.arange(i)] * om[:i]  # W_p(x_i - z_k) w(z_k), k < i
        S = A @ U[:i, :i]  # sum over k >= j of A_k U[k, j]
        j = np.arange(i)
        S -= 0.5 * A * U[j, j]
        U[i, :i] = (wp[i - j] + h * S) / diag[i]
        U[i, i] = wp[0]
    return U


def _second_form_residual(U, wp, om, h, rows):
    """Max residual of the companion equation over the given rows."""
    worst = 0.0
    for i in rows:
        if i < 2:
            continue
        row = U[i, : i + 1] * om[: i + 1]
        res = np.empty(i + 1)
        for j in range(i + 1):
            seg = row[j:] * wp[: i + 1 - j]
            integ = h * (seg.sum() - 0.5 * (seg[0] + seg[-1])) if seg.size > 1 else 0.0
            res[j] = U[i, j] - wp[i - j] - integ
        worst = max(worst, float(np.max(np.abs(res)) / max(1.0, np.max(np.abs(U[i, : i + 1])))))
    return worst


@dataclass(frozen=True, eq=False)
class OmegaScaleTable:
    """``W^w`` on a uniform triangular grid, stored in the scaled form ``U``.

    ``U[i, j] = exp(-p (x_i - x_j)) W^w(x_i, x_j)`` for ``j <= i``.
    """

    model: LevyModel
    rate: RateFunction
    x: np.ndarray
    U: np.ndarray
    h: float
    error: float  # Richardson estimate of the discretisation error (relative sup)
    residual: float  # companion-equation residual at check rows
    H: np.ndarray | None = None
    x_max: float = math.nan
    tail_bound: float = math.nan
    tail_parts: dict = field(default_factory=dict)

    @property
    def p(self):
        return self.model.p

    @property
    def values(self):
        """``W^w(x_i, x_j)`` (NaN above the diagonal)."""
        d = self.x[:, None] - self.x[None, :]
        with np.errstate(over="ignore", invalid="ignore"):
            return np.where(d >= 0, np.exp(self.p * d) * self.U, np.nan)

    def _interp(self):
        it = self.__dict__.get("_it")
        if it is None:
            n = self.x.size
            i = np.arange(n)[:, None]
            k = np.arange(n)[None, :]
            V = self.U[i, np.maximum(i - k, 0)]  # lag coordinates, constant beyond the first node
            it = RegularGridInterpolator((self.x, self.h * np.arange(n)), V)
            object.__setattr__(self, "_it", it)
        return it

    def scaled(self, x, y):
        """Interpolated ``U(x, y)`` for ``x0 <= y <= x <= x_N``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        lo, hi = self.x[0], self.x[-1]
        if np.any(y > x + 1e-12) or np.any(x > hi + 1e-12) or np.any(y < lo - 1e-12):
            raise DomainError("point outside the solved triangle")
        pts = np.stack(np.broadcast_arrays(np.clip(x, lo, hi), np.clip(x - y, 0, hi - lo)), axis=-1)
        return self._interp()(pts)

    def __call__(self, x, y):
        """``W^w(x, y)``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.exp(self.p * (x - y)) * self.scaled(x, y)

    def H_at(self, y):
        if self.H is None:
            raise PreconditionError("H was not computed for this table", condition="H1")
        # log-linear: exact for the e^{-py} factor
        return np.exp(np.interp(y, self.x, np.log(self.H)))

    def to_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "W_omega"])
            vals = self.values
            for i, xi in enumerate(self.x):
                for j in range(i + 1):
                    w.writerow([f"{xi:.12g}", f"{self.x[j]:.12g}", f"{vals[i, j]:.12g}"])

    def h_to_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y", "H_omega"])
            for y, v in zip(self.x, self.H):
                w.writerow([f"{y:.12g}", f"{v:.12g}"])


def _uniform_grid(rate, x_max, n, x_min=None):
    if x_min is None:
        w0 = float(rate.omega(0.0))
        x_min = 0.0 if np.isfinite(w0) else SINGULAR_START
    return np.linspace(x_min, x_max, n + 1)


def solve_w_omega(model: LevyModel, rate: RateFunction, grid=None, *, x_max=10.0, n=1000,
                  refine=True, check_rows=8) -> OmegaScaleTable:
    """Solve for ``W^w`` on a uniform grid.

    ``grid`` may be given explicitly (uniform, increasing); otherwise ``n``
    cells on ``[0, x_max]`` (starting at ``1e-6`` when ``w`` is singular at 0).
    With ``refine`` the problem is re-solved on the coarse grid of every other
    node and the Richardson gap ``|U_h - U_2h| / 3`` is recorded as the error.
    """
    x = _uniform_grid(rate, x_max, n) if grid is None else np.asarray(grid, dtype=float)
    h = float(x[1] - x[0])
    if np.any(np.abs(np.diff(x) - h) > 1e-9 * max(1.0, abs(x[-1]))):
        raise DomainError("the Volterra grid must be uniform")
    om = np.asarray(rate.omega(x), dtype=float)
    if not np.all(np.isfinite(om)) or np.any(om < 0):
        raise DomainError("omega is singular or negative on the grid", )
    wp = _lagged_wp(model, x.size, h)
    U = _march(wp, om, h)
    err = 0.0
    if refine and x.size >= 5:
        Uc = _march(wp[::2], om[::2], 2 * h)
        fine = U[::2, ::2]
        tri = np.tril(np.ones_like(fine, dtype=bool))
        err = float(np.max(np.abs(fine - Uc)[tri]) / 3.0 / max(1.0, np.max(np.abs(fine))))
    rows = np.unique(np.linspace(2, x.size - 1, min(check_rows, x.size)).astype(int))
    res = _second_form_residual(U, wp, om, h, rows)
    return OmegaScaleTable(model, rate, x, U, h, err, res)


def convergence_order(model, rate, x_max, n):
    """Gap ratio ``|U_{2h} - U_{4h}| / |U_h - U_{2h}|`` at ``(x_max, x_0)``."""
    vals = []
    for m in (n, n // 2, n // 4):
        t = solve_w_omega(model, rate, x_max=x_max, n=m, refine=False, check_rows=0)
        vals.append(t.U[-1, 0])
    return abs(vals[1] - vals[2]) / abs(vals[0] - vals[1]), vals


# ---------------------------------------------------------------------------
# H^w


def _h1_tail_ok(model, rate):
    """``int_1^inf w W_p < inf`` decided from the tail metadata."""
    t = rate.tail_end
    if t.kind == "zero":
        return True
    if model.p > 0 or model.gamma < 0:
        return rate.explodes  # W_p bounded
    # gamma == 0: W grows linearly
    if t.kind == "exponential":
        return t.exponent > 0
    return t.exponent > 2


def _h1_head_ok(model, rate):
    """``int_{0+} w W < inf``: W ~ z with a Gaussian part, W(0) > 0 otherwise."""
    a = rate.head.exponent
    return a < 2 if model.sigma2_eff > 0 else a < 1


def h_omega(model: LevyModel, rate: RateFunction, y_grid=None, x_max=None, n=2000, tol=1e-6):
    """``H^w(y) = e^{-py} + int_y^inf e^{-pz} w(z) W^w(z, y) dz``.

    The integral is taken on ``[y, x_max]`` and the remainder, where
    ``e^{-pz} W^w(z, y) ~ Phi'(0) H(y)``, is added in closed form:
    ``H = A / (1 - Phi'(0) Omega(x_max))``.  ``tail_bound`` adds the
    deviation of ``W_p`` from its limit and the second-order term of the
    correction; both raw truncation contributions are kept in ``tail_parts``.
    """
    if not _h1_tail_ok(model, rate):
        raise PreconditionError("int_1^inf w(z) W_p(z) dz diverges", condition="H1 (tail)")
    p = model.p
    if x_max is None:
        x_max = 40.0 if p == 0 else max(10.0, min(18.5 / p, 60.0))
    table = solve_w_omega(model, rate, x_max=x_max, n=n)
    x, U, h = table.x, table.U, table.h
    om = np.asarray(rate.omega(x), dtype=float)
    N = x.size
    kphi = model.phi_prime_zero
    Om = float(rate.tail(x[-1]))
    # A(y_j) = e^{-p y_j} (1 + int_{y_j}^{x_max} w U(., y_j))
    integrand = om[:, None] * U
    tri = np.tril(np.ones((N, N), dtype=bool))
    integrand = np.where(tri, integrand, 0.0)
    csum = integrand.sum(axis=0) - 0.5 * integrand[-1, :] - 0.5 * np.diag(integrand)
    A = np.exp(-p * x) * (1.0 + h * csum)
    A[-1] = math.exp(-p * x[-1])
    if math.isfinite(kphi):
        denom = 1.0 - kphi * Om
        if denom <= 0:
            raise NumericError("x_max too small for the tail correction", detail={"x_max": x_max})
        H = A / denom
        wp_end = float(compute_scale(model, 0.0, np.array([0.0, x[-1]])).wp_at(x[-1]))
        bound = float(np.max(H)) * ((kphi - wp_end) * Om + kphi**2 * Om**2 / 2)
    else:
        H = A
        bound = math.inf
    parts = {"exp_p_xmax": math.exp(-p * x[-1]), "omega_tail_times_wp_inf": kphi * Om if math.isfinite(kphi) else math.inf,
             "discretisation": table.error * float(np.max(H))}
    bound += parts["discretisation"]
    out = OmegaScaleTable(model, rate, x, U, h, table.error, table.residual, H, float(x[-1]), bound, parts)
    if y_grid is None:
        return out
    return out.H_at(np.asarray(y_grid, dtype=float)), out


# ---------------------------------------------------------------------------
# exit identities


def weighted_exit(table: OmegaScaleTable, x, c, b):
    """``E_x[exp(-eta(tau_c^-)); tau_c^- < tau_b^+] = W^w(b, x) / W^w(b, c)``."""
    if not (c <= x <= b and c < b):
        raise DomainError("weighted exit needs c <= x <= b and c < b")
    if c < table.x[0] - 1e-12 or b > table.x[-1] + 1e-12:
        raise DomainError("weighted exit arguments outside the solved grid")
    u = table.scaled(np.array([b, b]), np.array([x, c]))
    return float(math.exp(-table.p * (x - c)) * u[0] / u[1])


def downward_laplace(model: LevyModel, rate: RateFunction, x, c, table: OmegaScaleTable | None = None, **kw):
    """``E_x[exp(-T_c^-); T_c^- < inf] = H^w(x) / H^w(c)``."""
    if x < c or c < 0:
        raise DomainError("needs x >= c >= 0")
    if c == 0 and not _h1_head_ok(model, rate):
        raise PreconditionError("int_{0+} W/R diverges; c = 0 is not allowed", condition="H1")
    if table is None or table.H is None:
        _, table = h_omega(model, rate, y_grid=[c], **kw)
    Hx, Hc = table.H_at(np.array([x, c]))
    return float(Hx / Hc)


# ---------------------------------------------------------------------------
# classification


@dataclass(frozen=True)
class BoundaryReport:
    extinction: str  # "yes" / "no" / "inconclusive"
    explosion: str
    detail: dict = field(default_factory=dict)


def _tri(flag):
    return "yes" if flag else "no"


def classify_boundaries(model: LevyModel, rate: RateFunction) -> BoundaryReport:
    """Extinction and explosion with positive probability, from endpoint exponents."""
    detail = {"head_exponent": rate.head.exponent, "tail": [rate.tail_end.kind, rate.tail_end.exponent],
              "p": model.p, "gamma": model.gamma}
    if not np.isfinite(model.p):
        ext = "no"  # paths never go down
    else:
        ext = _tri(_h1_head_ok(model, rate))
    if model.gamma <= 0 or model.p == 0:
        expl = "no"  # the driving process does not drift to infinity
    elif not np.isfinite(model.gamma):
        expl = "no" if not rate.explodes else "inconclusive"
    else:
        expl = _tri(rate.explodes)
    return BoundaryReport(ext, expl, detail)


@dataclass(frozen=True)
class ConditionReport:
    H0: bool
    H1: bool
    lam: float
    H2: bool
    detail: dict = field(default_factory=dict)


def check_h0_h1_h2(model: LevyModel, rate: RateFunction) -> ConditionReport:
    """H0: ``int^inf 1/R < inf``; H1: ``int_{0+}^inf W_p/R < inf``; H2 index."""
    h0 = rate.explodes
    h1 = _h1_head_ok(model, rate) and _h1_tail_ok(model, rate)
    from .asymptotics import estimate_lambda

    h2 = False
    lam = math.nan
    detail = {}
    if h0:
        rep = estimate_lambda(rate, model.gamma if 0 < model.gamma < math.inf else 1.0)
        lam, h2 = rep.lam, rep.conclusive
        detail = {"regime": rep.regime}
    return ConditionReport(h0, h1, lam, h2, detail)
