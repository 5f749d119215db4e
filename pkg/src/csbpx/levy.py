"""Spectrally positive Levy processes described by their triplet.

The sign convention is fixed throughout the package::

    psi(s) = log E exp(-s xi_1)
           = sigma2 s^2 / 2 - mu s + int (e^{-sx} - 1 + s x 1(x<1)) Pi(dx)

so ``gamma = E xi_1 = mu + int_{[1, inf)} x Pi(dx)`` and ``p = Phi(0)`` is the
largest root of ``psi``.  Jump measures are always finite after truncation;
an infinite-activity power tail keeps its jumps above ``truncation`` and
folds the rest into a Gaussian component whose variance is recorded, so the
analytic exponent and the simulator describe the same process.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy import integrate, optimize, special

from .errors import DomainError, ModelError, NumericError

QUAD_EPSABS = 1e-12
QUAD_EPSREL = 1e-10


def _quad(f, a, b, points=None):
    """Adaptive quadrature split at ``points`` (finite ones inside (a, b))."""
    cuts = [a]
    for c in sorted(points or ()):
        if a < c < b:
            cuts.append(c)
    cuts.append(b)
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        val, _ = integrate.quad(f, lo, hi, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=400)
        total += val
    return total


# ---------------------------------------------------------------------------
# jump size densities


class Density:
    """Probability density on (0, inf) for compound-Poisson jump sizes.

    Subclasses provide ``pdf`` and ``laplace``; the latter must accept complex
    arrays and continue analytically to the left of the abscissa, since the
    contour inversion samples the transform there.
    """

    lower = 0.0
    abscissa = 0.0  # E exp(-sX) converges for Re s > abscissa

    def pdf(self, x):
        raise NotImplementedError

    def laplace(self, s):
        raise NotImplementedError

    def moment_laplace(self, k, s):
        """E[X^k exp(-sX)] for real ``s`` (may be ``inf``)."""
        s = float(s)
        if s <= self.abscissa and not (s == self.abscissa == 0.0):
            raise ModelError(f"jump transform diverges at s={s}")
        val = _quad(lambda x: x**k * math.exp(-s * x) * self.pdf(x), self.lower, math.inf, points=[1.0])
        return val

    def partial_mean(self, a):
        """E[X; X < a]."""
        if a <= self.lower:
            return 0.0
        return _quad(lambda x: x * self.pdf(x), self.lower, a)

    def upper_mean(self, a):
        """E[X; X >= a]; ``inf`` when the first moment is infinite."""
        return _quad(lambda x: x * self.pdf(x), max(a, self.lower), math.inf)

    def ppf(self, u):
        raise NotImplementedError

    def tilt(self, alpha):
        """Return ``(density, mass)`` with ``mass = E exp(-alpha X)``."""
        if alpha == 0:
            return self, 1.0
        mass = float(np.real(self.laplace(np.array([alpha], dtype=float))[0]))
        if not np.isfinite(mass):
            raise ModelError(f"Esscher tilt alpha={alpha} diverges for {self!r}")
        return Tilted(self, alpha, mass), mass

    def to_dict(self):
        raise NotImplementedError


class Exponential(Density):
    def __init__(self, rate):
        if not rate > 0:
            raise ModelError("exponential jump rate must be positive")
        self.rate = float(rate)
        self.abscissa = -self.rate

    def __repr__(self):
        return f"Exponential(rate={self.rate})"

    def pdf(self, x):
        return self.rate * np.exp(-self.rate * np.asarray(x, dtype=float))

    def laplace(self, s):
        return self.rate / (self.rate + s)

    def moment_laplace(self, k, s):
        if s <= self.abscissa:
            raise ModelError(f"jump transform diverges at s={s}")
        return math.factorial(k) * self.rate / (self.rate + s) ** (k + 1)

    def partial_mean(self, a):
        b = self.rate
        return (1.0 - math.exp(-b * a) * (1.0 + b * a)) / b

    def upper_mean(self, a):
        return math.exp(-self.rate * a) * (a + 1.0 / self.rate)

    def ppf(self, u):
        return -np.log1p(-np.asarray(u)) / self.rate

    def tilt(self, alpha):
        if self.rate + alpha <= 0:
            raise ModelError(f"Esscher tilt alpha={alpha} diverges for {self!r}")
        return Exponential(self.rate + alpha), self.rate / (self.rate + alpha)

    def to_dict(self):
        return {"type": "exponential", "rate": self.rate}


class Gamma(Density):
    def __init__(self, shape, rate):
        if not (shape > 0 and rate > 0):
            raise ModelError("gamma jump density needs shape > 0 and rate > 0")
        self.shape = float(shape)
        self.rate = float(rate)
        self.abscissa = -self.rate

    def __repr__(self):
        return f"Gamma(shape={self.shape}, rate={self.rate})"

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        k, b = self.shape, self.rate
        return np.exp(k * math.log(b) + (k - 1) * np.log(x) - b * x - special.gammaln(k))

    def laplace(self, s):
        return (self.rate / (self.rate + s)) ** self.shape

    def moment_laplace(self, k, s):
        if s <= self.abscissa:
            raise ModelError(f"jump transform diverges at s={s}")
        a, b = self.shape, self.rate
        return math.exp(special.gammaln(a + k) - special.gammaln(a)) * b**a / (b + s) ** (a + k)

    def partial_mean(self, a):
        return self.shape / self.rate * special.gammainc(self.shape + 1, self.rate * a)

    def upper_mean(self, a):
        return self.shape / self.rate * special.gammaincc(self.shape + 1, self.rate * a)

    def ppf(self, u):
        return special.gammaincinv(self.shape, np.asarray(u)) / self.rate

    def tilt(self, alpha):
        if self.rate + alpha <= 0:
            raise ModelError(f"Esscher tilt alpha={alpha} diverges for {self!r}")
        return Gamma(self.shape, self.rate + alpha), (self.rate / (self.rate + alpha)) ** self.shape

    def to_dict(self):
        return {"type": "gamma", "shape": self.shape, "rate": self.rate}


def _upper_gamma(a, z):
    try:
        return complex(mpmath.gammainc(a, z))
    except OverflowError:
        return complex(math.inf, 0.0)


_gammainc_upper = np.frompyfunc(_upper_gamma, 2, 1)


class Pareto(Density):
    """Density ``alpha xm^alpha x^{-alpha-1}`` on ``(xm, inf)``.

    The transform is ``alpha (s xm)^alpha Gamma(-alpha, s xm)``, continued to
    the cut plane through mpmath's complex incomplete gamma.
    """

    abscissa = 0.0

    def __init__(self, alpha, xm):
        if not (alpha > 0 and xm > 0):
            raise ModelError("Pareto density needs alpha > 0 and xm > 0")
        self.alpha = float(alpha)
        self.xm = float(xm)
        self.lower = self.xm

    def __repr__(self):
        return f"Pareto(alpha={self.alpha}, xm={self.xm})"

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(x > self.xm, self.alpha * self.xm**self.alpha * x ** (-self.alpha - 1.0), 0.0)

    def laplace(self, s):
        s = np.asarray(s)
        z = s * self.xm
        out = np.ones(s.shape, dtype=complex)
        nz = z != 0
        if np.any(nz):
            zz = z[nz].astype(complex)
            g = _gammainc_upper(-self.alpha, zz).astype(complex)
            with np.errstate(all="ignore"):
                out[nz] = self.alpha * zz**self.alpha * g
        if not np.iscomplexobj(s):
            return out.real
        return out

    def moment_laplace(self, k, s):
        if s < 0:
            raise ModelError(f"jump transform diverges at s={s}")
        if s == 0 and k >= self.alpha:
            return math.inf
        return super().moment_laplace(k, s)

    def partial_mean(self, a):
        if a <= self.xm:
            return 0.0
        al, xm = self.alpha, self.xm
        if al == 1.0:
            return xm * math.log(a / xm)
        return al * xm**al * (a ** (1 - al) - xm ** (1 - al)) / (1 - al)

    def upper_mean(self, a):
        al, xm = self.alpha, self.xm
        if al <= 1.0:
            return math.inf
        return al * xm**al * max(a, xm) ** (1 - al) / (al - 1)

    def ppf(self, u):
        return self.xm * (1.0 - np.asarray(u)) ** (-1.0 / self.alpha)

    def to_dict(self):
        return {"type": "pareto", "alpha": self.alpha, "xm": self.xm}


class Tilted(Density):
    """``base`` reweighted by ``exp(-alpha x)`` and renormalised."""

    def __init__(self, base, alpha, mass):
        self.base = base
        self.alpha = float(alpha)
        self.mass = float(mass)
        self.lower = base.lower
        self.abscissa = base.abscissa - self.alpha
        self._inv = None

    def __repr__(self):
        return f"Tilted({self.base!r}, alpha={self.alpha})"

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return self.base.pdf(x) * np.exp(-self.alpha * x) / self.mass

    def laplace(self, s):
        return self.base.laplace(s + self.alpha) / self.mass

    def moment_laplace(self, k, s):
        return self.base.moment_laplace(k, s + self.alpha) / self.mass

    def tilt(self, alpha):
        total = self.alpha + alpha
        if total == 0:
            return self.base, 1.0 / self.mass
        dens, base_mass = self.base.tilt(total)
        return dens, base_mass / self.mass

    def ppf(self, u):
        if self._inv is None:
            # tabulated inverse cdf on a log grid covering all but 1e-13 of the mass
            hi = self.lower + 1.0
            while _quad(self.pdf, hi, math.inf) > 1e-13:
                hi = self.lower + 2 * (hi - self.lower)
            x = self.lower + np.expm1(np.linspace(0.0, math.log1p(hi - self.lower), 4001))
            c = integrate.cumulative_trapezoid(self.pdf(x), x, initial=0.0)
            c /= c[-1]
            keep = np.concatenate([[True], np.diff(c) > 0])
            self._inv = (c[keep], x[keep])
        c, x = self._inv
        return np.interp(u, c, x)

    def to_dict(self):
        return {"type": "tilted", "base": self.base.to_dict(), "alpha": self.alpha}


def density_from_dict(d):
    kind = d["type"]
    if kind == "exponential":
        return Exponential(d["rate"])
    if kind == "gamma":
        return Gamma(d["shape"], d["rate"])
    if kind == "pareto":
        return Pareto(d["alpha"], d["xm"])
    if kind == "tilted":
        base = density_from_dict(d["base"])
        return base.tilt(d["alpha"])[0]
    raise ModelError(f"unknown jump density type {kind!r}")


# ---------------------------------------------------------------------------
# jump measures


@dataclass(frozen=True)
class JumpMeasure:
    """Levy measure, finite after truncation: ``rate * density`` plus a
    Gaussian stand-in for the removed small jumps.

    ``kind`` is one of ``none``, ``compound_poisson`` or ``power_tail``.
    """

    kind: str = "none"
    rate: float = 0.0
    density: Density | None = None
    gaussian_variance: float = 0.0
    params: dict = field(default_factory=dict)
    mass_check: float = 0.0  # int (1 ^ x^2) Pi(dx), checked at construction

    @staticmethod
    def none():
        return JumpMeasure()

    @staticmethod
    def compound_poisson(rate, density):
        if not rate > 0:
            raise ModelError("compound Poisson rate must be positive")
        if density.lower < 0:
            raise ModelError("jump density must live on (0, inf)")
        mass = rate * _quad(lambda x: min(1.0, x * x) * float(density.pdf(x)), density.lower, math.inf, points=[1.0])
        if not np.isfinite(mass):
            raise ModelError("int (1 ^ x^2) Pi(dx) diverges")
        return JumpMeasure("compound_poisson", float(rate), density, 0.0,
                           {"rate": float(rate), "density": density.to_dict()}, mass)

    @staticmethod
    def power_tail(coefficient, exponent, truncation):
        """``Pi(dx) = coefficient x^{-1-exponent} dx`` with jumps below
        ``truncation`` replaced by Gaussian noise of matching variance."""
        c, a, eps = float(coefficient), float(exponent), float(truncation)
        if not (c > 0 and 0 < a < 2 and eps > 0):
            raise ModelError("power tail needs coefficient > 0, 0 < exponent < 2, truncation > 0")
        rate = c * eps ** (-a) / a
        var = c * eps ** (2 - a) / (2 - a)
        mass = c / (2 - a) + c / a
        if not np.isfinite(mass):
            raise ModelError("int (1 ^ x^2) Pi(dx) diverges")
        return JumpMeasure("power_tail", rate, Pareto(a, eps), var,
                           {"coefficient": c, "exponent": a, "truncation": eps}, mass)

    @property
    def active(self):
        return self.rate > 0

    @property
    def compensator(self):
        """``int_{x<1} x Pi(dx)`` over the retained (finite) part."""
        return self.rate * self.density.partial_mean(1.0) if self.active else 0.0

    @property
    def big_mean(self):
        """``int_{x>=1} x Pi(dx)``."""
        return self.rate * self.density.upper_mean(1.0) if self.active else 0.0

    def exponent(self, s):
        """Jump part of psi, without the Gaussian stand-in."""
        if not self.active:
            return np.zeros_like(np.asarray(s, dtype=float)) if np.isrealobj(s) else np.zeros_like(s)
        return self.rate * (self.density.laplace(s) - 1.0) + s * self.compensator

    def to_dict(self):
        if self.kind == "none":
            return {"type": "none"}
        if self.kind == "power_tail":
            return {"type": "power_tail", **self.params}
        return {"type": "compound_poisson", "rate": self.rate, "density": self.density.to_dict(),
                **({"gaussian_variance": self.gaussian_variance} if self.gaussian_variance else {})}


def jumps_from_dict(d):
    kind = d.get("type", "none")
    if kind == "none":
        return JumpMeasure.none()
    if kind == "compound_poisson":
        jm = JumpMeasure.compound_poisson(d["rate"], density_from_dict(d["density"]))
        if d.get("gaussian_variance"):
            jm = JumpMeasure(jm.kind, jm.rate, jm.density, float(d["gaussian_variance"]), jm.params, jm.mass_check)
        return jm
    if kind == "power_tail":
        return JumpMeasure.power_tail(d["coefficient"], d["exponent"], d["truncation"])
    raise ModelError(f"unknown jump measure type {kind!r}")


def default_truncation(coefficient, exponent, sigma2, cap=1e-2, frac=0.1):
    """Largest truncation keeping the Gaussian stand-in variance at most
    ``frac * sigma2`` (or ``cap`` when ``sigma2 == 0``)."""
    target = frac * sigma2 if sigma2 > 0 else cap
    return (target * (2 - exponent) / coefficient) ** (1.0 / (2 - exponent))


# ---------------------------------------------------------------------------
# the model


class LevyModel:
    """Spectrally positive Levy process ``(sigma2, mu, jumps)``.

    Immutable; ``p``, ``gamma`` and the simulation drift are computed once.
    """

    def __init__(self, sigma2=0.0, mu=0.0, jumps=None):
        self.sigma2 = float(sigma2)
        self.mu = float(mu)
        self.jumps = jumps if jumps is not None else JumpMeasure.none()
        if self.sigma2 < 0:
            raise ModelError("sigma2 must be nonnegative")
        if self.sigma2 == 0 and not self.jumps.active and self.jumps.gaussian_variance == 0 and self.mu == 0:
            raise ModelError("degenerate model: no diffusion, no jumps and zero drift")
        self.sigma2_eff = self.sigma2 + self.jumps.gaussian_variance
        # drift of the continuous part once retained jumps are added uncompensated
        self.drift = self.mu - self.jumps.compensator
        self.gamma = self.mu + self.jumps.big_mean
        self.p = self._compute_p()

    def __repr__(self):
        return f"LevyModel(sigma2={self.sigma2}, mu={self.mu}, jumps={self.jumps.to_dict()})"

    # -- classification -------------------------------------------------
    @property
    def is_subordinator(self):
        """Paths non-decreasing: psi < 0 on (0, inf) and no root but 0."""
        return self.sigma2_eff == 0 and self.drift >= 0

    @property
    def has_jumps(self):
        return self.jumps.active

    @property
    def bounded_variation(self):
        return self.sigma2_eff == 0

    @property
    def w_zero(self):
        """W(0+): zero with a Gaussian part, reciprocal drift otherwise."""
        if self.sigma2_eff > 0:
            return 0.0
        return 1.0 / -self.drift

    @property
    def closed_form(self):
        """Name of a registered closed-form scale family, if any."""
        if not self.jumps.active and self.sigma2_eff > 0:
            return "brownian"
        return None

    def fingerprint(self):
        return {"sigma2": self.sigma2, "mu": self.mu, "jumps": self.jumps.to_dict()}

    # -- exponent and derivatives ----------------------------------------
    def exponent(self, s):
        """psi at real or complex ``s`` inside the convergence region."""
        s_arr = np.asarray(s)
        if np.isrealobj(s_arr) and self.jumps.active:
            ab = self.jumps.density.abscissa
            if np.any(s_arr < ab) or (ab != 0 and np.any(s_arr == ab)):
                raise ModelError(f"jump integral diverges at s={s_arr.min()}")
        val = 0.5 * self.sigma2_eff * s_arr**2 - self.mu * s_arr + self.jumps.exponent(s_arr)
        return val if s_arr.ndim else val[()]

    def derivative(self, s, order=1):
        """d^order psi / ds^order at real ``s`` (order 1, 2 or 3)."""
        s = float(s)
        j = self.jumps
        if order == 1:
            jt = j.rate * (-j.density.moment_laplace(1, s)) + j.compensator if j.active else 0.0
            return self.sigma2_eff * s - self.mu + jt
        if order == 2:
            jt = j.rate * j.density.moment_laplace(2, s) if j.active else 0.0
            return self.sigma2_eff + jt
        if order == 3:
            return -j.rate * j.density.moment_laplace(3, s) if j.active else 0.0
        raise DomainError("derivative order must be 1, 2 or 3")

    # -- roots ------------------------------------------------------------
    def _compute_p(self):
        if self.is_subordinator:
            return math.inf
        if not self.gamma > 0:
            return 0.0
        hi = 1.0
        while self.exponent(hi) <= 0:
            hi *= 2.0
            if hi > 1e12:
                raise NumericError("cannot bracket p", detail={"bracket": [0.0, hi]})
        lo = hi / 2.0
        while self.exponent(lo) >= 0:
            hi, lo = lo, lo / 2.0
            if lo < 1e-300:
                return 0.0
        return optimize.brentq(lambda s: self.exponent(s), lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)

    def largest_root(self, q):
        """Largest s >= 0 with psi(s) = q (q may be negative down to min psi)."""
        if not np.isfinite(self.p):
            raise NumericError("psi has no root bracket for a subordinator", detail={"bracket": [0.0, math.inf]})
        if q == 0:
            return self.p
        if q > 0:
            lo = self.p
            hi = max(1.0, 2 * lo)
            while self.exponent(hi) <= q:
                lo, hi = hi, 2 * hi
                if hi > 1e15:
                    raise NumericError(f"cannot bracket Phi({q})", detail={"bracket": [lo, hi]})
        else:
            res = optimize.minimize_scalar(lambda s: float(self.exponent(s)), bounds=(0.0, self.p), method="bounded",
                                           options={"xatol": 1e-12})
            if res.fun > q:
                raise NumericError(f"psi never reaches {q}", detail={"bracket": [0.0, self.p], "min": res.fun})
            lo, hi = res.x, self.p
        if float(self.exponent(lo)) - q >= 0:  # q within rounding of psi(lo)
            return float(lo)
        root = optimize.brentq(lambda s: float(self.exponent(s)) - q, lo, hi, xtol=1e-15,
                               rtol=4 * np.finfo(float).eps, maxiter=500)
        if abs(self.exponent(root) - q) > 1e-10 * (1 + abs(q)):
            raise NumericError(f"Phi({q}) residual too large", detail={"bracket": [lo, hi], "root": root})
        return root

    @property
    def phi_prime_zero(self):
        """Phi'(0) = 1 / psi'(p) (= W_p(inf))."""
        if self.p == 0:
            d = self.derivative(0.0)
            return 1.0 / d if d > 0 else math.inf
        return 1.0 / self.derivative(self.p)

    def to_dict(self):
        return self.fingerprint()


def model_from_dict(d):
    allowed = {"sigma2", "mu", "jumps"}
    extra = set(d) - allowed
    if extra:
        raise ModelError(f"unknown model fields {sorted(extra)}")
    return LevyModel(d.get("sigma2", 0.0), d.get("mu", 0.0), jumps_from_dict(d.get("jumps", {"type": "none"})))


def psi(model: LevyModel, s):
    """Laplace exponent at ``s >= 0``."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0):
        raise DomainError("psi is evaluated on s >= 0 only")
    return model.exponent(s_arr)


def phi(model: LevyModel, q):
    """Right inverse of psi: largest root of psi(s) = q, for q >= 0."""
    if q < 0:
        raise DomainError("Phi is defined for q >= 0")
    return model.largest_root(float(q))


CHECK_GRID = np.array([0.0, 0.1, 0.5, 1.0, 2.0, 5.0])


def esscher(model: LevyModel, alpha):
    """Exponentially tilted model with ``psi_a(s) = psi(a + s) - psi(a)``.

    The tilted triplet is verified against both identities on a check grid.
    """
    alpha = float(alpha)
    if alpha == 0:
        return model
    j = model.jumps
    try:
        psi_a = float(model.exponent(alpha))
    except ModelError:
        raise
    if not np.isfinite(psi_a):
        raise ModelError(f"psi({alpha}) diverges")
    if j.active:
        dens, mass = j.density.tilt(alpha)
        # int_{x<1} x (1 - e^{-alpha x}) Pi(dx)
        shift = j.rate * (j.density.partial_mean(1.0) - mass * dens.partial_mean(1.0))
        jumps = JumpMeasure("compound_poisson", j.rate * mass, dens, j.gaussian_variance,
                            {"rate": j.rate * mass, "density": dens.to_dict()}, j.mass_check)
    else:
        shift = 0.0
        jumps = j
    mu_a = model.mu - model.sigma2_eff * alpha - shift
    tilted = LevyModel(model.sigma2, mu_a, jumps)
    grid = CHECK_GRID
    lhs = np.array([tilted.exponent(s) for s in grid])
    rhs = np.array([model.exponent(alpha + s) - psi_a for s in grid])
    if not np.allclose(lhs, rhs, rtol=1e-8, atol=1e-10):
        raise NumericError("Esscher tilt failed the psi identity", detail={"lhs": lhs.tolist(), "rhs": rhs.tolist()})
    if np.isfinite(tilted.p) and np.isfinite(model.p):
        for s in grid[1:3]:
            a = tilted.largest_root(s)
            b = model.largest_root(psi_a + s) - alpha
            if abs(a - b) > 1e-8 * (1 + abs(b)):
                raise NumericError("Esscher tilt failed the Phi identity", detail={"s": s, "lhs": a, "rhs": b})
    return tilted
