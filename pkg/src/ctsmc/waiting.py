"""Waiting-time (holding-time) distributions.

Each distribution exposes the density ``f``, survival ``Λ``, hazard, the
integrated survival ``∫_0^s Λ`` and its tail, plus cached lookup tables used
by the solvers for fast evaluation of cell masses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, special

__all__ = [
    "WaitingTime",
    "Exponential",
    "Gamma",
    "Weibull",
    "LookupTable",
    "evaluate",
    "interval_integral",
    "mean_waiting",
    "from_dict",
]

# Sentinel returned for the hazard at a singular origin (shape < 1).
INFINITE_HAZARD = math.inf


def _check_positive(name, value):
    if not isinstance(value, (int, float, np.floating, np.integer)) or math.isnan(value):
        raise ValueError(f"{name} must be a number, got {value!r}")
    if not value > 0 or math.isinf(value):
        raise ValueError(f"{name} must be finite and > 0, got {value!r}")


def _as_array(tau):
    tau = np.asarray(tau, dtype=float)
    if np.any(np.isnan(tau)):
        raise ValueError("time argument contains NaN")
    if np.any(tau < 0):
        raise ValueError("waiting time must be >= 0")
    return tau


def _out(x, scalar):
    return float(x) if scalar else x


class WaitingTime:
    """Base class; subclasses implement the family-specific formulas."""

    family: str = ""

    # --- family hooks (array in, array out, tau >= 0) ---
    def _pdf(self, t):
        raise NotImplementedError

    def _sf(self, t):
        raise NotImplementedError

    def _cdf(self, t):
        return 1.0 - self._sf(t)

    def _hazard(self, t):
        raise NotImplementedError

    def _dlogpdf(self, t):
        """d/dt log f(t)."""
        raise NotImplementedError

    def _int_sf(self, t):
        """∫_0^t Λ(s) ds."""
        raise NotImplementedError

    def _tail_int_sf(self, t):
        """∫_t^∞ Λ(s) ds."""
        raise NotImplementedError

    def _logpdf(self, t):
        with np.errstate(divide="ignore"):
            return np.log(self._pdf(t))

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def density_at_zero(self) -> float:
        return float(self._pdf(np.zeros(1))[0])

    # --- public API ---
    def pdf(self, tau):
        t = _as_array(tau)
        return _out(self._pdf(np.atleast_1d(t)).reshape(t.shape), t.ndim == 0)

    def sf(self, tau):
        t = _as_array(tau)
        return _out(self._sf(np.atleast_1d(t)).reshape(t.shape), t.ndim == 0)

    def cdf(self, tau):
        t = _as_array(tau)
        return _out(self._cdf(np.atleast_1d(t)).reshape(t.shape), t.ndim == 0)

    def hazard(self, tau):
        t = _as_array(tau)
        return _out(self._hazard(np.atleast_1d(t)).reshape(t.shape), t.ndim == 0)

    def logpdf(self, tau):
        t = _as_array(tau)
        return _out(self._logpdf(np.atleast_1d(t)).reshape(t.shape), t.ndim == 0)

    def int_sf(self, tau):
        t = _as_array(tau)
        return _out(self._int_sf(np.atleast_1d(t)).reshape(t.shape), t.ndim == 0)

    def tail_int_sf(self, tau):
        t = _as_array(tau)
        return _out(self._tail_int_sf(np.atleast_1d(t)).reshape(t.shape), t.ndim == 0)

    def quantile_sf(self, level: float) -> float:
        """Smallest τ with Λ(τ) <= level."""
        lo, hi = 0.0, self.mean
        while self.sf(hi) > level:
            hi *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.sf(mid) > level:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-12 * hi:
                break
        return hi

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def table(self, spacing: float, s_max: float) -> "LookupTables":
        """Lookup tables for F, ∫Λ and log f (cached per spacing/range)."""
        return _tables(self, float(spacing), float(s_max))


@dataclass(frozen=True)
class Exponential(WaitingTime):
    rate: float
    family: str = field(default="exponential", init=False, repr=False)

    def __post_init__(self):
        _check_positive("rate", self.rate)

    def _pdf(self, t):
        return self.rate * np.exp(-self.rate * t)

    def _sf(self, t):
        return np.exp(-self.rate * t)

    def _cdf(self, t):
        return -np.expm1(-self.rate * t)

    def _hazard(self, t):
        return np.full_like(t, self.rate, dtype=float)

    def _logpdf(self, t):
        return math.log(self.rate) - self.rate * t

    def _dlogpdf(self, t):
        return np.full_like(t, -self.rate, dtype=float)

    def _int_sf(self, t):
        return -np.expm1(-self.rate * t) / self.rate

    def _tail_int_sf(self, t):
        return np.exp(-self.rate * t) / self.rate

    @property
    def mean(self):
        return 1.0 / self.rate

    def sample(self, rng, size=None):
        return rng.exponential(1.0 / self.rate, size=size)

    def to_dict(self):
        return {"family": "exponential", "rate": float(self.rate)}


@dataclass(frozen=True)
class Gamma(WaitingTime):
    shape: float
    rate: float
    family: str = field(default="gamma", init=False, repr=False)

    def __post_init__(self):
        _check_positive("shape", self.shape)
        _check_positive("rate", self.rate)

    def _logpdf(self, t):
        k, r = self.shape, self.rate
        with np.errstate(divide="ignore", invalid="ignore"):
            out = k * math.log(r) + (k - 1.0) * np.log(t) - r * t - special.gammaln(k)
        if k == 1.0:
            out = np.where(t == 0, math.log(r), out)
        return out

    def _pdf(self, t):
        return np.exp(self._logpdf(t))

    def _sf(self, t):
        return special.gammaincc(self.shape, self.rate * t)

    def _cdf(self, t):
        return special.gammainc(self.shape, self.rate * t)

    def _hazard(self, t):
        k, r = self.shape, self.rate
        out = np.empty_like(t, dtype=float)
        sf = self._sf(t)
        ok = sf > 1e-250
        with np.errstate(divide="ignore", invalid="ignore"):
            out[ok] = self._pdf(t[ok]) / sf[ok]
        # Λ/f = ∫_0^∞ (1 + u/τ)^(k-1) e^{-r u} du avoids 0/0 deep in the tail
        for i in np.flatnonzero(~ok):
            tau = t.flat[i]
            val, _ = integrate.quad(lambda u: (1.0 + u / tau) ** (k - 1.0) * math.exp(-r * u), 0, np.inf)
            out.flat[i] = 1.0 / val
        if k < 1.0:
            out[t == 0] = INFINITE_HAZARD
        elif k > 1.0:
            out[t == 0] = 0.0
        else:
            out[t == 0] = r
        return out

    def _dlogpdf(self, t):
        with np.errstate(divide="ignore"):
            return (self.shape - 1.0) / t - self.rate

    def _int_sf(self, t):
        k, r = self.shape, self.rate
        return t * special.gammaincc(k, r * t) + (k / r) * special.gammainc(k + 1.0, r * t)

    def _tail_int_sf(self, t):
        k, r = self.shape, self.rate
        return np.maximum((k / r) * special.gammaincc(k + 1.0, r * t) - t * special.gammaincc(k, r * t), 0.0)

    @property
    def mean(self):
        return self.shape / self.rate

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, 1.0 / self.rate, size=size)

    def to_dict(self):
        return {"family": "gamma", "shape": float(self.shape), "rate": float(self.rate)}


@dataclass(frozen=True)
class Weibull(WaitingTime):
    shape: float
    scale: float
    family: str = field(default="weibull", init=False, repr=False)

    def __post_init__(self):
        _check_positive("shape", self.shape)
        _check_positive("scale", self.scale)

    def _z(self, t):
        return (t / self.scale) ** self.shape

    def _hazard(self, t):
        k, lam = self.shape, self.scale
        with np.errstate(divide="ignore"):
            return (k / lam) * (t / lam) ** (k - 1.0)

    def _logpdf(self, t):
        k, lam = self.shape, self.scale
        with np.errstate(divide="ignore", invalid="ignore"):
            out = math.log(k / lam) + (k - 1.0) * np.log(t / lam) - self._z(t)
        if k == 1.0:
            out = np.where(t == 0, math.log(1.0 / lam), out)
        return out

    def _pdf(self, t):
        return np.exp(self._logpdf(t))

    def _sf(self, t):
        return np.exp(-self._z(t))

    def _cdf(self, t):
        return -np.expm1(-self._z(t))

    def _dlogpdf(self, t):
        k, lam = self.shape, self.scale
        with np.errstate(divide="ignore"):
            return (k - 1.0) / t - (k / lam) * (t / lam) ** (k - 1.0)

    def _int_sf(self, t):
        a = 1.0 + 1.0 / self.shape
        z = self._z(t)
        return t * np.exp(-z) + self.scale * special.gamma(a) * special.gammainc(a, z)

    def _tail_int_sf(self, t):
        a = 1.0 + 1.0 / self.shape
        z = self._z(t)
        return np.maximum(self.scale * special.gamma(a) * special.gammaincc(a, z) - t * np.exp(-z), 0.0)

    @property
    def mean(self):
        return self.scale * math.gamma(1.0 + 1.0 / self.shape)

    def sample(self, rng, size=None):
        u = rng.random(size=size)
        return self.scale * (-np.log1p(-u)) ** (1.0 / self.shape)

    def to_dict(self):
        return {"family": "weibull", "shape": float(self.shape), "scale": float(self.scale)}


def from_dict(d: dict) -> WaitingTime:
    fam = str(d.get("family", "")).lower()
    try:
        if fam == "exponential":
            return Exponential(float(d["rate"]))
        if fam == "gamma":
            return Gamma(float(d["shape"]), float(d["rate"]))
        if fam == "weibull":
            return Weibull(float(d["shape"]), float(d["scale"]))
    except KeyError as exc:
        raise ValueError(f"missing parameter {exc} for family {fam!r}") from None
    raise ValueError(f"unknown waiting-time family {fam!r}")


def evaluate(dist: WaitingTime, tau, kind: str = "density"):
    """Evaluate ``density``, ``survival`` or ``hazard`` at ``tau``."""
    if kind == "density":
        return dist.pdf(tau)
    if kind == "survival":
        return dist.sf(tau)
    if kind == "hazard":
        return dist.hazard(tau)
    raise ValueError(f"unknown kind {kind!r}")


def interval_integral(dist: WaitingTime, a: float, b: float, kind: str = "density") -> float:
    """∫_a^b f or ∫_a^b Λ in closed form; ``b`` may be ``inf``."""
    if math.isnan(a) or math.isnan(b):
        raise ValueError("NaN interval bound")
    if a < 0:
        raise ValueError("interval must satisfy 0 <= a")
    if a > b:
        raise ValueError(f"empty interval requires a <= b, got a={a}, b={b}")
    if a == b:
        return 0.0
    if kind == "density":
        if math.isinf(b):
            return float(dist.sf(a))
        # the smaller of the two forms keeps precision in both tails
        d_sf = float(dist.sf(a)) - float(dist.sf(b))
        d_cdf = float(dist.cdf(b)) - float(dist.cdf(a))
        return d_cdf if float(dist.cdf(b)) < 0.5 else d_sf
    if kind == "survival":
        if math.isinf(b):
            return float(dist.tail_int_sf(a))
        return float(dist.tail_int_sf(a)) - float(dist.tail_int_sf(b)) if a > dist.mean else float(
            dist.int_sf(b)
        ) - float(dist.int_sf(a))
    raise ValueError(f"unknown kind {kind!r}")


def mean_waiting(dist: WaitingTime) -> float:
    return dist.mean


# ---------------------------------------------------------------------------
# Lookup tables
# ---------------------------------------------------------------------------

LOG_REGION_LO = 1e-10
LOG_STEP = 0.02
SWITCH_CELLS = 16


@dataclass(frozen=True)
class LookupTable:
    """Piecewise cubic Hermite table for a function g(s), s >= 0.

    Nodes are log-spaced on [s_lo, s_sw] (derivatives w.r.t. log s) and
    uniformly spaced with step ``ds`` on [s_sw, s_max].  Below ``s_lo`` the
    function is extended as a power law, above ``s_max`` linearly.
    """

    s_lo: float
    s_sw: float
    du: float
    ds: float
    log_vals: np.ndarray
    log_ders: np.ndarray
    uni_vals: np.ndarray
    uni_ders: np.ndarray
    head_power: float
    log_head: bool = False  # extend log g linearly in log s instead

    def params(self):
        return (self.s_lo, self.s_sw, self.du, self.ds, self.head_power, int(self.log_head))

    def __call__(self, s):
        from ._pykernels import table_eval

        s = np.asarray(s, dtype=float)
        return table_eval(self, s)


@dataclass(frozen=True)
class LookupTables:
    cdf: LookupTable
    int_sf: LookupTable
    logpdf: LookupTable


def _build_table(fun, dfun, s_lo, s_sw, ds, s_max, log_head=False) -> LookupTable:
    n_log = int(math.ceil(math.log(s_sw / s_lo) / LOG_STEP))
    du = math.log(s_sw / s_lo) / n_log
    s_log = s_lo * np.exp(du * np.arange(n_log + 1))
    s_log[-1] = s_sw
    n_uni = int(math.ceil((s_max - s_sw) / ds)) + 2
    s_uni = s_sw + ds * np.arange(n_uni)
    lv, uv = fun(s_log), fun(s_uni)
    ld, ud = dfun(s_log) * s_log, dfun(s_uni)
    if log_head:
        head = float(ld[0])
    else:
        head = float(ld[0] / lv[0]) if lv[0] > 0 else 1.0
    return LookupTable(
        s_lo, s_sw, du, ds,
        np.ascontiguousarray(lv, dtype=float), np.ascontiguousarray(ld, dtype=float),
        np.ascontiguousarray(uv, dtype=float), np.ascontiguousarray(ud, dtype=float),
        head, log_head,
    )


@lru_cache(maxsize=256)
def _tables(dist: WaitingTime, spacing: float, s_max: float) -> LookupTables:
    ds = spacing
    s_sw = SWITCH_CELLS * ds
    s_lo = min(LOG_REGION_LO, s_sw * 1e-3)
    s_max = max(s_max, s_sw + 2 * ds)
    cdf = _build_table(dist._cdf, dist._pdf, s_lo, s_sw, ds, s_max)
    isf = _build_table(dist._int_sf, dist._sf, s_lo, s_sw, ds, s_max)

    def logpdf(s):
        return np.maximum(dist._logpdf(s), -745.0)

    def dlogpdf(s):
        out = dist._dlogpdf(s)
        return np.where(dist._logpdf(s) < -745.0, 0.0, out)

    lpdf = _build_table(logpdf, dlogpdf, s_lo, s_sw, ds, s_max, log_head=True)
    return LookupTables(cdf, isf, lpdf)
