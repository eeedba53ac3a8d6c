"""Observation model: Gaussian emissions at renewal-process times."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import StateError
from .model import Trajectory, states_at
from .waiting import WaitingTime

__all__ = [
    "EmissionModel",
    "ObservationSet",
    "ScaledLikelihood",
    "sample_observations",
    "upsilon",
    "read_observations_csv",
    "write_observations_csv",
]


@dataclass(frozen=True)
class EmissionModel:
    """Y(t) ~ N(b[X(t)], d)."""

    levels: np.ndarray
    std: float

    def __post_init__(self):
        object.__setattr__(self, "levels", np.asarray(self.levels, dtype=float))
        if not self.std > 0:
            raise ValueError("emission std must be > 0")

    def likelihood(self, y) -> np.ndarray:
        """Gaussian density of each value in ``y`` under every state, shape (K, S)."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        z = (y[:, None] - self.levels[None, :]) / self.std
        return np.exp(-0.5 * z * z) / (self.std * np.sqrt(2.0 * np.pi))


@dataclass(frozen=True, eq=False)
class ObservationSet:
    times: np.ndarray
    likelihoods: np.ndarray
    values: np.ndarray = None

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.times, dtype=float))
        L = np.asarray(self.likelihoods, dtype=float)
        if L.ndim == 1 and t.size == 0:
            L = L.reshape(0, 0)
        if L.ndim != 2 or L.shape[0] != t.size:
            raise ValueError("likelihoods must have shape (n_obs, n_states)")
        if np.any(np.diff(t) < 0):
            raise ValueError("observation times must be increasing")
        if np.any(~np.isfinite(L)) or np.any(L < 0):
            raise ValueError("likelihood vectors must be finite and nonnegative")
        if L.shape[0] and np.any(L.max(axis=1) <= 0):
            raise ValueError("each likelihood vector needs a strictly positive entry")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "likelihoods", L)
        if self.values is not None:
            object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    @classmethod
    def empty(cls, n_states: int) -> "ObservationSet":
        return cls(np.zeros(0), np.zeros((0, n_states)))

    @classmethod
    def from_values(cls, times, values, emission: EmissionModel) -> "ObservationSet":
        return cls(times, emission.likelihood(values), values)

    def __len__(self):
        return self.times.size

    def merged(self) -> "ObservationSet":
        """Merge duplicate times by multiplying their likelihood vectors."""
        if self.times.size < 2 or np.all(np.diff(self.times) > 0):
            return self
        uniq, inv = np.unique(self.times, return_inverse=True)
        L = np.ones((uniq.size, self.likelihoods.shape[1]))
        for k, j in enumerate(inv):
            L[j] *= self.likelihoods[k]
        return ObservationSet(uniq, L)


def sample_observations(
    traj: Trajectory, emission: EmissionModel, renewal: WaitingTime, seed
) -> ObservationSet:
    """Renewal-process observation times on [0, horizon) with Gaussian values."""
    if traj is None or traj.states.size == 0:
        raise ValueError("empty trajectory")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    times = []
    t = float(renewal.sample(rng))
    while t < traj.horizon:
        times.append(t)
        t += float(renewal.sample(rng))
    times = np.array(times)
    x = states_at(traj, times) if times.size else np.zeros(0, dtype=int)
    y = emission.levels[x] + emission.std * rng.standard_normal(times.size)
    return ObservationSet.from_values(times, y, emission)


@dataclass(eq=False)
class ScaledLikelihood:
    """Normalised likelihood products υ(x, a, b) = ∏_{a <= t_k < b} L_k(x)/c_k."""

    obs: ObservationSet
    normalizers: np.ndarray = None
    _cum: np.ndarray = field(default=None, init=False, repr=False)
    _zeros: np.ndarray = field(default=None, init=False, repr=False)
    _lr: np.ndarray = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.normalizers is not None:
            self.set_normalizers(self.normalizers)

    def set_normalizers(self, c):
        c = np.asarray(c, dtype=float)
        if c.shape != (len(self.obs),):
            raise ValueError("one normalizer per observation required")
        if np.any(~(c > 0)):
            raise ValueError("normalizers must be > 0")
        self.normalizers = c
        with np.errstate(divide="ignore"):
            lr = np.log(self.obs.likelihoods) - np.log(c)[:, None]
        self._lr = lr
        # zero likelihoods are tracked as counts so window sums never meet inf - inf
        zero = np.isneginf(lr)
        S = lr.shape[1] if lr.ndim == 2 else 0
        self._cum = np.zeros((len(self.obs) + 1, S))
        self._cum[1:] = np.cumsum(np.where(zero, 0.0, lr), axis=0)
        self._zeros = np.zeros((len(self.obs) + 1, S), dtype=np.intp)
        self._zeros[1:] = np.cumsum(zero, axis=0)

    @property
    def log_ratio(self) -> np.ndarray:
        """log(L_k(x)/c_k), shape (K, S)."""
        self._require()
        return self._lr

    def _require(self):
        if self._cum is None:
            raise StateError("normalizers missing: run the forward pass first")

    def log_cum_before(self, t) -> np.ndarray:
        """Σ_{t_k < t} log(L_k/c_k) for each time in ``t``; shape (len(t), S)."""
        self._require()
        idx = np.searchsorted(self.obs.times, np.asarray(t, dtype=float), side="left")
        return np.where(self._zeros[idx] > 0, -np.inf, self._cum[idx])

    def log_upsilon(self, x, t_from, t_to):
        self._require()
        t_from = np.asarray(t_from, dtype=float)
        t_to = np.asarray(t_to, dtype=float)
        if np.any(t_from > t_to):
            raise ValueError("t_from must be <= t_to")
        i0 = np.searchsorted(self.obs.times, t_from, side="left")
        i1 = np.searchsorted(self.obs.times, t_to, side="left")
        out = self._cum[i1, x] - self._cum[i0, x]
        out = np.where(self._zeros[i1, x] > self._zeros[i0, x], -np.inf, out)
        # exact zero for empty windows, independent of rounding
        return np.where(i1 == i0, 0.0, out)

    def __call__(self, x, t_from, t_to):
        return upsilon(self, x, t_from, t_to)


def upsilon(sl: ScaledLikelihood, x: int, t_from, t_to):
    """Product of L_k(x)/c_k over observations with t_from <= t_k < t_to."""
    out = np.exp(sl.log_upsilon(x, t_from, t_to))
    return float(out) if np.ndim(out) == 0 else out


def read_observations_csv(path, emission: EmissionModel | None = None, n_states: int | None = None):
    """Read ``time,value`` (needs ``emission``) or ``time,L(x_1),...,L(x_n)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], [r for r in rows[1:] if r]
    data = np.array([[float(v) for v in r] for r in body]) if body else np.zeros((0, len(header)))
    if len(header) == 2 and header[1].strip().lower() == "value":
        if emission is None:
            raise ValueError("value observations need an emission model")
        return ObservationSet.from_values(data[:, 0], data[:, 1], emission)
    L = data[:, 1:]
    if n_states is not None and L.shape[1] != n_states:
        raise ValueError(f"expected {n_states} likelihood columns, got {L.shape[1]}")
    return ObservationSet(data[:, 0], L)


def write_observations_csv(obs: ObservationSet, path, states=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if obs.values is not None:
            w.writerow(["time", "value"])
            for t, y in zip(obs.times, obs.values):
                w.writerow([repr(float(t)), repr(float(y))])
        else:
            S = obs.likelihoods.shape[1]
            names = states or [str(i) for i in range(S)]
            w.writerow(["time"] + [f"L({s})" for s in names])
            for t, row in zip(obs.times, obs.likelihoods):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
