"""Continuous-time semi-Markov chain models and exact path simulation."""
from __future__ import annotations

import bisect
import json
from dataclasses import dataclass

import numpy as np

from .waiting import Exponential, WaitingTime, from_dict

__all__ = [
    "EmbeddedChain",
    "CTSMCModel",
    "Trajectory",
    "validate_model",
    "sample_trajectory",
    "state_at",
    "steady_state_ctmc",
    "load_model",
    "save_model",
]

ROW_TOL = 1e-12


@dataclass(frozen=True)
class EmbeddedChain:
    """Jump chain ``m[x, x']`` = P(next state x' | leaving x)."""

    m: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "m", np.array(self.m, dtype=float))

    @property
    def n_states(self):
        return self.m.shape[0]

    @property
    def forward(self):
        """Matrix of the forward operator: (M g)(x) = sum_x' m(x|x') g(x')."""
        return np.ascontiguousarray(self.m.T)

    @property
    def backward(self):
        """Matrix of the adjoint: (M† g)(x) = sum_x' m(x'|x) g(x')."""
        return np.ascontiguousarray(self.m)


@dataclass(frozen=True, eq=False)
class CTSMCModel:
    waiting: tuple
    embedded: EmbeddedChain
    initial: np.ndarray = None
    states: tuple = None

    def __post_init__(self):
        waiting = tuple(self.waiting)
        object.__setattr__(self, "waiting", waiting)
        if not isinstance(self.embedded, EmbeddedChain):
            object.__setattr__(self, "embedded", EmbeddedChain(self.embedded))
        n = len(waiting)
        if self.initial is None:
            object.__setattr__(self, "initial", np.full(n, 1.0 / max(n, 1)))
        else:
            object.__setattr__(self, "initial", np.array(self.initial, dtype=float))
        if self.states is None:
            object.__setattr__(self, "states", tuple(str(i) for i in range(n)))
        else:
            object.__setattr__(self, "states", tuple(str(s) for s in self.states))

    @property
    def n_states(self) -> int:
        return len(self.waiting)

    @property
    def means(self) -> np.ndarray:
        return np.array([w.mean for w in self.waiting])

    def to_dict(self) -> dict:
        return {
            "states": list(self.states),
            "waiting": [w.to_dict() for w in self.waiting],
            "embedded": self.embedded.m.tolist(),
            "initial": self.initial.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CTSMCModel":
        return cls(
            waiting=tuple(from_dict(w) for w in d["waiting"]),
            embedded=EmbeddedChain(d["embedded"]),
            initial=d.get("initial"),
            states=d.get("states"),
        )

    def __eq__(self, other):
        if not isinstance(other, CTSMCModel):
            return NotImplemented
        return (
            self.waiting == other.waiting
            and self.states == other.states
            and np.array_equal(self.embedded.m, other.embedded.m)
            and np.array_equal(self.initial, other.initial)
        )


def load_model(path) -> CTSMCModel:
    with open(path) as fh:
        model = CTSMCModel.from_dict(json.load(fh))
    problems = validate_model(model)
    if problems:
        raise ValueError("invalid model: " + "; ".join(problems))
    return model


def save_model(model: CTSMCModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=2)


def validate_model(model: CTSMCModel) -> list[str]:
    """Return a list of violated invariants; empty means the model is valid."""
    problems = []
    m = model.embedded.m
    n = model.n_states
    if n < 2:
        problems.append("need at least 2 states")
    if m.shape != (n, n):
        problems.append(f"embedded chain shape {m.shape} does not match {n} states")
        return problems
    if model.initial.shape != (n,):
        problems.append("initial distribution has wrong length")
    if not np.all(np.isfinite(m)) or np.any(m < 0):
        problems.append("embedded chain has negative or non-finite entries")
    if np.any(np.diag(m) != 0):
        problems.append("nonzero diagonal (self-transitions) in embedded chain")
    bad_rows = np.flatnonzero(np.abs(m.sum(axis=1) - 1.0) > ROW_TOL)
    if bad_rows.size:
        problems.append(f"row not stochastic: rows {bad_rows.tolist()}")
    p0 = model.initial
    if model.initial.shape == (n,):
        if np.any(p0 < 0) or not np.all(np.isfinite(p0)) or abs(p0.sum() - 1.0) > ROW_TOL:
            problems.append("initial distribution is not a probability vector")
    if len(model.states) != n or len(set(model.states)) != n:
        problems.append("state labels must be unique and match the state count")
    for i, w in enumerate(model.waiting):
        if not isinstance(w, WaitingTime):
            problems.append(f"state {i}: waiting time is not a distribution")
    return problems


@dataclass(frozen=True)
class Trajectory:
    """Piecewise-constant, right-continuous path on [0, horizon]."""

    jump_times: np.ndarray
    states: np.ndarray
    horizon: float

    def __post_init__(self):
        jt = np.asarray(self.jump_times, dtype=float)
        st = np.asarray(self.states, dtype=int)
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "states", st)
        if jt.size == 0 or jt.size != st.size:
            raise ValueError("trajectory needs matching, non-empty jump_times and states")
        if jt[0] != 0.0:
            raise ValueError("jump_times[0] must be 0")
        if np.any(np.diff(jt) <= 0):
            raise ValueError("jump_times must be strictly increasing")
        if jt[-1] > self.horizon:
            raise ValueError("jump time beyond horizon")
        if np.any(st[1:] == st[:-1]):
            raise ValueError("consecutive states must differ")

    @property
    def n_jumps(self) -> int:
        return self.jump_times.size - 1


def state_at(traj: Trajectory, t: float) -> int:
    if not 0.0 <= t <= traj.horizon:
        raise ValueError(f"t={t} outside [0, {traj.horizon}]")
    i = bisect.bisect_right(traj.jump_times.tolist(), t) - 1
    return int(traj.states[i])


def states_at(traj: Trajectory, times) -> np.ndarray:
    """Vectorised :func:`state_at`."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(times > traj.horizon):
        raise ValueError("times outside trajectory range")
    return traj.states[np.searchsorted(traj.jump_times, times, side="right") - 1]


def sample_trajectory(model: CTSMCModel, horizon: float, seed) -> Trajectory:
    if not horizon > 0:
        raise ValueError("horizon must be > 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = model.n_states
    x = int(rng.choice(n, p=model.initial))
    t = 0.0
    times, states = [0.0], [x]
    m = model.embedded.m
    while True:
        t += float(model.waiting[x].sample(rng))
        if t >= horizon:
            break
        x = int(rng.choice(n, p=m[x]))
        times.append(t)
        states.append(x)
    return Trajectory(np.array(times), np.array(states), float(horizon))


def steady_state_ctmc(model: CTSMCModel) -> CTSMCModel:
    """Exponential-waiting approximation with matched mean holding times."""
    waiting = tuple(
        w if isinstance(w, Exponential) else Exponential(1.0 / w.mean) for w in model.waiting
    )
    return CTSMCModel(waiting, model.embedded, model.initial.copy(), model.states)
