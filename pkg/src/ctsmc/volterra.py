"""Forward and backward current equations on a time mesh.

The forward pass steps the entry current φ_α and exit current ψ_α with an
implicit trapezoidal scheme; currents are stored as cell averages so that
history sums use exact cell masses of F and ∫Λ.  Observation updates rescale
the stored history in place, which keeps every quantity O(1).
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import kernels
from .errors import InferenceError, NumericalInstabilityError
from .kernels import PackedTables
from .model import CTSMCModel
from .observation import ObservationSet, ScaledLikelihood

__all__ = [
    "Initial",
    "Terminal",
    "BoundaryCondition",
    "TimeGrid",
    "GridFunction",
    "ForwardResult",
    "BackwardResult",
    "SolverConfig",
    "build_grid",
    "boundary_inhomogeneity",
    "forward_pass",
    "backward_pass",
]

MERGE_FRACTION = 1e-6


class Initial(enum.Enum):
    TRANSITION_AT_START = "transition"
    STEADY_STATE = "steady"


class Terminal(enum.Enum):
    UNINFORMED = "uninformed"
    TRANSITION_AT_END = "transition"


@dataclass(frozen=True)
class BoundaryCondition:
    initial: Initial = Initial.TRANSITION_AT_START
    terminal: Terminal = Terminal.UNINFORMED

    @classmethod
    def parse(cls, text: str) -> "BoundaryCondition":
        """Parse ``"<transition|steady>/<uninformed|transition>"``."""
        try:
            a, b = text.split("/")
            return cls(Initial(a.strip().lower()), Terminal(b.strip().lower()))
        except ValueError as exc:
            raise ValueError(f"bad boundary spec {text!r}") from exc

    def __str__(self):
        return f"{self.initial.value}/{self.terminal.value}"


@dataclass(frozen=True)
class SolverConfig:
    h: float = 1e-3
    history_truncation_tol: float = 1e-14
    boundary: BoundaryCondition = BoundaryCondition()


# ---------------------------------------------------------------------------
# mesh and grid functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TimeGrid:
    nodes: np.ndarray
    h: float
    obs_nodes: np.ndarray  # node index of each observation
    breaks: np.ndarray  # node indices of 0, observation nodes and T

    @property
    def horizon(self) -> float:
        return float(self.nodes[-1])

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    def segments(self) -> np.ndarray:
        """For each cell c, the number of observations at times <= t_c."""
        cells = np.arange(self.nodes.size - 1)
        return np.searchsorted(self.obs_nodes, cells, side="right").astype(np.intp)


def build_grid(horizon: float, obs_times, h: float) -> TimeGrid:
    """Nodes with spacing h between breakpoints, each interval ending on a short step."""
    if not h > 0:
        raise ValueError("step h must be > 0")
    if not horizon > 0:
        raise ValueError("horizon must be > 0")
    obs_times = np.asarray(obs_times, dtype=float)
    if obs_times.size and (obs_times[0] < 0 or obs_times[-1] >= horizon):
        raise ValueError("observation times must lie in [0, horizon)")
    bps = np.unique(np.concatenate([[0.0], obs_times, [float(horizon)]]))
    pieces, breaks = [], [0]
    for a, b in zip(bps[:-1], bps[1:]):
        n = max(1, math.ceil((b - a) / h - MERGE_FRACTION))
        pieces.append(a + h * np.arange(n))
        breaks.append(breaks[-1] + n)
    nodes = np.concatenate(pieces + [[float(horizon)]])
    breaks = np.array(breaks, dtype=np.intp)
    obs_nodes = breaks[np.searchsorted(bps, obs_times)] if obs_times.size else np.zeros(0, np.intp)
    return TimeGrid(nodes, float(h), obs_nodes.astype(np.intp), breaks)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Per-state values on mesh nodes, shape (n_nodes, n_states).

    Functions with jumps at fixed times (observation updates) carry the
    jump times and their right limits; node values are left limits there,
    and evaluation interpolates within each piece separately.
    """

    times: np.ndarray
    values: np.ndarray
    interpolation: str = "cubic"
    states: tuple = None
    jump_times: np.ndarray = None
    right_limits: np.ndarray = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != np.asarray(self.times).size:
            raise ValueError("values must have shape (n_nodes, n_states)")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function has non-finite values")
        object.__setattr__(self, "values", v)
        if self.jump_times is not None:
            jt = np.asarray(self.jump_times, dtype=float)
            rl = np.asarray(self.right_limits, dtype=float).reshape(jt.size, v.shape[1])
            object.__setattr__(self, "jump_times", jt)
            object.__setattr__(self, "right_limits", rl)

    @property
    def n_states(self):
        return self.values.shape[1]

    def _interp(self, x, y, t):
        if x.size == 1:
            return np.broadcast_to(y[0], t.shape + y.shape[1:]).copy()
        if self.interpolation == "linear" or x.size < 4:
            return np.stack([np.interp(t, x, y[:, s]) for s in range(y.shape[1])], axis=-1)
        return CubicSpline(x, y, axis=0)(t)

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.jump_times is None or self.jump_times.size == 0:
            return self._interp(self.times, self.values, t)
        flat = t.ravel()
        out = np.empty((flat.size, self.n_states))
        idx = np.clip(np.searchsorted(self.times, self.jump_times), 1, self.times.size - 1)
        idx -= (self.jump_times - self.times[idx - 1]) < (self.times[idx] - self.jump_times)
        piece = np.searchsorted(self.jump_times, flat, side="left")
        bounds = np.concatenate([[0], idx, [self.times.size - 1]])
        for p in np.unique(piece):
            a, b = int(bounds[p]), int(bounds[p + 1])
            y = self.values[a : b + 1].copy()
            if p > 0:
                y[0] = self.right_limits[p - 1]
            sel = piece == p
            out[sel] = self._interp(self.times[a : b + 1], y, flat[sel])
        return out.reshape(t.shape + (self.n_states,))

    def to_csv(self, path):
        names = self.states or tuple(str(i) for i in range(self.n_states))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time"] + list(names))
            for t, row in zip(self.times, self.values):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def read_grid_csv(path) -> GridFunction:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return GridFunction(data[:, 0], data[:, 1:], states=tuple(rows[0][1:]))


# ---------------------------------------------------------------------------
# boundary terms
# ---------------------------------------------------------------------------


def boundary_inhomogeneity(bc, model: CTSMCModel, t, side="initial", kind="p", horizon=None):
    """Boundary terms g_p, g_ψ (initial side) or γ_p, γ_ψ (terminal side).

    Returns an array of shape (len(t), n_states), or (n_states,) for scalar t.
    ``horizon`` is required on the terminal side.
    """
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    out = np.empty((t.size, model.n_states))
    if side == "initial":
        p0 = model.initial
        for x, w in enumerate(model.waiting):
            if bc.initial is Initial.TRANSITION_AT_START:
                v = w.sf(t) if kind == "p" else w.pdf(t)
            else:
                v = w.tail_int_sf(t) / w.mean if kind == "p" else w.sf(t) / w.mean
            out[:, x] = p0[x] * v
    elif side == "terminal":
        if horizon is None:
            raise ValueError("terminal boundary needs the horizon")
        lag = horizon - t
        for x, w in enumerate(model.waiting):
            if bc.terminal is Terminal.UNINFORMED:
                v = w.tail_int_sf(lag) if kind == "p" else w.sf(lag)
            else:
                v = w.sf(lag) if kind == "p" else w.pdf(lag)
            out[:, x] = v
    else:
        raise ValueError("side must be 'initial' or 'terminal'")
    if kind not in ("p", "current"):
        raise ValueError("kind must be 'p' or 'current'")
    return out[0] if scalar else out


def boundary_cell_integrals(bc, model, nodes, side, horizon=None):
    """Integrals of the boundary current over each cell [t_c, t_{c+1}], shape (C, S)."""
    nodes = np.asarray(nodes, dtype=float)
    out = np.empty((nodes.size - 1, model.n_states))
    for x, w in enumerate(model.waiting):
        if side == "initial":
            if bc.initial is Initial.TRANSITION_AT_START:
                prim = w.cdf(nodes)
            else:
                prim = w.int_sf(nodes) / w.mean
            out[:, x] = model.initial[x] * np.diff(prim)
        else:
            lag = horizon - nodes
            prim = w.int_sf(lag) if bc.terminal is Terminal.UNINFORMED else w.cdf(lag)
            out[:, x] = -np.diff(prim)
    return out


# ---------------------------------------------------------------------------
# passes
# ---------------------------------------------------------------------------


def _lattice(grid: TimeGrid):
    """Piece starts (closed by N), the piece of every node and the step."""
    N = grid.nodes.size
    starts = np.append(grid.breaks, N).astype(np.intp)
    pid = (np.searchsorted(starts, np.arange(N), side="right") - 1).astype(np.intp)
    return starts, pid, grid.h


def _packed_tables(model: CTSMCModel, h: float, horizon: float):
    tabs = [w.table(h / 4.0, horizon + h) for w in model.waiting]
    return (
        PackedTables.stack([tb.cdf for tb in tabs]),
        PackedTables.stack([tb.int_sf for tb in tabs]),
    )


def _truncation(model: CTSMCModel, tol: float) -> np.ndarray:
    if tol <= 0:
        return np.full(model.n_states, np.inf)
    return np.array([w.quantile_sf(tol) for w in model.waiting])


def _fix_singular(G, cell_integral, width, neighbour):
    """Replace an infinite boundary current by the value that makes the
    trapezoid over its cell reproduce the exact cell integral."""
    bad = ~np.isfinite(G)
    if np.any(bad):
        eff = 2.0 * cell_integral / width - neighbour
        G = np.where(bad, eff, G)
    return G


def _initial_exit_current(bc, model, t):
    """Boundary exit current at the nodes, shape (S, N), and the per-cell
    correction turning its trapezoid average into the exact cell average.

    The trapezoid is far off near a density singular at 0, so callers add the
    correction (pushed through the embedded chain) to their cell averages.
    """
    Gpsi = np.ascontiguousarray(boundary_inhomogeneity(bc, model, t, "initial", "current").T)
    gcell = boundary_cell_integrals(bc, model, t, "initial").T
    Gpsi[:, 0] = _fix_singular(Gpsi[:, 0], gcell[:, 0], t[1] - t[0], Gpsi[:, 1])
    Gcorr = gcell / np.diff(t) - 0.5 * (Gpsi[:, :-1] + Gpsi[:, 1:])
    return Gpsi, Gcorr


def _check_finite(interval, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalInstabilityError("non-finite values in current equations", interval)


@dataclass(eq=False)
class ForwardResult:
    """Filtered marginals α(x,t) = P(X(t)=x | y_[0,t)) and forward currents.

    ``phi_alpha``/``psi_alpha`` hold right limits at observation nodes, so
    φ_α = M ψ_α holds node-wise.  ``filtered`` holds the posterior after each
    observation update.
    """

    grid: TimeGrid
    alpha: GridFunction
    phi_alpha: GridFunction
    psi_alpha: GridFunction
    normalizers: np.ndarray
    log_evidence: float
    filtered: np.ndarray
    mass_defect: float
    truncation: np.ndarray
    model: CTSMCModel = field(repr=False)
    obs: ObservationSet = field(repr=False)
    bc: BoundaryCondition = field(repr=False)
    cells: np.ndarray = field(repr=False)  # cell-average entry currents, local frame
    alpha_raw: np.ndarray = field(repr=False)

    @property
    def scaled_likelihood(self) -> ScaledLikelihood:
        return ScaledLikelihood(self.obs, self.normalizers)

    @property
    def h(self):
        return self.grid.h

    @property
    def horizon(self):
        return self.grid.horizon


@dataclass(eq=False)
class BackwardResult:
    """Scaled future likelihood β(x,t) and backward currents."""

    grid: TimeGrid
    beta: GridFunction
    phi_beta: GridFunction
    psi_beta: GridFunction
    truncation: np.ndarray
    cells: np.ndarray = field(repr=False)  # cell-average exit currents, local frame


def _prepare(model, obs, h, horizon):
    if horizon is None:
        raise ValueError("horizon is required")
    obs = obs.merged()
    if len(obs) and obs.likelihoods.shape[1] != model.n_states:
        raise ValueError("likelihood vectors do not match the number of states")
    return obs, build_grid(horizon, obs.times, h)


def forward_pass(
    model: CTSMCModel,
    obs: ObservationSet,
    bc: BoundaryCondition = BoundaryCondition(),
    h: float = 1e-3,
    horizon: float = None,
    history_truncation_tol: float = 1e-14,
) -> ForwardResult:
    obs, grid = _prepare(model, obs, h, horizon)
    t = grid.nodes
    S, N = model.n_states, t.size
    Ftab, Itab = _packed_tables(model, h, grid.horizon)
    trunc = _truncation(model, history_truncation_tol)
    lat = _lattice(grid)
    Mf = model.embedded.forward

    Gpsi, Gcorr = _initial_exit_current(bc, model, t)
    Gp = np.ascontiguousarray(boundary_inhomogeneity(bc, model, t, "initial", "p").T)
    bcell = np.zeros((S, N - 1))

    A = np.zeros((S, N - 1))
    cells = np.zeros((S, N - 1))
    psi = np.zeros((S, N))
    phi = np.zeros((S, N))
    phi_post = np.zeros((S, N))
    alpha_raw = np.zeros((S, N))
    psi[:, 0] = Gpsi[:, 0]
    phi[:, 0] = phi_post[:, 0] = Mf @ psi[:, 0]
    alpha_raw[:, 0] = Gp[:, 0]

    K = len(obs)
    c = np.zeros(K)
    filtered = np.zeros((K, S))
    u0 = np.ones(S)
    k = 0
    for i in range(grid.breaks.size - 1):
        n0, n1 = int(grid.breaks[i]), int(grid.breaks[i + 1])
        if k < K and grid.obs_nodes[k] == n0:
            L = obs.likelihoods[k]
            # normalised predictive mass, so discretisation loss is not counted as likelihood
            ck = float(alpha_raw[:, n0] @ L) / float(alpha_raw[:, n0].sum())
            if not ck > 0:
                raise InferenceError(f"zero-likelihood observation at t={t[n0]!r}")
            r = L / ck
            A[:, :n0] *= r[:, None]
            u0 *= r
            psi[:, n0] *= r
            phi_post[:, n0] = Mf @ psi[:, n0]
            c[k] = ck
            filtered[k] = alpha_raw[:, n0] * r
            filtered[k] /= filtered[k].sum()
            k += 1
        bpsi = Gpsi * u0[:, None]
        bp = Gp * u0[:, None]
        bcell[:, n0:n1] = Mf @ (Gcorr[:, n0:n1] * u0[:, None])
        kernels.forward_interval(
            t, n0, n1, Mf, Ftab, Itab, A, phi_post, psi, phi, alpha_raw, bpsi, bp, bcell, trunc, lat
        )
        cells[:, n0:n1] = A[:, n0:n1]
        _check_finite(i, psi[:, n0 : n1 + 1], alpha_raw[:, n0 : n1 + 1])

    mass = alpha_raw.sum(axis=0)
    states = model.states
    return ForwardResult(
        grid=grid,
        alpha=GridFunction(
            t, (alpha_raw / mass).T, states=states, jump_times=obs.times, right_limits=filtered
        ),
        phi_alpha=GridFunction(t, phi_post.T, states=states),
        psi_alpha=GridFunction(t, psi.T, states=states),
        normalizers=c,
        log_evidence=float(np.sum(np.log(c))),
        filtered=filtered,
        mass_defect=float(np.max(np.abs(mass - 1.0))),
        truncation=trunc,
        model=model,
        obs=obs,
        bc=bc,
        cells=cells,
        alpha_raw=alpha_raw,
    )


def backward_pass(
    model: CTSMCModel,
    obs: ObservationSet,
    bc: BoundaryCondition = BoundaryCondition(),
    normalizers=None,
    h: float = 1e-3,
    horizon: float = None,
    history_truncation_tol: float = 1e-14,
) -> BackwardResult:
    """Backward sweep; ``normalizers`` come from :func:`forward_pass`.

    β here is weighted by the stationary residual-time law of the current
    sojourn, so that β ≡ 1 without observations under the uninformed
    terminal condition.
    """
    if isinstance(normalizers, ForwardResult):
        normalizers = normalizers.normalizers
    obs, grid = _prepare(model, obs, h, horizon)
    sl = ScaledLikelihood(obs)
    if normalizers is None:
        sl._require()
    sl.set_normalizers(normalizers)
    log_r = sl.log_ratio

    t = grid.nodes
    T = grid.horizon
    S, N = model.n_states, t.size
    Ftab, Itab = _packed_tables(model, h, T)
    trunc = _truncation(model, history_truncation_tol)
    lat = _lattice(grid)
    Mb = model.embedded.backward
    mu = model.means

    Gpsi = np.ascontiguousarray(boundary_inhomogeneity(bc, model, t, "terminal", "current", T).T)
    Gp = np.ascontiguousarray(boundary_inhomogeneity(bc, model, t, "terminal", "p", T).T)
    cellN = boundary_cell_integrals(bc, model, t[-2:], "terminal", T)[0]
    Gpsi[:, -1] = _fix_singular(Gpsi[:, -1], cellN, t[-1] - t[-2], Gpsi[:, -2])

    B = np.zeros((S, N - 1))
    cells = np.zeros((S, N - 1))
    psi_node = np.zeros((S, N))
    phi_plus = np.zeros((S, N))
    psi_plus = np.zeros((S, N))
    beta_plus = np.zeros((S, N))
    phi_plus[:, -1] = Gpsi[:, -1]
    psi_node[:, -1] = psi_plus[:, -1] = Mb @ Gpsi[:, -1]
    beta_plus[:, -1] = Gp[:, -1]
    phi_node = phi_plus.copy()
    beta_node = beta_plus.copy()

    uT = np.ones(S)
    k = len(obs) - 1
    for i in range(grid.breaks.size - 2, -1, -1):
        n0, n1 = int(grid.breaks[i]), int(grid.breaks[i + 1])
        bphi = Gpsi * uT[:, None]
        bp = Gp * uT[:, None]
        kernels.backward_interval(
            t, n0, n1, Mb, Ftab, Itab, B, psi_node, phi_plus, psi_plus, beta_plus, bphi, bp, trunc, lat
        )
        cells[:, n0:n1] = B[:, n0:n1]
        phi_node[:, n0:n1] = phi_plus[:, n0:n1]
        beta_node[:, n0:n1] = beta_plus[:, n0:n1]
        _check_finite(i, psi_plus[:, n0:n1], beta_plus[:, n0:n1])
        if k >= 0 and grid.obs_nodes[k] == n0:
            r = np.exp(log_r[k])
            phi_node[:, n0] = r * phi_plus[:, n0]
            psi_node[:, n0] = Mb @ phi_node[:, n0]
            beta_node[:, n0] = r * beta_plus[:, n0]
            B[:, n0:] *= r[:, None]
            uT *= r
            k -= 1
        else:
            psi_node[:, n0] = psi_plus[:, n0]

    states = model.states
    return BackwardResult(
        grid=grid,
        beta=GridFunction(
            t, (beta_node / mu[:, None]).T, states=states, jump_times=obs.times,
            right_limits=(beta_plus[:, grid.obs_nodes] / mu[:, None]).T,
        ),
        phi_beta=GridFunction(t, phi_node.T, states=states),
        psi_beta=GridFunction(t, psi_node.T, states=states),
        truncation=trunc,
        cells=cells,
    )
