"""Forward filtering with step-doubling error control.

Each step is taken once with width h and once as two half steps; the
difference of the entry currents drives the step-size update
h <- clip(h * clip((tol/E)**(1/order), s_min, s_max), h_min, h_max), and the
half-step result is kept.  History weights come from fine lookup tables;
the newest cell uses exact cdf and survival integrals.  Steps are clamped so that observations fall on nodes.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InferenceError, NumericalInstabilityError
from .model import CTSMCModel
from .observation import ObservationSet
from .volterra import BoundaryCondition, GridFunction, boundary_cell_integrals, boundary_inhomogeneity

TABLE_STEP = 1e-4  # uniform-part spacing; interpolation error is O(spacing^4)

__all__ = ["AdaptiveConfig", "AdaptiveResult", "adaptive_forward", "update_step"]


@dataclass(frozen=True)
class AdaptiveConfig:
    tol: float = 1e-6
    s_min: float = 0.2
    s_max: float = 5.0
    h_min: float = 1e-6
    h_max: float = 0.5
    h_init: float = 1e-4
    # s = (tol/E)**(1/order); the step-doubling estimate E is O(h^2), so order=1
    # (s = tol/E) makes h alternate between two values around the balanced step
    order: float = 1.0
    window_tol: float = 1e-12  # history older than the (1 - window_tol) quantile is dropped

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if not 0 < self.h_min <= self.h_max:
            raise ValueError("need 0 < h_min <= h_max")
        if not 0 < self.s_min <= 1.0 <= self.s_max:
            raise ValueError("need s_min <= 1 <= s_max")
        if not self.h_min <= self.h_init <= self.h_max:
            raise ValueError("h_init must lie in [h_min, h_max]")
        if not self.order >= 1:
            raise ValueError("order must be >= 1")


def update_step(h: float, err: float, cfg: AdaptiveConfig) -> float:
    """Next preferred step from the current step and its error estimate."""
    if not np.isfinite(err):
        raise NumericalInstabilityError("non-finite step error estimate")
    s = cfg.s_max if err == 0 else min(max((cfg.tol / err) ** (1.0 / cfg.order), cfg.s_min), cfg.s_max)
    return min(max(h * s, cfg.h_min), cfg.h_max)


@dataclass(eq=False)
class AdaptiveResult:
    times: np.ndarray
    alpha: GridFunction
    phi_alpha: GridFunction
    psi_alpha: GridFunction
    steps: np.ndarray  # (n_steps, 2): start time and width of each accepted step
    normalizers: np.ndarray
    log_evidence: float

    @property
    def n_steps(self) -> int:
        return self.steps.shape[0]

    def grid_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "h"])
            for t, h in self.steps:
                w.writerow([repr(float(t)), repr(float(h))])


class _Stepper:
    def __init__(self, model, bc, cfg, horizon, cap=4096):
        self.model, self.bc = model, bc
        tabs = [w.table(TABLE_STEP, horizon + cfg.h_max) for w in model.waiting]
        self.Ftab = kernels.PackedTables.stack([tb.cdf for tb in tabs])
        self.Itab = kernels.PackedTables.stack([tb.int_sf for tb in tabs])
        S = model.n_states
        self.Mf = model.embedded.forward
        self.nodes = np.zeros(cap + 1)
        self.A = np.zeros((S, cap))
        self.n = 0  # number of stored cells
        self.u0 = np.ones(S)
        self.window = np.array([w.quantile_sf(cfg.window_tol) for w in model.waiting])
        self.singular = not np.all(np.isfinite(self._g(0.0, "current")))

    def _g(self, t, kind):
        return boundary_inhomogeneity(self.bc, self.model, t, "initial", kind)

    def _grow(self):
        cap = self.A.shape[1] * 2
        nodes = np.zeros(cap + 1)
        nodes[: self.nodes.size] = self.nodes
        A = np.zeros((self.A.shape[0], cap))
        A[:, : self.A.shape[1]] = self.A
        self.nodes, self.A = nodes, A

    def start_current(self, width):
        """Entry current at t=0, averaged consistently over a first cell of ``width``."""
        g0 = self._g(0.0, "current")
        if self.singular:
            cell = boundary_cell_integrals(self.bc, self.model, [0.0, width], "initial")[0]
            g0 = np.where(np.isfinite(g0), g0, 2.0 * cell / width - self._g(width, "current"))
        psi = self.u0 * g0
        return psi, self.Mf @ psi

    def step(self, t0, h, phi_left):
        """One implicit step from t0 over the stored history (not stored itself)."""
        n = self.n
        nodes, A = self.nodes[: n + 1], self.A[:, :n]
        t1 = t0 + h
        S = self.model.n_states
        hist, histI, d, wI = np.zeros(S), np.zeros(S), np.zeros(S), np.zeros(S)
        for x, w in enumerate(self.model.waiting):
            lo = max(int(np.searchsorted(nodes, t1 - self.window[x])) - 1, 0)
            lags = t1 - nodes[lo:]
            F = kernels.packed_eval(self.Ftab, x, lags)
            I = kernels.packed_eval(self.Itab, x, lags)
            hist[x] = (F[:-1] - F[1:]) @ A[x, lo:n]
            histI[x] = (I[:-1] - I[1:]) @ A[x, lo:n]
            d[x] = 0.5 * float(w.cdf(h))
            wI[x] = float(w.int_sf(h))
        a = hist + d * phi_left + self.u0 * self._g(t1, "current")
        psi = np.linalg.solve(np.eye(S) - d[:, None] * self.Mf, a)
        phi = self.Mf @ psi
        cell = 0.5 * (phi_left + phi)
        alpha = histI + wI * cell + self.u0 * self._g(t1, "p")
        return psi, phi, cell, alpha

    def push(self, t0, t1, cell):
        if self.n + 1 >= self.A.shape[1]:
            self._grow()
        self.nodes[self.n] = t0
        self.A[:, self.n] = cell
        self.n += 1
        self.nodes[self.n] = t1


def adaptive_forward(
    model: CTSMCModel,
    obs: ObservationSet,
    config: AdaptiveConfig = AdaptiveConfig(),
    horizon: float = None,
    bc: BoundaryCondition = BoundaryCondition(),
) -> AdaptiveResult:
    if horizon is None:
        raise ValueError("horizon is required")
    obs = obs.merged()
    if len(obs) and (obs.times[0] < 0 or obs.times[-1] >= horizon):
        raise ValueError("observation times must lie in [0, horizon)")
    cfg = config
    st = _Stepper(model, bc, cfg, horizon)
    Mf = st.Mf
    K = len(obs)
    c = np.zeros(K)
    post = np.zeros((K, model.n_states))
    k = 0

    times, alphas, phis, psis, steps = [0.0], [], [], [], []
    alpha0 = boundary_inhomogeneity(bc, model, 0.0, "initial", "p")
    psi0, phi0 = st.start_current(cfg.h_init / 2)

    def observe(alpha, psi):
        nonlocal k
        L = obs.likelihoods[k]
        ck = float(alpha @ L) / float(alpha.sum())
        if not ck > 0:
            raise InferenceError(f"zero-likelihood observation at t={obs.times[k]!r}")
        r = L / ck
        st.A[:, : st.n] *= r[:, None]
        st.u0 *= r
        c[k] = ck
        post[k] = alpha * r / float(alpha @ r)
        k += 1
        psi = psi * r
        return psi, Mf @ psi

    if k < K and obs.times[0] == 0.0:
        psi0, phi0 = observe(alpha0, psi0)
    alphas.append(alpha0)
    psis.append(psi0)
    phis.append(phi0)

    t, h, phi_left = 0.0, cfg.h_init, phi0
    while t < horizon:
        t_next = obs.times[k] if k < K else horizon
        h_act = min(h, t_next - t)
        land = h_act >= t_next - t - 1e-12 * max(1.0, t_next)
        if land:
            h_act = t_next - t
        if t == 0.0 and st.singular:
            _, phi_full_left = st.start_current(h_act)
            _, phi_half_left = st.start_current(h_act / 2)
        else:
            phi_full_left = phi_half_left = phi_left
        _, phi_full, _, _ = st.step(t, h_act, phi_full_left)
        psi1, phi1, cell1, alpha1 = st.step(t, h_act / 2, phi_half_left)
        tm = t + h_act / 2
        t1 = t_next if land else t + h_act
        st.push(t, tm, cell1)
        psi2, phi2, cell2, alpha2 = st.step(tm, t1 - tm, phi1)
        err = float(np.max(np.abs(phi_full - phi2)))
        if not np.all(np.isfinite(phi2)):
            raise NumericalInstabilityError("non-finite currents", len(steps))
        st.push(tm, t1, cell2)
        times += [tm, t1]
        alphas += [alpha1, alpha2]
        psis.append(psi1)
        phis.append(phi1)
        if land and k < K:
            psi2, phi2 = observe(alpha2, psi2)
        psis.append(psi2)
        phis.append(phi2)
        steps.append((t, h_act))
        h = update_step(h_act, err, cfg)
        t, phi_left = t1, phi2

    times = np.array(times)
    alpha = np.array(alphas)
    return AdaptiveResult(
        times,
        GridFunction(
            times, alpha / alpha.sum(axis=1, keepdims=True), "linear", model.states,
            jump_times=obs.times, right_limits=post,
        ),
        GridFunction(times, np.array(phis), "linear", model.states),
        GridFunction(times, np.array(psis), "linear", model.states),
        np.array(steps),
        c,
        float(np.sum(np.log(c))) if K else 0.0,
    )
