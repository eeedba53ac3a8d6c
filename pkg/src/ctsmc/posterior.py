"""Smoothed marginals, MAP paths and the posterior number of jumps."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import kernels
from .errors import StateError
from .model import CTSMCModel, Trajectory
from .observation import ObservationSet, ScaledLikelihood
from .volterra import (
    BackwardResult,
    BoundaryCondition,
    ForwardResult,
    GridFunction,
    Initial,
    Terminal,
    _initial_exit_current,
    _packed_tables,
    boundary_cell_integrals,
    boundary_inhomogeneity,
    build_grid,
    forward_pass,
)

__all__ = [
    "SmoothedResult",
    "ViterbiResult",
    "ChainLengthPosterior",
    "TruncationError",
    "smooth",
    "viterbi_map",
    "chain_length_posterior",
    "rescore_path",
]


class TruncationError(RuntimeError):
    """Posterior jump-count mass did not converge below the safety cap."""


@dataclass(eq=False)
class SmoothedResult:
    p_hat: GridFunction
    mass_defect: float  # max |unnormalised mass - 1| over nodes


def _log_frames(fwd: ForwardResult):
    """Cumulative log r per segment, shape (S, K+1), and cell segment indices."""
    # floored so frames spanning a zero-likelihood update give exp(...) = 0, not nan
    log_r = np.maximum(fwd.scaled_likelihood.log_ratio, LOG_RATIO_FLOOR)
    S = fwd.model.n_states
    lu_seg = np.zeros((S, log_r.shape[0] + 1))
    lu_seg[:, 1:] = np.cumsum(log_r, axis=0).T
    return np.ascontiguousarray(lu_seg), fwd.grid.segments()


def smooth(
    fwd: ForwardResult,
    bwd: BackwardResult,
    model: CTSMCModel = None,
    sl: ScaledLikelihood = None,
    bc: BoundaryCondition = None,
) -> SmoothedResult:
    """p̂(x,t) from sojourns entered before t and left after t.

    Entry and exit cells are paired with the exact double integral of f over
    the cell pair; sojourns that began before 0 or outlast T enter through
    the boundary currents.  ``sl`` is accepted for interface symmetry; the
    frame factors come from the forward normalizers.
    """
    model = model or fwd.model
    bc = bc or fwd.bc
    grid = fwd.grid
    if bwd.grid.nodes.shape != grid.nodes.shape or not np.array_equal(bwd.grid.nodes, grid.nodes):
        raise StateError("forward and backward results live on different grids")
    t = grid.nodes
    T = grid.horizon
    S, N = model.n_states, t.size
    lu_seg, seg = _log_frames(fwd)
    lu_cell = lu_seg[:, seg]
    lu_T = lu_seg[:, -1]

    _, Itab = _packed_tables(model, grid.h, T)
    trunc = np.maximum(fwd.truncation, bwd.truncation)
    A = np.ascontiguousarray(fwd.cells)
    B = np.ascontiguousarray(bwd.cells)
    out = np.zeros((S, N - 1))
    inn = np.zeros((S, N - 1))
    kernels.pair_sums(t, Itab, A, B, seg, lu_seg, trunc, out, inn)
    pi = np.zeros((S, N))
    pi[:, 1:] = np.cumsum(out - inn, axis=1)

    # sojourn in progress at 0, left inside the window
    g_cell = boundary_cell_integrals(bc, model, t, "initial").T
    gterm = g_cell * np.exp(lu_cell) * B
    G = np.zeros((S, N))
    G[:, :-1] = np.cumsum(gterm[:, ::-1], axis=1)[:, ::-1]
    # ... or never left before T
    surv = np.exp(lu_T) * boundary_inhomogeneity(bc, model, T, "initial", "p")

    # sojourn entered inside the window and still running at T
    gam_cell = boundary_cell_integrals(bc, model, t, "terminal", T).T
    Gam = np.zeros((S, N))
    Gam[:, 1:] = np.cumsum(A * gam_cell * np.exp(lu_T[:, None] - lu_cell), axis=1)

    raw = pi + G + Gam + surv[:, None]
    mass = raw.sum(axis=0)
    p_hat = np.maximum(raw / mass, 0.0)
    p_hat /= p_hat.sum(axis=0)
    return SmoothedResult(
        GridFunction(t, p_hat.T, states=model.states),
        float(np.max(np.abs(mass - 1.0))),
    )


# ---------------------------------------------------------------------------
# path scores
# ---------------------------------------------------------------------------


def _log(v):
    with np.errstate(divide="ignore"):
        return np.log(v)


def _log_init_exit(model, bc, x, t):
    """log g_ψ(x, t): the initial sojourn ends at t."""
    w = model.waiting[x]
    if bc.initial is Initial.TRANSITION_AT_START:
        return _log(model.initial[x]) + w.logpdf(t)
    return _log(model.initial[x]) + _log(w.sf(t)) - np.log(w.mean)


def _log_init_survive(model, bc, x, T):
    """The initial sojourn covers the whole window."""
    if bc.terminal is Terminal.TRANSITION_AT_END:
        return _log_init_exit(model, bc, x, T)
    return _log(boundary_inhomogeneity(bc, model, T, "initial", "p")[x])


def _log_last(model, bc, x, lag):
    w = model.waiting[x]
    if bc.terminal is Terminal.TRANSITION_AT_END:
        return w.logpdf(lag)
    return _log(w.sf(lag))


def _path_score(model, bc, log_ratio, obs_times, jt, st, T):
    logm = _log(model.embedded.m)
    n = jt.size - 1
    if n == 0:
        score = float(_log_init_survive(model, bc, st[0], T))
    else:
        score = float(_log_init_exit(model, bc, st[0], jt[1]))
        score += float(np.sum(logm[st[:-1], st[1:]]))
        for i in range(1, n):
            score += float(model.waiting[st[i]].logpdf(jt[i + 1] - jt[i]))
        score += float(_log_last(model, bc, st[n], T - jt[n]))
    if obs_times.size:
        xs = st[np.searchsorted(jt, obs_times, side="right") - 1]
        score += float(np.sum(log_ratio[np.arange(obs_times.size), xs]))
    return score


def rescore_path(model: CTSMCModel, traj: Trajectory, sl: ScaledLikelihood, bc=BoundaryCondition()):
    """Log density of a path times its scaled observation likelihood."""
    return _path_score(
        model, bc, sl.log_ratio, sl.obs.times, traj.jump_times, traj.states, traj.horizon
    )


# ---------------------------------------------------------------------------
# chain length
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ChainLengthPosterior:
    probabilities: np.ndarray  # P(n|y) for n = 0..n_trunc
    residual: float
    unnormalized: np.ndarray  # Σ_x p_n(x,T) in the forward frame
    evidence_mass: float  # Σ_x α(x,T) of the matching forward pass
    phi_max: np.ndarray = field(repr=False)  # max over x,t of φ_n

    @property
    def mode(self) -> int:
        return int(np.argmax(self.probabilities))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "probability"])
            for n, p in enumerate(self.probabilities):
                w.writerow([n, repr(float(p))])


def _layered_currents(fwd: ForwardResult, n_layers: int):
    """p_n(T) for n < n_layers, stepping all jump-count layers through time."""
    model, grid, bc = fwd.model, fwd.grid, fwd.bc
    t = grid.nodes
    S, N = model.n_states, t.size
    T = grid.horizon
    tabs = [w.table(grid.h / 4.0, T + grid.h) for w in model.waiting]
    Mf = model.embedded.forward
    Gpsi, Gcorr = _initial_exit_current(bc, model, t)
    gp_T = boundary_inhomogeneity(bc, model, T, "initial", "p")
    L_obs = fwd.obs.likelihoods
    obs_at = {int(n): k for k, n in enumerate(grid.obs_nodes)}
    trunc = fwd.truncation

    A = np.zeros((S, n_layers, N - 1))
    phi_post = np.zeros((S, n_layers))
    phi_max = np.zeros(n_layers)
    u0 = np.ones(S)
    hist = np.zeros((S, n_layers))
    dF = np.zeros(S)
    for j in range(N):
        psi = np.zeros((S, n_layers))
        phi = np.zeros((S, n_layers))
        psi[:, 0] = u0 * Gpsi[:, j]
        if j > 0:
            for x in range(S):
                lo = int(np.searchsorted(t, t[j] - trunc[x], side="left")) - 1
                lo = min(max(lo, 0), j - 1)
                Fv = tabs[x].cdf(t[j] - t[lo : j])
                hist[x] = A[x, :, lo : j - 1] @ (Fv[:-1] - Fv[1:])
                dF[x] = Fv[-1]
        for n in range(1, n_layers):
            phi[:, n] = Mf @ psi[:, n - 1]
            if j > 0:
                A[:, n, j - 1] = 0.5 * (phi_post[:, n] + phi[:, n])
                if n == 1:
                    A[:, 1, j - 1] += Mf @ (u0 * Gcorr[:, j - 1])
                psi[:, n] = hist[:, n] + dF * A[:, n, j - 1]
        if j in obs_at:
            r = L_obs[obs_at[j]] / fwd.normalizers[obs_at[j]]
            A[:, :, :j] *= r[:, None, None]
            u0 *= r
            psi *= r[:, None]
            phi_post[:, 1:] = (Mf @ psi[:, :-1])
        else:
            phi_post = phi
        phi_max = np.maximum(phi_max, phi_post.max(axis=0))
    Iv = np.stack([tabs[x].int_sf(T - t) for x in range(S)])
    w_last = Iv[:, :-1] - Iv[:, 1:]
    p = np.einsum("xc,xnc->n", w_last, A)
    p[0] = float(np.sum(u0 * gp_T))
    return p, phi_max


def chain_length_posterior(
    model: CTSMCModel,
    obs: ObservationSet,
    sl: ScaledLikelihood = None,
    bc: BoundaryCondition = BoundaryCondition(),
    h: float = 1e-2,
    mass_tol: float = 1e-6,
    horizon: float = None,
    fwd: ForwardResult = None,
) -> ChainLengthPosterior:
    """P(n | y) for the number of jumps in [0, T].

    Runs a forward pass at step ``h`` unless a matching one is supplied; the
    layer sums then reproduce its terminal mass up to the truncated tail.
    """
    if not 0 < mass_tol < 1:
        raise ValueError("mass_tol must lie in (0, 1)")
    if fwd is None or fwd.h != h:
        fwd = forward_pass(model, obs, bc, h=h, horizon=horizon)
    T = fwd.horizon
    expected = T / float(np.min(model.means))
    n_cap = int(np.ceil(64 * max(expected, 1.0)))
    n_layers = min(n_cap, int(np.ceil(4 * expected)) + 16)
    Z = float(fwd.alpha_raw[:, -1].sum())
    while True:
        p, phi_max = _layered_currents(fwd, n_layers)
        cum = np.cumsum(p) / Z
        hit = np.flatnonzero(cum >= 1.0 - mass_tol)
        if hit.size:
            n_trunc = int(hit[0])
            break
        if n_layers >= n_cap:
            raise TruncationError(
                f"jump-count mass {cum[-1]:.3e} below 1-{mass_tol:g} after {n_layers} layers"
            )
        n_layers = min(n_cap, 2 * n_layers)
    probs = p[: n_trunc + 1] / Z
    residual = max(0.0, 1.0 - float(probs.sum()))
    return ChainLengthPosterior(probs, residual, p, Z, phi_max)


# ---------------------------------------------------------------------------
# MAP path
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ViterbiResult:
    map_path: Trajectory
    map_log_score: float
    chain_length_posterior: np.ndarray
    truncation_mass: float
    grid_log_score: float
    scaled_likelihood: ScaledLikelihood = field(repr=False)

    @property
    def n_jumps(self) -> int:
        return self.map_path.n_jumps

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["jump_time", "state"])
            for t, x in zip(self.map_path.jump_times, self.map_path.states):
                w.writerow([repr(float(t)), int(x)])


LOG_RATIO_FLOOR = -1e4


def _grid_viterbi(model, bc, sl, s, T):
    """Max-product recursion over jump times restricted to the nodes ``s``."""
    S, N = model.n_states, s.size
    logm = _log(model.embedded.m)
    # Σ_{t_k < s_j} log r_k; impossible observations get a finite penalty so
    # that differences of cumulative sums stay defined
    lr = np.maximum(sl.log_ratio, LOG_RATIO_FLOOR)
    cum = np.vstack([np.zeros(S), np.cumsum(lr, axis=0)])
    LU = cum[np.searchsorted(sl.obs.times, s, side="left")].T
    LU_T = cum[np.searchsorted(sl.obs.times, T, side="left")]
    V = np.full((N, S), -np.inf)  # best score with a jump into x at s_j
    bpV = np.zeros((N, S), dtype=np.intp)
    bpW = np.full((N, S), -1, dtype=np.intp)
    W = np.empty(S)
    for j in range(1, N - 1):
        for x in range(S):
            best = float(_log_init_exit(model, bc, x, s[j]))
            arg = -1
            if j > 1:
                cand = V[1:j, x] - LU[x, 1:j] + model.waiting[x].logpdf(s[j] - s[1:j])
                i = int(np.argmax(cand))
                if cand[i] > best:
                    best, arg = float(cand[i]), i + 1
            W[x] = best + LU[x, j]
            bpW[j, x] = arg
        tmp = W[:, None] + logm
        bpV[j] = np.argmax(tmp, axis=0)
        V[j] = tmp[bpV[j], np.arange(S)]

    final0 = np.array([_log_init_survive(model, bc, x, T) for x in range(S)]) + LU_T
    x0 = int(np.argmax(final0))
    best, end = float(final0[x0]), None
    if N > 2:
        lags = T - s[1 : N - 1]
        fin = np.stack(
            [V[1 : N - 1, x] + _log_last(model, bc, x, lags) + LU_T[x] - LU[x, 1 : N - 1] for x in range(S)]
        )
        flat = int(np.argmax(fin))
        xe, je = divmod(flat, N - 2)
        if fin[xe, je] > best:
            best, end = float(fin[xe, je]), (je + 1, xe)
    if end is None:
        return [0.0], [x0], best
    times, states = [], []
    j, x = end
    while True:
        times.append(s[j])
        states.append(x)
        xp = int(bpV[j, x])
        i = int(bpW[j, xp])
        if i < 0:
            times.append(0.0)
            states.append(xp)
            break
        j, x = i, xp
    return times[::-1], states[::-1], best


def _refine(model, bc, sl, jt, st, T, h, max_sweeps=50):
    """Coordinate ascent on jump times within ±h of their grid positions.

    Sojourns are kept at least h/2 long: with a density singular at zero the
    path score is unbounded as a sojourn shrinks, so the mesh scale is the
    meaningful resolution.
    """
    log_ratio, obs_t = sl.log_ratio, sl.obs.times
    jt = np.array(jt, dtype=float)
    st = np.asarray(st)

    def score_at(i, tau):
        old = jt[i]
        jt[i] = tau
        v = _path_score(model, bc, log_ratio, obs_t, jt, st, T)
        jt[i] = old
        return v

    score = _path_score(model, bc, log_ratio, obs_t, jt, st, T)
    n = jt.size - 1
    for _ in range(max_sweeps):
        start = score
        for i in range(1, n + 1):
            lo = max(jt[i - 1] + 0.5 * h, jt[i] - h)
            hi = min((jt[i + 1] - 0.5 * h) if i < n else T, jt[i] + h)
            if not lo < jt[i] < hi:
                continue
            inner = obs_t[(obs_t > lo) & (obs_t < hi)]
            pts = np.concatenate([[lo], inner, [hi]])
            best_tau, best = jt[i], score
            for a, b in zip(pts[:-1], pts[1:]):
                res = minimize_scalar(
                    lambda tau: -score_at(i, tau), bounds=(a, b), method="bounded",
                    options={"xatol": 1e-13 * max(1.0, T)},
                )
                cands = [(float(res.x), -float(res.fun))]
                if b in inner:
                    cands.append((float(b), score_at(i, b)))
                for tau, v in cands:
                    if v > best and lo < tau < hi:
                        best_tau, best = tau, v
            jt[i], score = best_tau, best
        if score - start <= 1e-13 * max(1.0, abs(score)):
            break
    return jt, score


def viterbi_map(
    model: CTSMCModel,
    obs: ObservationSet,
    sl: ScaledLikelihood = None,
    bc: BoundaryCondition = BoundaryCondition(),
    h: float = 1e-2,
    mass_tol: float = 1e-6,
    horizon: float = None,
    refine: bool = False,
    fwd: ForwardResult = None,
) -> ViterbiResult:
    """MAP path over jump times on a mesh of step ``h``.

    The score is the joint log density of the path and the scaled
    observations; ``refine`` polishes the jump times off the mesh.
    """
    if not 0 < mass_tol < 1:
        raise ValueError("mass_tol must lie in (0, 1)")
    obs = obs.merged()
    singular = [s for s, w in zip(model.states, model.waiting) if not np.isfinite(w.density_at_zero)]
    if singular:
        warnings.warn(
            f"holding-time density is unbounded at zero for states {singular}; the path "
            "density has no maximum and the MAP path is limited only by the step h",
            RuntimeWarning,
            stacklevel=2,
        )
    if fwd is None or fwd.h != h:
        fwd = forward_pass(model, obs, bc, h=h, horizon=horizon if horizon is not None else fwd.horizon)
    clp = chain_length_posterior(model, obs, sl, bc, h, mass_tol, fwd=fwd)
    if sl is None:
        sl = fwd.scaled_likelihood
    T = fwd.horizon
    s = build_grid(T, obs.times, h).nodes
    times, states, grid_score = _grid_viterbi(model, bc, sl, s, T)
    jt, st = np.array(times), np.array(states)
    score = _path_score(model, bc, sl.log_ratio, sl.obs.times, jt, st, T)
    if not np.isfinite(score):
        warnings.warn(
            "no path on the mesh is compatible with every observation; use a smaller h",
            RuntimeWarning,
            stacklevel=2,
        )
    if refine and jt.size > 1:
        jt, score = _refine(model, bc, sl, jt, st, T, h)
    return ViterbiResult(
        Trajectory(jt, st, T), float(score), clp.probabilities, clp.residual, grid_score, sl
    )
