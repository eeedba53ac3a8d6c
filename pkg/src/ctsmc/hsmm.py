"""Explicit-duration HSMM on a uniform lattice, used as the reference oracle.

Entries F_s and exits E_t are propagated with block convolutions: history
older than the current block is folded in by FFT, the block itself by direct
sums.  Blocks end on observation nodes so that rescaling the history at an
observation never invalidates a precomputed sum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import InferenceError, ResourceBudgetError
from .model import CTSMCModel
from .observation import ObservationSet
from .volterra import BoundaryCondition, GridFunction, Initial

__all__ = ["DiscretizedHSMM", "HSMMResult", "hsmm_forward_backward", "snap_observations"]

DEFAULT_BUDGET_BYTES = 4 * 2**30
RULES = ("linear", "centered", "right")
BLOCK = 2048


@dataclass(frozen=True, eq=False)
class DiscretizedHSMM:
    """Lattice duration laws; ``d[x, j]`` is the mass of a j-step sojourn.

    Node n stands for time nh, and a lattice jump at n stands for a jump in
    ((n-1)h, nh].  A sojourn entered exactly at 0 then ends at node j when
    τ ∈ ((j-1)h, jh] (right rule).  A later sojourn enters at a uniformly
    distributed point of its cell, which turns the duration law into hat
    weights centred on jh (``rule="linear"``); the zero-length class is
    folded into j = 1.  ``rule="centered"`` (nearest node) and
    ``rule="right"`` apply one rounding to every sojourn and are first order.
    """

    h: float
    d: np.ndarray  # (S, J+1), d[:, 0] = 0
    surv: np.ndarray  # (S, J+1), surv[:, j] = 1 - sum_{i<=j} d[:, i]
    d0: np.ndarray  # initial sojourn
    surv0: np.ndarray
    d_stationary: np.ndarray  # residual sojourn when the age is stationary
    surv_stationary: np.ndarray
    m: np.ndarray
    j_max: np.ndarray
    rule: str = "linear"

    @classmethod
    def build(cls, model: CTSMCModel, h: float, n_steps: int, bc=BoundaryCondition(),
              rule: str = "linear", tail_tol: float = 1e-12):
        if rule not in RULES:
            raise ValueError(f"rule must be one of {RULES}")
        S = model.n_states
        j_max = np.array(
            [min(n_steps, math.ceil(w.quantile_sf(tail_tol) / h) + 2) for w in model.waiting]
        )
        J = int(j_max.max())
        grid = h * np.arange(J + 2)
        laws = {k: (np.zeros((S, J + 1)), np.ones((S, J + 1))) for k in ("d", "r", "s")}
        for x, w in enumerate(model.waiting):
            if rule == "linear":
                # cell-averaged survival; telescoped hat weights
                sv = (w.tail_int_sf(grid[:-1]) - w.tail_int_sf(grid[1:])) / h
                sv = np.minimum(np.minimum.accumulate(sv), 1.0)
            else:
                edges = grid[:-1] + (0.5 * h if rule == "centered" else 0.0)
                sv = np.minimum(np.minimum.accumulate(w.sf(edges)), 1.0)
            _fill(laws["d"], x, sv)
            _fill(laws["r"], x, np.minimum(np.minimum.accumulate(w.sf(grid[:-1])), 1.0))
            # residual-time law of a stationary renewal
            g = w.tail_int_sf(grid[:-1]) / w.mean
            _fill(laws["s"], x, np.minimum(np.minimum.accumulate(g), 1.0))
        d, surv = laws["d"]
        ds, survs = laws["s"]
        if bc.initial is Initial.STEADY_STATE:
            d0, surv0 = ds, survs
        elif rule == "linear":
            d0, surv0 = laws["r"]
        else:
            d0, surv0 = d, surv
        return cls(h, d, surv, d0, surv0, ds, survs, np.asarray(model.embedded.m), j_max, rule)

    def tail(self) -> np.ndarray:
        return self.surv[:, -1]


@dataclass(eq=False)
class HSMMResult:
    times: np.ndarray
    filtered: GridFunction  # predictive α at each lattice node
    smoothed: GridFunction
    backward: GridFunction  # likelihood of data in [t, T) given X(t) with stationary age
    log_evidence: float
    normalizers: np.ndarray
    obs_nodes: np.ndarray


def _fill(law, x, sv):
    """Write masses and survival for state x from survival values at nodes 0..J."""
    d, surv = law
    sv = sv.copy()
    sv[0] = 1.0  # j = 0 is not a duration; its mass joins j = 1
    surv[x] = sv
    d[x, 1:] = sv[:-1] - sv[1:]


def snap_observations(times, h: float) -> np.ndarray:
    """Nearest lattice index for each observation time."""
    return np.rint(np.asarray(times, dtype=float) / h).astype(np.intp)


def _pad(a, n):
    out = np.zeros((a.shape[0], n))
    k = min(n, a.shape[1])
    out[:, :k] = a[:, :k]
    return out


def _blocks(N, obs_nodes):
    cuts = set(range(1, N + 1, BLOCK)) | {int(i) + 1 for i in obs_nodes if 0 < i < N}
    cuts = sorted(c for c in cuts if 1 <= c <= N)
    return list(zip(cuts, cuts[1:] + [N + 1]))


def _far_sum(H, kern, b0, b1):
    """Σ_{1<=s<b0} kern[t-s] H[s] for t in [b0, b1)."""
    if b0 <= 1:
        return np.zeros((H.shape[0], b1 - b0))
    out = np.empty((H.shape[0], b1 - b0))
    for x in range(H.shape[0]):
        conv = fftconvolve(H[x, 1:b0], kern[x, : b1])
        out[x] = conv[b0 - 1 : b1 - 1]
    return out


def hsmm_forward_backward(
    model: CTSMCModel,
    obs: ObservationSet,
    h: float = 1e-4,
    horizon: float = None,
    bc: BoundaryCondition = BoundaryCondition(),
    rule: str = "linear",
    budget_bytes: int = DEFAULT_BUDGET_BYTES,
) -> HSMMResult:
    if not h > 0:
        raise ValueError("h must be > 0")
    if horizon is None:
        raise ValueError("horizon is required")
    N = int(round(horizon / h))
    S = model.n_states
    est = 8 * S * (N + 1) * 12
    if est > budget_bytes:
        raise ResourceBudgetError(
            f"lattice needs ~{est / 2**30:.1f} GiB (budget {budget_bytes / 2**30:.1f} GiB); use a larger h"
        )
    obs = obs.merged()
    nodes = snap_observations(obs.times, h)
    if nodes.size and (nodes.min() < 0 or nodes.max() >= N):
        raise ValueError("observation times must lie in [0, horizon)")
    if np.any(np.diff(nodes) == 0):
        raise ValueError("two observations snap to the same lattice node; use a smaller h")
    dh = DiscretizedHSMM.build(model, h, N, bc, rule)
    d, surv = _pad(dh.d, N + 1), _pad(dh.surv, N + 1)
    d0, surv0 = _pad(dh.d0, N + 1), _pad(dh.surv0, N + 1)
    # survival beyond the truncation is zero by construction of j_max
    Mf = np.ascontiguousarray(dh.m.T)
    Mb = np.ascontiguousarray(dh.m)
    obs_at = {int(n): k for k, n in enumerate(nodes)}
    K = nodes.size
    c = np.zeros(K)
    post = np.zeros((K, S))
    blocks = _blocks(N, nodes)

    # ---- forward ----
    H = np.zeros((S, N + 1))  # entries, running frame
    E = np.zeros((S, N + 1))  # exits, local frame
    Fl = np.zeros((S, N + 1))  # entries, local frame
    alpha = np.zeros((S, N + 1))
    H0 = model.initial.astype(float).copy()
    alpha[:, 0] = H0

    def observe(n):
        k = obs_at[n]
        L = obs.likelihoods[k]
        ck = float(alpha[:, n] @ L) / float(alpha[:, n].sum())
        if not ck > 0:
            raise InferenceError(f"zero-likelihood observation at lattice node {n}")
        r = L / ck
        H[:, : n + 1] *= r[:, None]
        H0[:] *= r
        c[k] = ck
        post[k] = alpha[:, n] * r

    if 0 in obs_at:
        observe(0)
    for b0, b1 in blocks:
        farE = _far_sum(H, d, b0, b1) + d0[:, b0:b1] * H0[:, None]
        farA = _far_sum(H, surv, b0, b1) + surv0[:, b0:b1] * H0[:, None]
        for t in range(b0, b1):
            lag_d = d[:, t - b0 : 0 : -1] if t > b0 else None
            e = farE[:, t - b0].copy()
            if lag_d is not None:
                e += np.einsum("xs,xs->x", H[:, b0:t], lag_d)
            E[:, t] = e
            f = Mf @ e
            H[:, t] = f
            Fl[:, t] = f
            alpha[:, t] = farA[:, t - b0] + np.einsum(
                "xs,xs->x", H[:, b0 : t + 1], surv[:, t - b0 :: -1][:, : t - b0 + 1]
            )
        if b1 - 1 in obs_at:
            observe(b1 - 1)

    # ---- backward ----
    HB = np.zeros((S, N + 1))  # exit-side likelihoods, running frame
    Phi = np.zeros((S, N + 1))
    Psi = np.zeros((S, N + 1))
    uT = np.ones(S)

    def rescale_future(n):
        k = obs_at[n]
        r = obs.likelihoods[k] / c[k]
        HB[:, n + 1 :] *= r[:, None]
        uT[:] *= r

    for b0, b1 in reversed(blocks):
        if b1 - 1 in obs_at:
            rescale_future(b1 - 1)
        far = np.zeros((S, b1 - b0))
        if b1 <= N:
            for x in range(S):
                rev = HB[x, b1:][::-1]
                conv = fftconvolve(rev, d[x, : N - b0 + 1])
                far[x] = conv[N - np.arange(b0, b1)]
        for s in range(b1 - 1, b0 - 1, -1):
            v = far[:, s - b0] + uT * surv[:, N - s]
            if s + 1 < b1:
                v += np.einsum("xe,xe->x", HB[:, s + 1 : b1], d[:, 1 : b1 - s])
            Phi[:, s] = v
            Psi[:, s] = Mb @ v
            HB[:, s] = Psi[:, s]
    if 0 in obs_at:
        rescale_future(0)
    phi0 = np.einsum("xe,xe->x", HB[:, 1:], d0[:, 1:]) + uT * surv0[:, N]
    Phi[:, 0] = np.einsum("xe,xe->x", HB[:, 1:], d[:, 1:]) + uT * surv[:, N]

    # β at s with a stationary-age residual; HB now carries every rescaling,
    # including those from observations before s, which R(s) removes again
    ds, survs = _pad(dh.d_stationary, N + 1), _pad(dh.surv_stationary, N + 1)
    log_r = np.zeros((S, N + 1))
    with np.errstate(divide="ignore"):
        for n, k in obs_at.items():
            log_r[:, n + 1] += np.log(obs.likelihoods[k]) - np.log(c[k])
    R = np.exp(np.cumsum(log_r, axis=1))
    beta = np.zeros((S, N + 1))
    for x in range(S):
        # corr[s] = sum_{e > s} ds[e - s] HB[e]
        corr = fftconvolve(HB[x, ::-1], ds[x])[: N + 1][::-1]
        ok = R[x] > 0  # a zero likelihood erases the information; β is left at 0 there
        beta[x, ok] = (corr[ok] + uT[x] * survs[x, N - np.flatnonzero(ok)]) / R[x, ok]
    p0 = model.initial * phi0
    p_hat = p0[:, None] + np.cumsum(Fl * Phi - E * Psi, axis=1)
    p_hat = np.maximum(p_hat, 0.0)
    p_hat /= p_hat.sum(axis=0)
    times = h * np.arange(N + 1)
    return HSMMResult(
        times,
        GridFunction(
            times, (alpha / alpha.sum(axis=0)).T, "linear", model.states,
            jump_times=times[nodes], right_limits=post / post.sum(axis=1, keepdims=True),
        ),
        GridFunction(times, p_hat.T, "linear", model.states),
        GridFunction(times, beta.T, "linear", model.states),
        float(np.sum(np.log(c))),
        c,
        nodes,
    )
