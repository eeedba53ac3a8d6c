import numpy as np
import pytest
from scipy.linalg import expm

from ctsmc import CTSMCModel, EmbeddedChain, Exponential, Gamma, Trajectory, Weibull


@pytest.fixture
def three_state():
    m = np.array([[0.0, 0.5, 0.5], [0.3, 0.0, 0.7], [0.6, 0.4, 0.0]])
    return CTSMCModel((Gamma(2.0, 1.5), Weibull(1.3, 0.9), Gamma(3.0, 2.0)), EmbeddedChain(m))


@pytest.fixture
def two_state_exp():
    return CTSMCModel((Exponential(1.0), Exponential(2.0)), EmbeddedChain([[0, 1], [1, 0]]))


def ctmc_generator(model):
    rates = np.array([w.rate for w in model.waiting])
    Q = rates[:, None] * model.embedded.m
    np.fill_diagonal(Q, -rates)
    return Q


def ctmc_filter(model, obs, p0=None):
    """Predictive marginals at each observation time by matrix exponentials."""
    Q = ctmc_generator(model)
    p = model.initial.copy() if p0 is None else p0
    t, out, logz = 0.0, [], 0.0
    for tk, L in zip(obs.times, obs.likelihoods):
        p = p @ expm(Q * (tk - t))
        out.append(p.copy())
        c = p @ L
        logz += np.log(c)
        p = p * L / c
        t = tk
    return np.array(out), logz


def perturb_path(traj, rng, S, h):
    """Move one jump by ~3h or relabel one sojourn; None if no relabel is possible."""
    jt, st = traj.jump_times.copy(), traj.states.copy()
    if jt.size > 1 and rng.random() < 0.7:
        i = rng.integers(1, jt.size)
        lo, hi = jt[i - 1], jt[i + 1] if i + 1 < jt.size else traj.horizon
        jt[i] = np.clip(jt[i] + rng.normal(0, 3 * h), lo + 1e-9, hi - 1e-9)
    else:
        i = rng.integers(st.size)
        bad = {st[i - 1] if i > 0 else -1, st[i + 1] if i + 1 < st.size else -1, st[i]}
        choices = [x for x in range(S) if x not in bad]
        if not choices:
            return None
        st[i] = rng.choice(choices)
    return Trajectory(jt, st, traj.horizon)
