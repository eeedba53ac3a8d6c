import warnings

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from ctsmc import (
    BoundaryCondition,
    CTSMCModel,
    EmbeddedChain,
    EmissionModel,
    Exponential,
    Gamma,
    ObservationSet,
    StateError,
    Trajectory,
    Weibull,
    backward_pass,
    chain_length_posterior,
    forward_pass,
    hsmm_forward_backward,
    rescore_path,
    sample_observations,
    sample_trajectory,
    smooth,
    states_at,
    viterbi_map,
)

from conftest import perturb_path

TS = BoundaryCondition()


def _obs(model, T, seed, std=0.5, lattice=1e-4):
    rng = np.random.default_rng(seed)
    tr = sample_trajectory(model, T, rng)
    levels = np.arange(model.n_states, dtype=float)
    obs = sample_observations(tr, EmissionModel(levels, std), Gamma(4, 8), rng)
    t = np.minimum(lattice * np.rint(obs.times / lattice), T - lattice)
    return tr, ObservationSet(t, obs.likelihoods, obs.values)


def _passes(model, obs, T, h=1e-3):
    f = forward_pass(model, obs, h=h, horizon=T)
    b = backward_pass(model, obs, TS, f, h=h, horizon=T)
    return f, b, smooth(f, b, model)


def test_posterior_equals_prior_without_data(three_state):
    f, b, s = _passes(three_state, ObservationSet.empty(3), 3.0)
    assert np.max(np.abs(s.p_hat.values - f.alpha.values)) < 1e-4


def test_posterior_at_horizon_is_filter(three_state):
    _, obs = _obs(three_state, 4.0, 1)
    f, b, s = _passes(three_state, obs, 4.0)
    assert np.max(np.abs(s.p_hat.values[-1] - f.alpha.values[-1])) < 1e-6
    assert np.allclose(s.p_hat.values.sum(axis=1), 1.0, atol=1e-6)
    assert s.p_hat.values.min() >= -1e-10


def test_smoother_matches_hsmm(three_state):
    _, obs = _obs(three_state, 4.0, 3)
    f, b, s = _passes(three_state, obs, 4.0)
    ref = hsmm_forward_backward(three_state, obs, h=1e-4, horizon=4.0)
    assert np.max(np.abs(s.p_hat.values - ref.smoothed(f.grid.nodes))) < 1e-2


def test_grid_mismatch(three_state):
    obs = ObservationSet.empty(3)
    f = forward_pass(three_state, obs, h=1e-2, horizon=1.0)
    b = backward_pass(three_state, obs, TS, f, h=2e-2, horizon=1.0)
    with pytest.raises(StateError):
        smooth(f, b)


def _exp_score(lam, x0, jumps, T, p0=0.5):
    """Log density of a path in a symmetric 2-state CTMC without data."""
    return np.log(p0) + len(jumps) * np.log(lam) - lam * T


def test_slow_exponential_map_has_no_jump():
    lam = 0.1
    m = CTSMCModel((Exponential(lam), Exponential(lam)), EmbeddedChain([[0, 1], [1, 0]]))
    v = viterbi_map(m, ObservationSet.empty(2), h=1e-2, horizon=1.0)
    n0 = _exp_score(lam, 0, [], 1.0)
    n1 = -minimize_scalar(lambda t: -_exp_score(lam, 0, [t], 1.0), bounds=(0, 1), method="bounded").fun
    assert n0 > n1
    assert v.n_jumps == 0
    assert v.map_log_score == pytest.approx(max(n0, n1), abs=1e-12)


def test_noiseless_map_tracks_truth(three_state):
    tr, obs = _obs(three_state, 5.0, 4, std=1e-6)
    v = viterbi_map(three_state, obs, h=1e-2, horizon=5.0)
    assert np.array_equal(states_at(v.map_path, obs.times), states_at(tr, obs.times))


def test_noiseless_smoother_is_finite_and_certain(three_state):
    tr, obs = _obs(three_state, 5.0, 4, std=1e-6)
    assert (obs.likelihoods == 0).any()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        f, b, s = _passes(three_state, obs, 5.0)
    assert np.isfinite(s.p_hat.values).all()
    at_obs = s.p_hat(obs.times)[np.arange(len(obs)), states_at(tr, obs.times)]
    np.testing.assert_allclose(at_obs, 1.0, atol=1e-9)


def _random_model(rng, S):
    waiting = tuple(Gamma(rng.uniform(1.5, 4), rng.uniform(1, 3)) for _ in range(S))
    m = rng.uniform(size=(S, S))
    np.fill_diagonal(m, 0)
    return CTSMCModel(waiting, EmbeddedChain(m / m.sum(axis=1, keepdims=True)))


def test_rescore_matches_map_score(three_state):
    _, obs = _obs(three_state, 5.0, 5)
    v = viterbi_map(three_state, obs, h=1e-2, horizon=5.0)
    assert rescore_path(three_state, v.map_path, v.scaled_likelihood) == pytest.approx(v.map_log_score, abs=1e-8)
    assert v.grid_log_score == pytest.approx(v.map_log_score, abs=1e-8)


def test_map_beats_perturbed_candidates():
    rng = np.random.default_rng(11)
    model = _random_model(rng, 4)
    _, obs = _obs(model, 4.0, 12)
    v = viterbi_map(model, obs, h=1e-2, horizon=4.0, refine=True)
    scores = []
    while len(scores) < 1000:
        cand = perturb_path(v.map_path, rng, 4, 1e-2)
        if cand is not None:
            scores.append(rescore_path(model, cand, v.scaled_likelihood))
    assert v.map_log_score >= max(scores)


def test_singular_density_warns():
    m = CTSMCModel((Weibull(0.5, 1.0), Exponential(1.0)), EmbeddedChain([[0, 1], [1, 0]]))
    with pytest.warns(RuntimeWarning, match="unbounded"):
        viterbi_map(m, ObservationSet.empty(2), h=5e-2, horizon=1.0)


def test_chain_length_sums_and_evidence(three_state):
    _, obs = _obs(three_state, 4.0, 6)
    cl = chain_length_posterior(three_state, obs, h=1e-2, horizon=4.0)
    assert cl.probabilities.min() >= 0
    assert abs(cl.probabilities.sum() + cl.residual - 1.0) < 1e-6
    assert cl.residual <= 1e-6
    assert cl.unnormalized.sum() == pytest.approx(cl.evidence_mass, rel=1e-6)


@pytest.mark.parametrize("T,mode", [(1.5, 1), (2.5, 2), (3.5, 3)])
def test_clock_model_mode(T, mode):
    m = CTSMCModel((Gamma(50, 50), Gamma(50, 50)), EmbeddedChain([[0, 1], [1, 0]]))
    cl = chain_length_posterior(m, ObservationSet.empty(2), h=1e-2, horizon=T)
    assert cl.mode == mode


def test_chain_length_matches_simulation():
    lam, T = 1.3, 2.0
    m = CTSMCModel((Exponential(lam), Exponential(lam)), EmbeddedChain([[0, 1], [1, 0]]))
    cl = chain_length_posterior(m, ObservationSet.empty(2), h=1e-3, horizon=T)
    rng = np.random.default_rng(0)
    # jump counts of a rate-λ renewal chain, sampled directly
    counts = np.array([sample_trajectory(m, T, rng).n_jumps for _ in range(100_000)])
    for n in range(5):
        emp = np.mean(counts == n)
        se = np.sqrt(emp * (1 - emp) / counts.size)
        assert abs(cl.probabilities[n] - emp) < 3 * se + 1e-4


def test_layer_currents_vanish(three_state):
    cl = chain_length_posterior(three_state, ObservationSet.empty(3), h=1e-2, horizon=3.0)
    tail = cl.phi_max[int(np.argmax(cl.phi_max)):]
    assert np.all(np.diff(tail) <= 0)
    assert tail[-1] < 1e-6 * tail[0]


def test_csv_outputs(tmp_path, three_state):
    _, obs = _obs(three_state, 2.0, 7)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        v = viterbi_map(three_state, obs, h=2e-2, horizon=2.0)
    v.to_csv(tmp_path / "map.csv")
    rows = (tmp_path / "map.csv").read_text().splitlines()
    assert rows[0] == "jump_time,state" and len(rows) == v.n_jumps + 2
