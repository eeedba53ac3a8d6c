import numpy as np
import pytest
from scipy import special, stats

from ctsmc import (
    CTSMCModel,
    EmbeddedChain,
    Exponential,
    Gamma,
    Trajectory,
    Weibull,
    load_model,
    sample_trajectory,
    save_model,
    state_at,
    states_at,
    steady_state_ctmc,
    validate_model,
)


def _valid2():
    return CTSMCModel((Exponential(1.0), Exponential(1.0)), EmbeddedChain([[0, 1], [1, 0]]))


def test_validate_accepts_flip_chain():
    assert validate_model(_valid2()) == []


def test_validate_flags_self_transitions():
    m = CTSMCModel((Exponential(1.0),) * 3, EmbeddedChain(np.eye(3)))
    assert any("nonzero diagonal" in p for p in validate_model(m))


def test_validate_flags_row_sum():
    m = CTSMCModel((Exponential(1.0),) * 3, EmbeddedChain([[0, 0.5, 0.4], [0.5, 0, 0.5], [0.5, 0.5, 0]]))
    assert any("row not stochastic" in p for p in validate_model(m))


def test_default_initial_is_uniform(three_state):
    assert np.allclose(three_state.initial, 1 / 3)


def test_model_json_round_trip(tmp_path, three_state):
    path = tmp_path / "m.json"
    save_model(three_state, path)
    assert load_model(path) == three_state


def test_trajectory_determinism(three_state):
    a = sample_trajectory(three_state, 20.0, 7)
    b = sample_trajectory(three_state, 20.0, 7)
    assert np.array_equal(a.jump_times, b.jump_times) and np.array_equal(a.states, b.states)


def test_trajectory_rejects_bad_horizon(three_state):
    with pytest.raises(ValueError):
        sample_trajectory(three_state, 0.0, 1)


def test_trajectory_invariants_checked():
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 1.0]), np.array([1, 1]), 2.0)
    with pytest.raises(ValueError):
        Trajectory(np.array([0.5]), np.array([0]), 2.0)


def test_jump_count_matches_poisson_rate():
    # both states exit at rate 1, so jumps form a unit-rate Poisson process
    model = _valid2()
    rng = np.random.default_rng(0)
    counts = np.array([sample_trajectory(model, 10.0, rng).n_jumps for _ in range(10_000)])
    se = counts.std(ddof=1) / np.sqrt(counts.size)
    assert abs(counts.mean() - 10.0) < 3 * se


def test_symmetric_occupancy_at_late_time():
    model = CTSMCModel((Gamma(2.0, 2.0), Gamma(2.0, 2.0)), EmbeddedChain([[0, 1], [1, 0]]), np.array([1.0, 0.0]))
    rng = np.random.default_rng(1)
    x = np.array([state_at(sample_trajectory(model, 50.0, rng), 50.0) for _ in range(10_000)])
    frac = x.mean()
    assert abs(frac - 0.5) < 3 * np.sqrt(0.25 / x.size)


def test_state_at_right_continuous():
    tr = Trajectory(np.array([0.0, 1.0, 2.5]), np.array([2, 0, 1]), 4.0)
    assert state_at(tr, 0.0) == 2
    assert state_at(tr, 1.0) == 0
    assert state_at(tr, 1.7) == 0
    assert state_at(tr, 4.0) == 1
    assert list(states_at(tr, [0.0, 2.5, 3.0])) == [2, 1, 1]
    with pytest.raises(ValueError):
        state_at(tr, 4.5)


def test_holding_times_pass_ks(three_state):
    rng = np.random.default_rng(3)
    holds = {0: [], 1: [], 2: []}
    while min(len(v) for v in holds.values()) < 10_000:
        tr = sample_trajectory(three_state, 500.0, rng)
        d = np.diff(tr.jump_times)
        for x, tau in zip(tr.states[:-1], d):
            holds[int(x)].append(tau)
    for x, w in enumerate(three_state.waiting):
        sample = np.array(holds[x][:10_000])
        assert stats.kstest(sample, lambda t: w.cdf(t)).pvalue > 0.01


def test_steady_state_ctmc():
    m = CTSMCModel((Exponential(3.0), Gamma(2.0, 2.0), Weibull(2.0, 1.0)),
                   EmbeddedChain([[0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0]]))
    c = steady_state_ctmc(m)
    assert c.waiting[0] == Exponential(3.0)
    assert c.waiting[1].rate == pytest.approx(1.0)
    assert c.waiting[2].rate == pytest.approx(1.0 / special.gamma(1.5))
    assert np.array_equal(c.embedded.m, m.embedded.m)
    assert steady_state_ctmc(c) == c
