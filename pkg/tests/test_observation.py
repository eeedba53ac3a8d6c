import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ctsmc import (
    EmissionModel,
    Gamma,
    ObservationSet,
    ScaledLikelihood,
    StateError,
    read_observations_csv,
    sample_observations,
    sample_trajectory,
    states_at,
    upsilon,
    write_observations_csv,
)


def test_vanishing_noise_recovers_states(three_state):
    tr = sample_trajectory(three_state, 20.0, 5)
    em = EmissionModel([0.0, 1.0, 2.0], 1e-9)
    obs = sample_observations(tr, em, Gamma(4, 8), 6)
    assert len(obs) > 10
    assert np.array_equal(obs.likelihoods.argmax(axis=1), states_at(tr, obs.times))


def test_observation_determinism(three_state):
    tr = sample_trajectory(three_state, 10.0, 5)
    em = EmissionModel([0.0, 1.0, 2.0], 0.3)
    a = sample_observations(tr, em, Gamma(4, 8), 9)
    b = sample_observations(tr, em, Gamma(4, 8), 9)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.values, b.values)


def test_renewal_count_mean(three_state):
    tr = sample_trajectory(three_state, 10.0, 0)
    em = EmissionModel([0.0, 1.0, 2.0], 0.3)
    n = np.array([len(sample_observations(tr, em, Gamma(4, 8), s)) for s in range(1000)])
    # exact renewal function: E N(T) = sum_n P(S_n <= T) with S_n ~ Gamma(4n, 8)
    exact = sum(stats.gamma.cdf(10.0, 4 * k, scale=1 / 8) for k in range(1, 200))
    assert abs(exact - 20.0) < 0.5  # long-run rate T / E[gap] = 20
    se = n.std(ddof=1) / np.sqrt(n.size)
    assert abs(n.mean() - exact) < 3 * se


def test_observation_validation():
    with pytest.raises(ValueError):
        ObservationSet([1.0, 0.5], np.ones((2, 2)))
    with pytest.raises(ValueError):
        ObservationSet([1.0], np.zeros((1, 2)))
    with pytest.raises(ValueError):
        ObservationSet([1.0], -np.ones((1, 2)))


def test_merge_duplicates():
    obs = ObservationSet([0.5, 0.5, 1.0], [[1.0, 2.0], [3.0, 0.5], [1.0, 1.0]]).merged()
    assert list(obs.times) == [0.5, 1.0]
    assert np.allclose(obs.likelihoods[0], [3.0, 1.0])


def _sl():
    obs = ObservationSet([0.2, 0.7, 1.5], [[1.0, 0.5], [0.2, 0.9], [0.4, 0.4]])
    return ScaledLikelihood(obs, np.array([0.8, 0.6, 0.4]))


def test_upsilon_empty_and_single():
    sl = _sl()
    assert upsilon(sl, 0, 0.3, 0.6) == 1.0
    assert upsilon(sl, 1, 0.6, 0.8) == pytest.approx(0.9 / 0.6)
    # half-open: the observation at 0.7 belongs to [0.7, b)
    assert upsilon(sl, 1, 0.3, 0.7) == 1.0
    assert upsilon(sl, 1, 0.7, 0.71) == pytest.approx(1.5)


def test_upsilon_requires_normalizers():
    sl = ScaledLikelihood(ObservationSet([0.2], [[1.0, 0.5]]))
    with pytest.raises(StateError):
        upsilon(sl, 0, 0.0, 1.0)


def test_upsilon_all_ones():
    obs = ObservationSet([0.1, 0.2], np.ones((2, 3)))
    sl = ScaledLikelihood(obs, np.ones(2))
    assert all(upsilon(sl, x, 0.0, 1.0) == 1.0 for x in range(3))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 2.0), min_size=3, max_size=3), st.integers(0, 1))
def test_upsilon_multiplicative(pts, x):
    a, b, c = sorted(pts)
    sl = _sl()
    direct = np.prod([L[x] / ck for t, L, ck in zip(sl.obs.times, sl.obs.likelihoods, sl.normalizers) if a <= t < c])
    assert upsilon(sl, x, a, c) == pytest.approx(direct, rel=1e-14)
    assert upsilon(sl, x, a, c) == pytest.approx(upsilon(sl, x, a, b) * upsilon(sl, x, b, c), rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.21, 0.69), st.floats(0.21, 0.69), st.floats(0.71, 1.49))
def test_upsilon_piecewise_constant(a1, a2, b):
    sl = _sl()
    assert upsilon(sl, 0, a1, b) == upsilon(sl, 0, a2, b)
    assert upsilon(sl, 1, 0.0, a1) == upsilon(sl, 1, 0.0, a2)


def test_csv_round_trip(tmp_path):
    em = EmissionModel([0.0, 1.0], 0.5)
    obs = ObservationSet.from_values([0.1, 0.4], [0.2, 0.9], em)
    write_observations_csv(obs, tmp_path / "o.csv")
    back = read_observations_csv(tmp_path / "o.csv", em)
    assert np.allclose(back.likelihoods, obs.likelihoods)
    raw = ObservationSet([0.1], [[0.3, 0.7]])
    write_observations_csv(raw, tmp_path / "l.csv")
    assert np.allclose(read_observations_csv(tmp_path / "l.csv", n_states=2).likelihoods, [[0.3, 0.7]])
    with pytest.raises(ValueError):
        read_observations_csv(tmp_path / "o.csv")
