import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctsmc import (
    AdaptiveConfig,
    BoundaryCondition,
    CTSMCModel,
    EmbeddedChain,
    Gamma,
    NumericalInstabilityError,
    ObservationSet,
    adaptive_forward,
    hsmm_forward_backward,
    update_step,
)

CFG = AdaptiveConfig()


@pytest.mark.parametrize("order", [1.0, 2.0])
def test_error_at_tolerance_keeps_step(order):
    cfg = AdaptiveConfig(order=order)
    assert update_step(0.01, cfg.tol, cfg) == 0.01


def test_update_step_clamps():
    assert update_step(0.01, 0.0, CFG) == pytest.approx(0.05)
    assert update_step(0.2, 0.0, CFG) == CFG.h_max
    assert update_step(0.01, 1.0, CFG) == pytest.approx(0.002)
    assert update_step(2e-6, 1.0, CFG) == CFG.h_min
    with pytest.raises(NumericalInstabilityError):
        update_step(0.01, np.nan, CFG)


@settings(max_examples=200, deadline=None)
@given(h=st.floats(1e-6, 0.5), e1=st.floats(0, 1e-2), e2=st.floats(0, 1e-2))
def test_update_step_bounded_and_monotone(h, e1, e2):
    a, b = update_step(h, e1, CFG), update_step(h, e2, CFG)
    assert CFG.h_min <= a <= CFG.h_max
    if e1 <= e2:
        assert a >= b


@pytest.mark.parametrize(
    "kw",
    [dict(tol=0), dict(h_min=0.1, h_max=0.01), dict(s_min=1.5), dict(s_max=0.5),
     dict(h_init=1.0), dict(order=0.5)],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        AdaptiveConfig(**kw)


@pytest.fixture
def stationary_two_state():
    # initial law proportional to the mean holding times makes the process stationary
    return CTSMCModel((Gamma(2.0, 2.0), Gamma(3.0, 1.5)), EmbeddedChain([[0, 1], [1, 0]]),
                      initial=[1 / 3, 2 / 3])


def test_step_grows_monotonically_without_data(stationary_two_state):
    obs = ObservationSet([2.0, 5.0], [[1.0, 0.2], [0.3, 1.0]])
    res = adaptive_forward(stationary_two_state, obs, horizon=10.0,
                           bc=BoundaryCondition.parse("steady/uninformed"))
    t0, w = res.steps.T
    assert w[0] == pytest.approx(1e-4)
    before = t0 + w < 2.0 - 1e-12
    assert np.all(np.diff(w[before]) >= 0)
    assert w[before].max() == CFG.h_max
    np.testing.assert_allclose(res.alpha(np.linspace(0, 1.99, 40)), [[1 / 3, 2 / 3]] * 40, atol=1e-12)


def test_steps_respect_bounds_and_observations(three_state):
    rng = np.random.default_rng(1)
    times = np.sort(rng.uniform(0, 5, 6))
    res = adaptive_forward(three_state, ObservationSet(times, rng.uniform(0.1, 1, (6, 3))), horizon=5.0)
    t0, w = res.steps.T
    ends = t0 + w
    assert np.all(w >= CFG.h_min * (1 - 1e-12)) and np.all(w <= CFG.h_max * (1 + 1e-12))
    for t in times:
        assert np.any(np.isclose(ends, t, rtol=0, atol=1e-12))
        assert not np.any((t0 < t - 1e-12) & (ends > t + 1e-12))
    assert ends[-1] == pytest.approx(5.0)


def test_matches_fine_hsmm(three_state):
    rng = np.random.default_rng(7)
    T, h = 5.0, 1e-4
    times = h * np.rint(np.sort(rng.uniform(0, T - 0.01, 10)) / h)
    obs = ObservationSet(times, rng.uniform(0.05, 1, (10, 3)))
    ada = adaptive_forward(three_state, obs, horizon=T)
    ref = hsmm_forward_backward(three_state, obs, h=h, horizon=T)
    assert np.abs(ada.alpha(ada.times) - ref.filtered(ada.times)).max() < 1e-3
    assert ada.log_evidence == pytest.approx(ref.log_evidence, abs=1e-3)
    assert 5 * ada.n_steps <= T / h
