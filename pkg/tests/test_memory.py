import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctsmc import (
    CTSMCModel,
    EmbeddedChain,
    Exponential,
    ExponentialSumKernel,
    Gamma,
    InstantaneousKernel,
    KernelUnavailableError,
    ObservationSet,
    Weibull,
    forward_pass,
    memory_kernel,
    solve_master_equation,
)


def test_exponential_is_instantaneous():
    k = memory_kernel(Exponential(3.0))
    assert isinstance(k, InstantaneousKernel) and k.weight == 3.0
    np.testing.assert_allclose(k.laplace([0.5, 2.0]), 3.0)


@pytest.mark.parametrize("r", [0.3, 1.0, 4.5])
def test_unit_shape_gamma_is_instantaneous(r):
    k = memory_kernel(Gamma(1.0, r))
    assert isinstance(k, InstantaneousKernel) and k.weight == pytest.approx(r)


def test_shape_two_closed_form():
    # f̂/Λ̂ = 1/(s+2) for Gamma(2, 1), so κ(τ) = exp(-2τ)
    k = memory_kernel(Gamma(2.0, 1.0))
    tau = np.linspace(0, 5, 11)
    np.testing.assert_allclose(k(tau), np.exp(-2 * tau), rtol=1e-12, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(shape=st.integers(2, 7), rate=st.floats(0.2, 5.0), s=st.floats(0.05, 20.0))
def test_laplace_ratio(shape, rate, s):
    k = memory_kernel(Gamma(float(shape), rate))
    assert isinstance(k, ExponentialSumKernel)
    fhat = (rate / (s + rate)) ** shape
    expected = s * fhat / (1 - fhat)
    val = k.laplace(s)
    assert val.real == pytest.approx(expected, rel=1e-8, abs=1e-13)
    assert abs(val.imag) < 1e-8 * expected + 1e-13
    # conjugate pairs cancel on the real axis
    tau = np.linspace(0, 3, 7)
    z = np.exp(np.multiply.outer(tau, k.exponents)) @ k.coefficients
    assert np.abs(z.imag).max() < 1e-10 * max(1.0, np.abs(z.real).max())


@pytest.mark.parametrize("dist", [Weibull(1.5, 1.0), Gamma(2.5, 1.0), Gamma(0.5, 2.0)])
def test_unsupported_inputs(dist):
    with pytest.raises(KernelUnavailableError, match="kernel unavailable; use current-based solver"):
        memory_kernel(dist)
    assert issubclass(KernelUnavailableError, NotImplementedError)


@pytest.mark.parametrize("second", [Exponential(0.7), Gamma(3.0, 2.0)])
def test_master_equation_matches_current_solver(second):
    model = CTSMCModel((Gamma(2.0, 1.0), second), EmbeddedChain([[0, 1], [1, 0]]), initial=[0.8, 0.2])
    T = 6.0
    fwd = forward_pass(model, ObservationSet.empty(2), h=1e-3, horizon=T)
    t = fwd.grid.nodes
    p = solve_master_equation(model, t)
    assert np.abs(p.values - fwd.alpha.values).max() < 1e-6
    np.testing.assert_allclose(p.values.sum(axis=1), 1.0, atol=1e-9)
