"""Closed-form memory kernels and the kernel master equation.

The kernel κ of a holding-time law satisfies κ̂(s) = s f̂(s) / (1 - f̂(s)).
For the exponential law it is a point mass at lag zero; for integer-shape
Gamma laws it is a finite sum of exponentials obtained by partial fractions.
Other families go through the current-based solver instead.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import KernelUnavailableError
from .model import CTSMCModel
from .volterra import GridFunction
from .waiting import Exponential, Gamma, WaitingTime

__all__ = [
    "InstantaneousKernel",
    "ExponentialSumKernel",
    "memory_kernel",
    "solve_master_equation",
]

_UNAVAILABLE = "kernel unavailable; use current-based solver"


@dataclass(frozen=True)
class InstantaneousKernel:
    """κ(τ) = weight · δ(τ)."""

    weight: float

    def laplace(self, s):
        return np.full_like(np.asarray(s, dtype=complex), self.weight)


@dataclass(frozen=True, eq=False)
class ExponentialSumKernel:
    """κ(τ) = Σ_j c_j exp(a_j τ); complex terms come in conjugate pairs."""

    coefficients: np.ndarray
    exponents: np.ndarray

    def __call__(self, tau):
        tau = np.asarray(tau, dtype=float)
        z = np.exp(np.multiply.outer(tau, self.exponents)) @ self.coefficients
        return z.real

    def laplace(self, s):
        s = np.asarray(s, dtype=complex)
        return (self.coefficients / (s[..., None] - self.exponents)).sum(axis=-1)


def memory_kernel(dist: WaitingTime):
    if isinstance(dist, Exponential):
        return InstantaneousKernel(float(dist.rate))
    if isinstance(dist, Gamma):
        k = dist.shape
        if k < 1 or k != int(k):
            raise KernelUnavailableError(_UNAVAILABLE)
        k, r = int(k), float(dist.rate)
        if k == 1:
            return InstantaneousKernel(r)
        # κ̂(s) = r^k / ∏_{j=1}^{k-1} (s - p_j), p_j = r(ω^j - 1), ω = e^{2πi/k}
        p = r * (np.exp(2j * np.pi * np.arange(1, k) / k) - 1.0)
        coef = np.array(
            [r**k / np.prod([p[j] - p[i] for i in range(k - 1) if i != j]) for j in range(k - 1)]
        )
        return ExponentialSumKernel(coef, p)
    raise KernelUnavailableError(_UNAVAILABLE)


def solve_master_equation(
    model: CTSMCModel, times, rtol: float = 1e-11, atol: float = 1e-13
) -> GridFunction:
    """No-observation marginals from dp/dt = (Mᵀ - I) ∫κ(t-τ) p(τ) dτ.

    Valid when every state is freshly entered at t=0, so there is no
    boundary inhomogeneity.  Each exponential term becomes an auxiliary
    state z' = a z + p, which turns the convolution into an ODE system.
    """
    times = np.asarray(times, dtype=float)
    kernels = [memory_kernel(w) for w in model.waiting]
    S = model.n_states
    Mf = model.embedded.forward
    aux = []  # (state, coefficient, exponent) for each auxiliary variable
    for x, ker in enumerate(kernels):
        if isinstance(ker, ExponentialSumKernel):
            aux += [(x, c, a) for c, a in zip(ker.coefficients, ker.exponents)]
    inst = np.array([ker.weight if isinstance(ker, InstantaneousKernel) else 0.0 for ker in kernels])
    ax = np.array([a[0] for a in aux], dtype=int)
    ac = np.array([a[1] for a in aux], dtype=complex)
    ae = np.array([a[2] for a in aux], dtype=complex)

    def rhs(_, y):
        p = y[:S].real
        z = y[S:]
        J = inst * p
        np.add.at(J, ax, (ac * z).real)
        dz = ae * z + p[ax]
        return np.concatenate([(Mf @ J - J).astype(complex), dz])

    y0 = np.concatenate([model.initial.astype(complex), np.zeros(len(aux), dtype=complex)])
    sol = solve_ivp(rhs, (0.0, float(times[-1])), y0, method="DOP853", t_eval=times, rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(f"master equation integration failed: {sol.message}")
    return GridFunction(times, sol.y[:S].real.T, states=model.states)
