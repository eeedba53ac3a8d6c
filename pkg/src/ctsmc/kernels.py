"""Kernel selection: compiled extension when available, numpy otherwise.

Set ``CTSMC_PURE_PYTHON=1`` to force the fallback.
"""
import os
from dataclasses import dataclass

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if not os.environ.get("CTSMC_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _pykernels

forward_interval = _impl.forward_interval
backward_interval = _impl.backward_interval
pair_sums = _impl.pair_sums
packed_eval = _impl.packed_eval


def use_backend(name):
    """Switch backends at runtime (used by tests and benchmarks)."""
    global forward_interval, backward_interval, pair_sums, packed_eval, BACKEND
    if name == "cython":
        from . import _kernels as impl
    elif name == "python":
        impl = _pykernels
    else:
        raise ValueError(name)
    forward_interval = impl.forward_interval
    backward_interval = impl.backward_interval
    pair_sums = impl.pair_sums
    packed_eval = impl.packed_eval
    BACKEND = name


@dataclass
class PackedTables:
    """Per-state lookup tables stacked into padded 2-D arrays."""

    params: np.ndarray
    log_vals: np.ndarray
    log_ders: np.ndarray
    uni_vals: np.ndarray
    uni_ders: np.ndarray
    n_log: np.ndarray
    n_uni: np.ndarray

    @classmethod
    def stack(cls, tables):
        S = len(tables)
        nl = max(tb.log_vals.size for tb in tables)
        nu = max(tb.uni_vals.size for tb in tables)
        out = cls(
            np.zeros((S, 6)), np.zeros((S, nl)), np.zeros((S, nl)),
            np.zeros((S, nu)), np.zeros((S, nu)),
            np.zeros(S, dtype=np.intp), np.zeros(S, dtype=np.intp),
        )
        for x, tb in enumerate(tables):
            out.params[x] = tb.params()
            out.log_vals[x, : tb.log_vals.size] = tb.log_vals
            out.log_ders[x, : tb.log_ders.size] = tb.log_ders
            out.uni_vals[x, : tb.uni_vals.size] = tb.uni_vals
            out.uni_ders[x, : tb.uni_ders.size] = tb.uni_ders
            out.n_log[x] = tb.log_vals.size
            out.n_uni[x] = tb.uni_vals.size
        return out

    def __call__(self, x, s):
        return packed_eval(self, x, np.asarray(s, dtype=float))
