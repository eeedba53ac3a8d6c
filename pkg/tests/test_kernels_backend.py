import os
import subprocess
import sys

import numpy as np
import pytest

from ctsmc import ObservationSet, backward_pass, forward_pass, kernels, smooth

try:
    from ctsmc import _kernels  # noqa: F401

    HAVE_EXT = True
except ImportError:  # pragma: no cover
    HAVE_EXT = False

needs_ext = pytest.mark.skipif(not HAVE_EXT, reason="compiled extension not built")


@pytest.fixture
def restore_backend():
    before = kernels.BACKEND
    yield
    kernels.use_backend(before)


def _run(model):
    rng = np.random.default_rng(11)
    obs = ObservationSet(np.sort(rng.uniform(0, 3, 5)), rng.uniform(0.1, 1, (5, 3)))
    f = forward_pass(model, obs, h=2e-3, horizon=3.0)
    b = backward_pass(model, obs, normalizers=f, h=2e-3, horizon=3.0)
    return f, b, smooth(f, b)


@needs_ext
def test_backends_agree(three_state, restore_backend):
    kernels.use_backend("python")
    fp, bp, sp = _run(three_state)
    kernels.use_backend("cython")
    fc, bc, sc = _run(three_state)
    np.testing.assert_allclose(fc.alpha.values, fp.alpha.values, atol=1e-13)
    np.testing.assert_allclose(bc.beta.values, bp.beta.values, rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(sc.p_hat.values, sp.p_hat.values, atol=1e-13)
    assert fc.log_evidence == pytest.approx(fp.log_evidence, abs=1e-12)


def test_unknown_backend_rejected(restore_backend):
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")


def test_environment_forces_fallback():
    env = dict(os.environ, CTSMC_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "from ctsmc import kernels; print(kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"


@needs_ext
def test_extension_selected_by_default():
    env = {k: v for k, v in os.environ.items() if k != "CTSMC_PURE_PYTHON"}
    out = subprocess.run(
        [sys.executable, "-c", "from ctsmc import kernels; print(kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "cython"
