import os
import subprocess
import sys

import numpy as np
import pytest

from posl import _kernels as K


def _compiled_available():
    try:
        K.backend_module("cython")
        return True
    except ImportError:
        return False


needs_compiled = pytest.mark.skipif(not _compiled_available(), reason="compiled kernels not built")


def _arma_inputs(rng, n=500):
    ar = np.array([[0.4, 0.2, 0.1, 0.05, 0.05], [0.0] * 5])
    ma = np.array([[0.0, 0.0, 0.0], [0.3, -0.2, 0.1]])
    regime = (np.arange(n) >= n // 3).astype(np.int64)
    return rng.standard_normal(n), ar, ma, regime, rng.uniform(-1, 1, n)


@needs_compiled
def test_arma_backends_identical(rng):
    args = _arma_inputs(rng)
    yp, mp = K.arma_filter(*args, backend="python")
    yc, mc = K.arma_filter(*args, backend="cython")
    np.testing.assert_array_equal(yp, yc)
    np.testing.assert_array_equal(mp, mc)


@needs_compiled
def test_mar_backends_identical(rng):
    n = 400
    args = (rng.standard_normal(n), rng.integers(0, 3, n), rng.uniform(-0.3, 0.3, (3, 2)),
            np.array([0.5, 1.0, 2.0]), np.array([0.2, 0.3, 0.5]), np.zeros(n))
    for a, b in zip(K.mar_filter(*args, backend="python"), K.mar_filter(*args, backend="cython")):
        np.testing.assert_array_equal(a, b)


def test_arma_recursion_by_hand():
    eps = np.array([1.0, 0.0, 0.0, 2.0])
    y, psi = K.arma_filter(eps, [[0.5]], [[0.25]], np.zeros(4, np.int64), np.full(4, 10.0),
                           backend="python")
    # dev: 1, 0.5*1 + 0.25*1 = 0.75, 0.375, 0.1875 + 2
    np.testing.assert_allclose(y, [11.0, 10.75, 10.375, 12.1875])
    np.testing.assert_allclose(psi, y - eps)


def test_mar_truth_mixes_components():
    z = np.array([1.0, 1.0])
    y, psi = K.mar_filter(z, np.array([0, 1]), [[0.5], [-0.5]], [1.0, 2.0], [0.25, 0.75],
                          np.zeros(2), backend="python")
    # t=1: component 1 draws 2*z from zero history; mixed mean 0.25*0.5 - 0.75*0.5 = -0.25
    np.testing.assert_allclose(y, [1.0, -0.5 + 2.0])
    np.testing.assert_allclose(psi, [0.0, -0.25])


def test_wrapper_validates_shapes():
    with pytest.raises(ValueError):
        K.arma_filter(np.zeros(3), [[0.1]], [[0.1], [0.2]], np.zeros(3, np.int64), np.zeros(3))
    with pytest.raises(ValueError):
        K.arma_filter(np.zeros(3), [[0.1]], [[0.1]], np.array([0, 1, 0]), np.zeros(3))
    with pytest.raises(ValueError):
        K.mar_filter(np.zeros(2), np.zeros(2, np.int64), [[0.1]], [1.0, 1.0], [1.0], np.zeros(2))


def test_pure_python_switch():
    env = dict(os.environ, POSL_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import posl; print(posl.KERNEL_BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        K.backend_module("fortran")
