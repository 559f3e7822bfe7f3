"""Generator kernels with a compiled backend and a pure-Python fallback.

The compiled module is used when it imports; set ``POSL_PURE_PYTHON=1`` to
force the fallback.  ``BACKEND`` names the active one.
"""

import os

import numpy as np

from . import _pykernels

__all__ = ["BACKEND", "arma_filter", "mar_filter", "backend_module"]

_compiled = None
if os.environ.get("POSL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"


def backend_module(name=None):
    """Kernel module by name (``"cython"`` or ``"python"``); active one by default."""
    name = name or BACKEND
    if name == "python":
        return _pykernels
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def _prep(a, dtype, ndim):
    a = np.ascontiguousarray(a, dtype=dtype)
    if a.ndim != ndim:
        raise ValueError(f"expected {ndim}-d array, got shape {a.shape}")
    return a


def arma_filter(eps, ar, ma, regime, level, backend=None):
    """See :func:`posl._kernels._pykernels.arma_filter`."""
    eps = _prep(eps, float, 1)
    ar = _prep(np.atleast_2d(ar), float, 2)
    ma = _prep(np.atleast_2d(ma), float, 2)
    if ar.shape[0] != ma.shape[0]:
        raise ValueError("ar and ma need one row per regime")
    regime = _prep(regime, np.int64, 1)
    level = _prep(level, float, 1)
    if not len(regime) == len(level) == len(eps):
        raise ValueError("eps, regime and level lengths differ")
    if len(regime) and (regime.min() < 0 or regime.max() >= ar.shape[0]):
        raise ValueError("regime index out of range")
    return backend_module(backend).arma_filter(eps, ar, ma, regime, level)


def mar_filter(z, comp, ar, sd, probs, level, backend=None):
    """See :func:`posl._kernels._pykernels.mar_filter`."""
    z = _prep(z, float, 1)
    comp = _prep(comp, np.int64, 1)
    ar = _prep(np.atleast_2d(ar), float, 2)
    sd = _prep(sd, float, 1)
    probs = _prep(probs, float, 1)
    level = _prep(level, float, 1)
    K = ar.shape[0]
    if len(sd) != K or len(probs) != K:
        raise ValueError("sd and probs need one entry per component")
    if not len(comp) == len(level) == len(z):
        raise ValueError("z, comp and level lengths differ")
    if len(comp) and (comp.min() < 0 or comp.max() >= K):
        raise ValueError("component index out of range")
    return backend_module(backend).mar_filter(z, comp, ar, sd, probs, level)
