"""Backend selection for the flux kernels.

The compiled extension is used when it imports; otherwise, or when
``DIABOLO_PURE_PYTHON=1`` is set, the NumPy implementation is used.
"""

import os

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKEND = "cython" if (_compiled is not None and os.environ.get("DIABOLO_PURE_PYTHON") != "1") else "python"
_impl = _compiled if BACKEND == "cython" else _kernels_py


def available_backends():
    return ["python"] + (["cython"] if _compiled is not None else [])


def backend_module(name):
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def level_flux(U, periodic):
    return _impl.level_flux(np.ascontiguousarray(U, dtype=complex), bool(periodic))


def subspace_flux(U, periodic, ks):
    return _impl.subspace_flux(np.ascontiguousarray(U, dtype=complex), bool(periodic), list(ks))
