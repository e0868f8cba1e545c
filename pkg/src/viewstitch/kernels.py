"""Backend selection for the hot loops.

The Cython extension ``_ckernels`` is used when it was built; otherwise the numpy
versions in ``_pykernels`` are used. Set ``VIEWSTITCH_PURE_PYTHON=1`` to force the
fallback.
"""

import importlib
import os

from . import _pykernels

_BACKENDS = {"python": _pykernels}

try:
    _BACKENDS["cython"] = importlib.import_module("viewstitch._ckernels")
except ImportError:
    pass

if "cython" in _BACKENDS and not os.environ.get("VIEWSTITCH_PURE_PYTHON"):
    BACKEND = "cython"
else:
    BACKEND = "python"

_impl = _BACKENDS[BACKEND]
nearest_sqdist = _impl.nearest_sqdist
greedy_scan = _impl.greedy_scan


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name):
    """Return the kernel module for ``name`` ("cython" or "python")."""
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available") from None
