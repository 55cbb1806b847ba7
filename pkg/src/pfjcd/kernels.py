"""Backend selection for the fused BiGAMP kernels.

The compiled extension is used when it imports; otherwise the numpy
reference is used.  Set ``PFJCD_BACKEND=python`` to force the fallback.
"""

import os

from . import _kernels_py

_BACKENDS = {"python": _kernels_py}

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None
else:
    _BACKENDS["cython"] = _ckernels


def available():
    return sorted(_BACKENDS)


def get(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    if name is None:
        name = BACKEND
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}") from None


_requested = os.environ.get("PFJCD_BACKEND", "").strip().lower()
if _requested:
    BACKEND = _requested
    get(BACKEND)
else:
    BACKEND = "cython" if _ckernels is not None else "python"
