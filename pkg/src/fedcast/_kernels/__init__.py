"""Hot reduction kernels, compiled when available.

The compiled Cython module is preferred. Setting ``FEDCAST_PURE=1`` in the
environment forces the numpy fallback, which produces identical bits.
"""

import os

from . import _pykernels as py

if os.environ.get("FEDCAST_PURE", "") not in ("", "0"):
    c = None
else:
    try:
        from . import _ckernels as c
    except ImportError:  # extension not built
        c = None

_impl = c if c is not None else py
BACKEND = "cython" if c is not None else "numpy"

l1_norm = _impl.l1_norm
l1_distance = _impl.l1_distance
deviation_norms = _impl.deviation_norms
axpy = _impl.axpy

__all__ = ["BACKEND", "axpy", "c", "deviation_norms", "l1_distance", "l1_norm", "py"]
