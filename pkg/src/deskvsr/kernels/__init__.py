"""Hot-loop kernels with two interchangeable backends.

``DESKVSR_KERNELS=numpy`` forces the pure-numpy path; the default is numba when
it imports cleanly. Both backends expose ``im2col``, ``col2im``, ``warp`` and
``warp_backward`` with identical contracts.
"""
import logging
import os

from . import _numpy

log = logging.getLogger(__name__)

BACKEND = os.environ.get("DESKVSR_KERNELS", "numba").strip().lower()
if BACKEND not in ("numba", "numpy"):
    raise ValueError(f"DESKVSR_KERNELS must be 'numba' or 'numpy', got {BACKEND!r}")

_impl = _numpy
if BACKEND == "numba":
    try:
        from . import _numba as _impl
    except ImportError:  # pragma: no cover - numba is a declared dependency
        log.warning("numba unavailable, falling back to numpy kernels")
        BACKEND = "numpy"

im2col = _impl.im2col
col2im = _impl.col2im
warp = _impl.warp
warp_backward = _impl.warp_backward


def backends():
    """Mapping of every importable backend name to its module."""
    out = {"numpy": _numpy}
    try:
        from . import _numba

        out["numba"] = _numba
    except ImportError:  # pragma: no cover
        pass
    return out
