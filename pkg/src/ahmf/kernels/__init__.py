"""Convolution kernels with a numba fast path and a pure-numpy fallback.

The backend is chosen once at import time from the ``AHMF_KERNELS``
environment variable: ``numba`` (default when importable), ``numpy``, or
``auto``.  Both backends implement the same four entry points and agree to
float rounding; ``benchmarks/bench_conv.py`` compares them head to head.

Thread count for the numba backend follows ``AHMF_THREADS`` (0 or unset =
library default).  All kernels are deterministic regardless of thread
count: every output element is reduced serially in a fixed order by
exactly one task.
"""

import os

from . import numpy_backend

_BACKENDS = {"numpy": numpy_backend}

try:
    from . import numba_backend

    _BACKENDS["numba"] = numba_backend
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name):
    if name in ("auto", "", None):
        name = "numba" if _HAVE_NUMBA else "numpy"
    if name not in _BACKENDS:
        raise ValueError(
            f"unknown kernel backend {name!r}; available: {available_backends()}"
        )
    return _BACKENDS[name]


def set_threads(count):
    """Pin the numba thread pool; 0 leaves the library default."""
    if count and _HAVE_NUMBA:
        import numba

        numba.set_num_threads(min(int(count), numba.config.NUMBA_NUM_THREADS))


_active = get_backend(os.environ.get("AHMF_KERNELS", "auto"))
set_threads(int(os.environ.get("AHMF_THREADS", "0") or 0))


def backend_name():
    return _active.NAME


def conv2d_forward(x, w, b, stride, padding):
    return _active.conv2d_forward(x, w, b, stride, padding)


def conv2d_grad_input(g, w, stride, padding, in_hw):
    return _active.conv2d_grad_input(g, w, stride, padding, in_hw)


def conv2d_grad_weight(g, x, stride, padding, khw):
    return _active.conv2d_grad_weight(g, x, stride, padding, khw)
