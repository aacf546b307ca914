"""Kernel backend selection.

The compiled extension is preferred; set ``NCONV_PURE=1`` to force the numpy
fallback. ``NCONV_THREADS`` caps the OpenMP worker count of the compiled path.
"""

import os

import numpy as np

from . import _pykernels

_pure = os.environ.get("NCONV_PURE", "").lower() in ("1", "true", "yes")

kernels = _pykernels
if not _pure:
    try:
        from . import _ckernels

        kernels = _ckernels
        _ckernels.set_threads(int(os.environ.get("NCONV_THREADS", os.cpu_count() or 1)))
    except ImportError:
        pass

BACKEND = kernels.NAME


def _as_c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def correlate(x, k):
    return kernels.correlate(_as_c(x), _as_c(k))


def weight_grad(x, g, kh, kw):
    return kernels.weight_grad(_as_c(x), _as_c(g), kh, kw)


def input_grad(g, k):
    return kernels.input_grad(_as_c(g), _as_c(k))
