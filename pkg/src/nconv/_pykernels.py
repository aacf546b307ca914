"""Numpy implementations of the sliding-window kernels.

These are the fallback used when the compiled ``_ckernels`` extension is not
available. All three routines use zero padding and "same" output size; kernel
extents must be odd.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "numpy"


def _windows(x, kh, kw):
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    return sliding_window_view(xp, (kh, kw), axis=(1, 2))


def correlate(x, k):
    """out[o, y, x] = sum_{i,m,n} x_pad[i, y+m, x+n] * k[o, i, m, n]."""
    win = _windows(x, k.shape[2], k.shape[3])
    return np.ascontiguousarray(np.tensordot(k, win, axes=([1, 2, 3], [0, 3, 4])))


def weight_grad(x, g, kh, kw):
    """gk[o, i, m, n] = sum_{y,x} g[o, y, x] * x_pad[i, y+m, x+n]."""
    win = _windows(x, kh, kw)
    return np.ascontiguousarray(np.tensordot(g, win, axes=([1, 2], [1, 2])))


def input_grad(g, k):
    """Adjoint of :func:`correlate` with respect to ``x``."""
    kt = np.ascontiguousarray(k[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return correlate(g, kt)
