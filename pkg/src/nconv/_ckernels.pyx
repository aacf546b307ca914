# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sliding-window kernels (same contract as ``_pykernels``).

Work is split across OpenMP threads by output row (or by weight row for the
weight gradient). Every output element is accumulated in a fixed order, so
results do not depend on the thread count. Inner loops run over contiguous
columns so the compiler can vectorize them.
"""

import numpy as np
cimport cython
from cython.parallel cimport prange
from libc.stdlib cimport malloc, free

NAME = "cython"

cdef int _threads = 1


def set_threads(int n):
    global _threads
    _threads = max(1, n)


cdef inline void _axpy(double* dst, const double* src, double a, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t j
    for j in range(n):
        dst[j] += a * src[j]


def correlate(const double[:, :, ::1] x, const double[:, :, :, ::1] k):
    cdef Py_ssize_t I = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t O = k.shape[0], kh = k.shape[2], kw = k.shape[3]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    out_arr = np.zeros((O, H, W), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t row, o, y, i, m, n, yy, x0, x1
    for row in prange(O * H, nogil=True, num_threads=_threads, schedule="static"):
        o = row // H
        y = row % H
        for i in range(I):
            for m in range(kh):
                yy = y + m - ph
                if yy < 0 or yy >= H:
                    continue
                for n in range(kw):
                    # output columns whose tap n lands inside the input row
                    x0 = pw - n if n < pw else 0
                    x1 = W + pw - n if n > pw else W
                    if x1 > x0:
                        _axpy(&out[o, y, x0], &x[i, yy, x0 + n - pw], k[o, i, m, n], x1 - x0)
    return out_arr


def weight_grad(const double[:, :, ::1] x, const double[:, :, ::1] g, Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t I = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t O = g.shape[0]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    out_arr = np.zeros((O, I, kh, kw), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t job, o, i, m, n, y, j, y0, y1, x0, x1
    cdef double acc
    cdef double* cols
    for job in prange(O * I * kh, nogil=True, num_threads=_threads, schedule="static"):
        o = job // (I * kh)
        i = (job // kh) % I
        m = job % kh
        y0 = ph - m if m < ph else 0
        y1 = H + ph - m if m > ph else H
        cols = <double*> malloc(W * sizeof(double))
        for n in range(kw):
            x0 = pw - n if n < pw else 0
            x1 = W + pw - n if n > pw else W
            for j in range(W):
                cols[j] = 0.0
            # per-column partial sums over rows, then a fixed-order column sum
            if x1 > x0:
                for y in range(y0, y1):
                    _mul_acc(&cols[x0], &g[o, y, x0], &x[i, y + m - ph, x0 + n - pw], x1 - x0)
            acc = 0.0
            for j in range(x0, x1):
                acc = acc + cols[j]
            out[o, i, m, n] = acc
        free(cols)
    return out_arr


cdef inline void _mul_acc(double* dst, const double* a, const double* b, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t j
    for j in range(n):
        dst[j] += a[j] * b[j]


def input_grad(const double[:, :, ::1] g, const double[:, :, :, ::1] k):
    cdef Py_ssize_t O = g.shape[0], H = g.shape[1], W = g.shape[2]
    cdef Py_ssize_t I = k.shape[1], kh = k.shape[2], kw = k.shape[3]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    out_arr = np.zeros((I, H, W), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t row, i, y, o, m, n, yy, x0, x1
    for row in prange(I * H, nogil=True, num_threads=_threads, schedule="static"):
        i = row // H
        y = row % H
        for o in range(O):
            for m in range(kh):
                yy = y - m + ph
                if yy < 0 or yy >= H:
                    continue
                for n in range(kw):
                    # out[xx] += g[xx - n + pw] * k, the adjoint shift
                    x0 = n - pw if n > pw else 0
                    x1 = W - pw + n if n < pw else W
                    if x1 > x0:
                        _axpy(&out[i, y, x0], &g[o, yy, x0 - n + pw], k[o, i, m, n], x1 - x0)
    return out_arr
