# cython: boundscheck=False, wraparound=False, cdivision=True
# Compiled versions of the inverse-update kernels. Same contracts as
# ``_pure``; single-pass loops, no temporaries.

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, isfinite

cnp.import_array()

DEF PIVOT_TOL = 1e-12


def downdate_inverse(double[:, :] sinv, Py_ssize_t pos):
    cdef Py_ssize_t n = sinv.shape[0]
    if pos < 0 or pos >= n:
        raise IndexError("position out of range")
    cdef double e = sinv[pos, pos]
    if not isfinite(e) or fabs(e) < PIVOT_TOL:
        raise ValueError(f"downdate pivot {e!r} at position {pos} is too small")
    out = np.empty((n - 1, n - 1), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double inv_e = 1.0 / e
    cdef double di
    cdef Py_ssize_t i, j, ii, jj
    with nogil:
        ii = 0
        for i in range(n):
            if i == pos:
                continue
            di = sinv[i, pos] * inv_e
            jj = 0
            for j in range(n):
                if j == pos:
                    continue
                o[ii, jj] = sinv[i, j] - di * sinv[j, pos]
                jj += 1
            ii += 1
    return out


def extend_inverse(double[:, :] sinv, double[::1] f, double h):
    cdef Py_ssize_t n = sinv.shape[0]
    if f.shape[0] != n:
        raise ValueError("cross-covariance length does not match inverse size")
    if h <= 0 or not isfinite(h):
        raise ValueError(f"new observation variance must be positive, got {h!r}")
    out = np.empty((n + 1, n + 1), dtype=np.float64)
    g_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double[::1] g = g_arr
    cdef double s = h
    cdef double acc, inv_s
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += sinv[i, j] * f[j]
            g[i] = acc
            s -= f[i] * acc
    if fabs(s / h) < PIVOT_TOL:
        raise ValueError("extended covariance is singular (zero Schur complement)")
    inv_s = 1.0 / s
    with nogil:
        for i in range(n):
            for j in range(n):
                o[i, j] = sinv[i, j] + g[i] * g[j] * inv_s
            o[i, n] = -g[i] * inv_s
            o[n, i] = -g[i] * inv_s
        o[n, n] = inv_s
    return out
