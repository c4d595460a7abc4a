# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pairwise kernel assembly.

Each entry is evaluated with exactly the operation order used by the
numpy fallback in ``_kernels_py`` so both backends agree bit-for-bit.
"""
from libc.math cimport sqrt

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef enum:
    INV_DIST = 0
    MULTIQUADRIC = 1


def assemble(int kind, const double[:, ::1] X, const double[:, ::1] Y, double[:, ::1] out):
    """Fill ``out[i, j] = K(X[i], Y[j])`` and return the closest pair.

    Returns ``(min_sq, i, j)``: the smallest squared distance met and where.
    """
    cdef Py_ssize_t n = X.shape[0], m = Y.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double s, t, best = float("inf")
    cdef Py_ssize_t bi = -1, bj = -1
    if Y.shape[1] != d or out.shape[0] != n or out.shape[1] != m:
        raise ValueError("shape mismatch")
    with nogil:
        for i in range(n):
            for j in range(m):
                t = X[i, 0] - Y[j, 0]
                s = t * t
                for k in range(1, d):
                    t = X[i, k] - Y[j, k]
                    s = s + t * t
                if s < best:
                    best = s
                    bi = i
                    bj = j
                if kind == INV_DIST:
                    out[i, j] = 1.0 / sqrt(s)
                else:
                    out[i, j] = sqrt(1.0 + s)
    return best, bi, bj
