# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled state recursion for discrete LTI simulation."""

import numpy as np


def state_recursion(const double[:, ::1] A, const double[:, ::1] BU, const double[::1] x0):
    """Return X with X[k] = x[k] where x[k+1] = A x[k] + BU[k], x[0] = x0."""
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t N = BU.shape[0]
    cdef Py_ssize_t k, i, j
    cdef double acc
    X = np.empty((N, n), dtype=np.float64)
    cdef double[:, ::1] Xv = X
    cdef double[::1] x = np.array(x0, dtype=np.float64, copy=True)
    cdef double[::1] xn = np.empty(n, dtype=np.float64)
    with nogil:
        for k in range(N):
            for i in range(n):
                Xv[k, i] = x[i]
            for i in range(n):
                acc = BU[k, i]
                for j in range(n):
                    acc = acc + A[i, j] * x[j]
                xn[i] = acc
            for i in range(n):
                x[i] = xn[i]
    return X
