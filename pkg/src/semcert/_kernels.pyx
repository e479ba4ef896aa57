# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for distance scans, centroid assignment and ADC.

Every routine accumulates squared differences sequentially in float64 and
breaks argmin ties toward the lowest index, matching ``_kernels_py``.
"""

import numpy as np


def sq_dists(const double[:, ::1] X, const double[::1] q):
    """Squared Euclidean distance from ``q`` to every row of ``X``."""
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t d = X.shape[1]
    cdef Py_ssize_t i, j
    cdef double s, t
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            s = 0.0
            for j in range(d):
                t = X[i, j] - q[j]
                s = s + t * t
            o[i] = s
    return out


def assign(const double[:, ::1] X, const double[:, ::1] C):
    """Nearest row of ``C`` for each row of ``X``; returns (labels, sq_dists)."""
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t k = C.shape[0]
    cdef Py_ssize_t d = X.shape[1]
    cdef Py_ssize_t i, c, j, best
    cdef double s, t, best_d
    labels = np.empty(n, dtype=np.int64)
    dists = np.empty(n, dtype=np.float64)
    cdef long long[::1] lab = labels
    cdef double[::1] dst = dists
    with nogil:
        for i in range(n):
            best = 0
            best_d = 0.0
            for c in range(k):
                s = 0.0
                for j in range(d):
                    t = X[i, j] - C[c, j]
                    s = s + t * t
                if c == 0 or s < best_d:
                    best = c
                    best_d = s
            lab[i] = best
            dst[i] = best_d
    return labels, dists


def adc_table(const double[::1] q, const double[:, :, ::1] centroids):
    """Per-subspace squared distances from ``q`` to every centroid, shape (m, k)."""
    cdef Py_ssize_t m = centroids.shape[0]
    cdef Py_ssize_t k = centroids.shape[1]
    cdef Py_ssize_t s_dim = centroids.shape[2]
    cdef Py_ssize_t sub, c, j
    cdef double s, t
    table = np.empty((m, k), dtype=np.float64)
    cdef double[:, ::1] tb = table
    with nogil:
        for sub in range(m):
            for c in range(k):
                s = 0.0
                for j in range(s_dim):
                    t = q[sub * s_dim + j] - centroids[sub, c, j]
                    s = s + t * t
                tb[sub, c] = s
    return table


def adc_scan(const int[:, ::1] codes, const double[:, ::1] table):
    """Sum of table lookups over subspaces for every coded row."""
    cdef Py_ssize_t n = codes.shape[0]
    cdef Py_ssize_t m = codes.shape[1]
    cdef Py_ssize_t i, sub
    cdef double s
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            s = 0.0
            for sub in range(m):
                s = s + table[sub, codes[i, sub]]
            o[i] = s
    return out
