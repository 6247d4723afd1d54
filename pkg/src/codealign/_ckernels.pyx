# cython: language_level=3
"""Compiled distance kernels.

Accumulation order matches ``_pykernels`` term for term (sequential over the
feature axis, no fused multiply-add) so both backends agree bitwise.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def nearest(const double[:, ::1] Z, const double[:, ::1] P):
    cdef Py_ssize_t B = Z.shape[0]
    cdef Py_ssize_t K = P.shape[0]
    cdef Py_ssize_t D = Z.shape[1]
    cdef Py_ssize_t i, k, j, best
    cdef double acc, diff, best_d
    index = np.empty(B, dtype=np.int64)
    dist = np.empty(B, dtype=np.float64)
    cdef cnp.int64_t[::1] index_v = index
    cdef double[::1] dist_v = dist
    with nogil:
        for i in range(B):
            best = 0
            best_d = 0.0
            for k in range(K):
                acc = 0.0
                for j in range(D):
                    diff = Z[i, j] - P[k, j]
                    acc = acc + diff * diff
                # strict < keeps the lowest index on ties
                if k == 0 or acc < best_d:
                    best_d = acc
                    best = k
            index_v[i] = best
            dist_v[i] = best_d
    return index, dist


def pairwise_sqdist(const double[:, ::1] A, const double[:, ::1] B):
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t m = B.shape[0]
    cdef Py_ssize_t D = A.shape[1]
    cdef Py_ssize_t i, k, j
    cdef double acc, diff
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out_v = out
    with nogil:
        for i in range(n):
            for k in range(m):
                acc = 0.0
                for j in range(D):
                    diff = A[i, j] - B[k, j]
                    acc = acc + diff * diff
                out_v[i, k] = acc
    return out
