# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for the hot paths of message passing and serialization."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def scatter_add_rows(const double[:, ::1] values, const long long[::1] index, Py_ssize_t n):
    """Sum rows of ``values`` into ``n`` buckets, visiting rows in index order."""
    cdef Py_ssize_t e, k, dst
    cdef Py_ssize_t n_rows = values.shape[0]
    cdef Py_ssize_t width = values.shape[1]
    out_arr = np.zeros((n, width), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for e in range(n_rows):
        dst = index[e]
        if dst < 0 or dst >= n:
            raise IndexError(f"index {dst} out of range for {n} rows")
        for k in range(width):
            out[dst, k] += values[e, k]
    return out_arr


def pairwise_sqdist(const double[:, ::1] a, const double[:, ::1] b):
    """Squared Euclidean distance between every row of ``a`` and every row of ``b``."""
    cdef Py_ssize_t i, j, k
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = b.shape[0]
    cdef Py_ssize_t width = a.shape[1]
    cdef double acc, diff
    if b.shape[1] != width:
        raise ValueError("row widths differ")
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(width):
                diff = a[i, k] - b[j, k]
                acc += diff * diff
            out[i, j] = acc
    return out_arr
