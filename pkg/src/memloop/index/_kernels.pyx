# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled scoring kernels for the vector index.

Rows of ``mat`` are unit-norm float64 vectors, so plain dot products are
cosine similarities. These two loops dominate index build and search time.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def all_scores(double[:, ::1] mat, double[::1] query):
    cdef Py_ssize_t n = mat.shape[0]
    cdef Py_ssize_t d = mat.shape[1]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc += mat[i, j] * query[j]
        ov[i] = acc
    return out


def scores_for_rows(double[:, ::1] mat, long[::1] rows, double[::1] query):
    cdef Py_ssize_t n = rows.shape[0]
    cdef Py_ssize_t d = mat.shape[1]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i, j, r
    cdef double acc
    for i in range(n):
        r = rows[i]
        acc = 0.0
        for j in range(d):
            acc += mat[r, j] * query[j]
        ov[i] = acc
    return out
