# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Cython implementation of the blocking-coalition scan.

Mirrors :mod:`coalform._pykernels` exactly; see that module for semantics.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def scan_blocking(const cnp.int64_t[:, ::1] members,
                  const cnp.int64_t[::1] sizes,
                  const double[:, :, ::1] util,
                  const double[:, ::1] cur,
                  double eps):
    cdef Py_ssize_t n_struct = cur.shape[0]
    cdef Py_ssize_t n_coal = members.shape[0]
    cdef Py_ssize_t n_mech = util.shape[0]
    cdef Py_ssize_t s, c, m, j
    cdef cnp.int64_t i
    cdef bint blocks
    out_arr = np.full(n_struct, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    with nogil:
        for s in range(n_struct):
            for c in range(n_coal):
                for m in range(n_mech):
                    blocks = True
                    for j in range(sizes[c]):
                        i = members[c, j]
                        if not (util[m, c, i] > cur[s, i] + eps):
                            blocks = False
                            break
                    if blocks:
                        out[s] = c
                        break
                if out[s] >= 0:
                    break
    return out_arr


def first_blocking(const cnp.int64_t[:, ::1] members,
                   const cnp.int64_t[::1] sizes,
                   const double[:, :, ::1] util,
                   const double[::1] cur,
                   double eps):
    cdef Py_ssize_t n_coal = members.shape[0]
    cdef Py_ssize_t n_mech = util.shape[0]
    cdef Py_ssize_t c, m, j
    cdef cnp.int64_t i
    cdef bint blocks
    for c in range(n_coal):
        for m in range(n_mech):
            blocks = True
            for j in range(sizes[c]):
                i = members[c, j]
                if not (util[m, c, i] > cur[i] + eps):
                    blocks = False
                    break
            if blocks:
                return c
    return -1
