# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LBP / rotated-LBP histogram kernel.

Mirrors ``tumormap._fallback.code_histogram`` operation for operation; the
interpolated sample is ``(t_nn + t_ff) + (t_nf + t_fn)`` in both.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs
from libc.stdlib cimport malloc, free

cnp.import_array()

DEF MAXP = 32


def code_histogram(const double[:, ::1] img,
                   const Py_ssize_t[:, ::1] offsets,
                   const double[:, ::1] weights,
                   int border,
                   bint rotated,
                   cnp.int64_t[::1] counts):
    """Accumulate one code per interior pixel into ``counts`` (in place).

    ``offsets[p]`` = (near_dy, far_dy, near_dx, far_dx) and ``weights[p]`` =
    (w_nn, w_ff, w_nf, w_fn) for neighbour p.
    """
    cdef Py_ssize_t height = img.shape[0]
    cdef Py_ssize_t width = img.shape[1]
    cdef int P = offsets.shape[0]
    if P > MAXP:
        raise ValueError("too many neighbours")
    cdef Py_ssize_t lin[MAXP][4]
    cdef double w[MAXP][4]
    cdef int p, d
    for p in range(P):
        lin[p][0] = offsets[p, 0] * width + offsets[p, 2]   # nn
        lin[p][1] = offsets[p, 1] * width + offsets[p, 3]   # ff
        lin[p][2] = offsets[p, 1] * width + offsets[p, 2]   # nf
        lin[p][3] = offsets[p, 0] * width + offsets[p, 3]   # fn
        w[p][0] = weights[p, 0]
        w[p][1] = weights[p, 1]
        w[p][2] = weights[p, 2]
        w[p][3] = weights[p, 3]
    cdef const double *base = &img[0, 0]
    cdef const double *px
    cdef cnp.int64_t *hist = &counts[0]
    cdef Py_ssize_t y, x
    cdef double c, g, diff, best
    cdef unsigned long code
    cdef unsigned long mask = ((<unsigned long> 1) << P) - 1
    cdef bint larger
    with nogil:
        for y in range(border, height - border):
            for x in range(border, width - border):
                px = base + y * width + x
                c = px[0]
                best = -1.0
                d = 0
                code = 0
                for p in range(P):
                    g = ((w[p][0] * px[lin[p][0]] + w[p][1] * px[lin[p][1]])
                         + (w[p][2] * px[lin[p][2]] + w[p][3] * px[lin[p][3]]))
                    code |= (<unsigned long> (g >= c)) << p
                    diff = fabs(g - c)
                    larger = diff > best
                    best = diff if larger else best
                    d = p if larger else d
                if rotated and d:
                    # weight 2^((p - d) mod P) == rotate the plain code right by d
                    code = ((code >> d) | (code << (P - d))) & mask
                hist[code] += 1
