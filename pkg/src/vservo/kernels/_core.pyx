# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled patch gather/scatter (fast backend).

Must stay numerically identical to ``_pure``: the scatter accumulates in the
same canonical (row, element) order, so per-target summation order matches
``np.bincount`` exactly.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def extract_patches(cnp.ndarray x_arr, int kernel, int stride, int pad):
    cdef double[:, :, :, ::1] x = np.ascontiguousarray(x_arr, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kernel) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kernel) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ValueError("patch geometry yields empty output")
    out_arr = np.empty((n * oh * ow, kernel * kernel * c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t ni, oy, ox, ky, kx, ci, row, col, yy, xx
    with nogil:
        for ni in range(n):
            for oy in range(oh):
                for ox in range(ow):
                    row = (ni * oh + oy) * ow + ox
                    for ky in range(kernel):
                        yy = oy * stride + ky - pad
                        for kx in range(kernel):
                            xx = ox * stride + kx - pad
                            col = (ky * kernel + kx) * c
                            if 0 <= yy < h and 0 <= xx < w:
                                for ci in range(c):
                                    out[row, col + ci] = x[ni, yy, xx, ci]
                            else:
                                for ci in range(c):
                                    out[row, col + ci] = 0.0
    return out_arr


def scatter_patches(cnp.ndarray g_arr, Py_ssize_t n, Py_ssize_t h, Py_ssize_t w,
                    Py_ssize_t c, int kernel, int stride, int pad):
    cdef double[:, ::1] g = np.ascontiguousarray(g_arr, dtype=np.float64)
    cdef Py_ssize_t oh = (h + 2 * pad - kernel) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kernel) // stride + 1
    out_arr = np.zeros((n, h, w, c), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t ni, oy, ox, ky, kx, ci, row, col, yy, xx
    with nogil:
        for ni in range(n):
            for oy in range(oh):
                for ox in range(ow):
                    row = (ni * oh + oy) * ow + ox
                    for ky in range(kernel):
                        yy = oy * stride + ky - pad
                        for kx in range(kernel):
                            xx = ox * stride + kx - pad
                            col = (ky * kernel + kx) * c
                            if 0 <= yy < h and 0 <= xx < w:
                                for ci in range(c):
                                    out[ni, yy, xx, ci] += g[row, col + ci]
    return out_arr
