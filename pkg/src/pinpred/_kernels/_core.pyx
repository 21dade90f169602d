# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels.

Same six entry points as ``fallback.py``: forward, input gradient and weight
gradient for the two convolution layouts used in the package (odd-kernel
stride-1 with replicate padding, 2x2 stride-2 without padding). Fused types
give float32 and float64 specializations from one source.

The stride-1 loops split each row into a clamped left border, a contiguous
interior, and a clamped right border so the interior stays vectorizable.
Zero-valued taps are skipped, which matters for the sparse fixed kernels
that realize finite-difference stencils.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def forward_s1(real[:, :, :, ::1] x, real[:, :, :, ::1] w):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    if real is float:
        out_np = np.zeros((n, co, h, wd), dtype=np.float32)
    else:
        out_np = np.zeros((n, co, h, wd), dtype=np.float64)
    cdef real[:, :, :, ::1] out = out_np
    cdef Py_ssize_t b, o, ci, i, j, y, xx, sy, d, xlo, xhi
    cdef real wv
    with nogil:
        for b in range(n):
            for o in range(co):
                for ci in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            wv = w[o, ci, i, j]
                            if wv == 0:
                                continue
                            d = j - pw
                            xlo = -d if d < 0 else 0
                            xhi = wd - d if d > 0 else wd
                            for y in range(h):
                                sy = y + i - ph
                                if sy < 0:
                                    sy = 0
                                elif sy >= h:
                                    sy = h - 1
                                for xx in range(xlo):
                                    out[b, o, y, xx] += wv * x[b, ci, sy, 0]
                                for xx in range(xlo, xhi):
                                    out[b, o, y, xx] += wv * x[b, ci, sy, xx + d]
                                for xx in range(xhi, wd):
                                    out[b, o, y, xx] += wv * x[b, ci, sy, wd - 1]
    return out_np


def forward_s2(real[:, :, :, ::1] x, real[:, :, :, ::1] w):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t co = w.shape[0]
    cdef Py_ssize_t h2 = h // 2, w2 = wd // 2
    if real is float:
        out_np = np.zeros((n, co, h2, w2), dtype=np.float32)
    else:
        out_np = np.zeros((n, co, h2, w2), dtype=np.float64)
    cdef real[:, :, :, ::1] out = out_np
    cdef Py_ssize_t b, o, ci, i, j, y, xx
    cdef real wv
    with nogil:
        for b in range(n):
            for o in range(co):
                for ci in range(c):
                    for i in range(2):
                        for j in range(2):
                            wv = w[o, ci, i, j]
                            for y in range(h2):
                                for xx in range(w2):
                                    out[b, o, y, xx] += wv * x[b, ci, 2 * y + i, 2 * xx + j]
    return out_np


def backward_input_s1(real[:, :, :, ::1] gy, real[:, :, :, ::1] w):
    cdef Py_ssize_t n = gy.shape[0], co = gy.shape[1], h = gy.shape[2], wd = gy.shape[3]
    cdef Py_ssize_t c = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    if real is float:
        gx_np = np.zeros((n, c, h, wd), dtype=np.float32)
    else:
        gx_np = np.zeros((n, c, h, wd), dtype=np.float64)
    cdef real[:, :, :, ::1] gx = gx_np
    cdef Py_ssize_t b, o, ci, i, j, y, xx, sy, d, xlo, xhi
    cdef real wv
    with nogil:
        for b in range(n):
            for o in range(co):
                for ci in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            wv = w[o, ci, i, j]
                            if wv == 0:
                                continue
                            d = j - pw
                            xlo = -d if d < 0 else 0
                            xhi = wd - d if d > 0 else wd
                            for y in range(h):
                                sy = y + i - ph
                                if sy < 0:
                                    sy = 0
                                elif sy >= h:
                                    sy = h - 1
                                for xx in range(xlo):
                                    gx[b, ci, sy, 0] += wv * gy[b, o, y, xx]
                                for xx in range(xlo, xhi):
                                    gx[b, ci, sy, xx + d] += wv * gy[b, o, y, xx]
                                for xx in range(xhi, wd):
                                    gx[b, ci, sy, wd - 1] += wv * gy[b, o, y, xx]
    return gx_np


def backward_input_s2(real[:, :, :, ::1] gy, real[:, :, :, ::1] w):
    cdef Py_ssize_t n = gy.shape[0], co = gy.shape[1], h2 = gy.shape[2], w2 = gy.shape[3]
    cdef Py_ssize_t c = w.shape[1]
    if real is float:
        gx_np = np.zeros((n, c, 2 * h2, 2 * w2), dtype=np.float32)
    else:
        gx_np = np.zeros((n, c, 2 * h2, 2 * w2), dtype=np.float64)
    cdef real[:, :, :, ::1] gx = gx_np
    cdef Py_ssize_t b, o, ci, i, j, y, xx
    cdef real wv
    with nogil:
        for b in range(n):
            for o in range(co):
                for ci in range(c):
                    for i in range(2):
                        for j in range(2):
                            wv = w[o, ci, i, j]
                            for y in range(h2):
                                for xx in range(w2):
                                    gx[b, ci, 2 * y + i, 2 * xx + j] += wv * gy[b, o, y, xx]
    return gx_np


def backward_weight_s1(real[:, :, :, ::1] gy, real[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t n = gy.shape[0], co = gy.shape[1], h = gy.shape[2], wd = gy.shape[3]
    cdef Py_ssize_t c = x.shape[1]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    if real is float:
        gw_np = np.zeros((co, c, kh, kw), dtype=np.float32)
    else:
        gw_np = np.zeros((co, c, kh, kw), dtype=np.float64)
    cdef real[:, :, :, ::1] gw = gw_np
    cdef Py_ssize_t b, o, ci, i, j, y, xx, sy, d, xlo, xhi
    cdef real acc
    with nogil:
        for o in range(co):
            for ci in range(c):
                for i in range(kh):
                    for j in range(kw):
                        d = j - pw
                        xlo = -d if d < 0 else 0
                        xhi = wd - d if d > 0 else wd
                        acc = 0
                        for b in range(n):
                            for y in range(h):
                                sy = y + i - ph
                                if sy < 0:
                                    sy = 0
                                elif sy >= h:
                                    sy = h - 1
                                for xx in range(xlo):
                                    acc += gy[b, o, y, xx] * x[b, ci, sy, 0]
                                for xx in range(xlo, xhi):
                                    acc += gy[b, o, y, xx] * x[b, ci, sy, xx + d]
                                for xx in range(xhi, wd):
                                    acc += gy[b, o, y, xx] * x[b, ci, sy, wd - 1]
                        gw[o, ci, i, j] = acc
    return gw_np


def backward_weight_s2(real[:, :, :, ::1] gy, real[:, :, :, ::1] x):
    cdef Py_ssize_t n = gy.shape[0], co = gy.shape[1], h2 = gy.shape[2], w2 = gy.shape[3]
    cdef Py_ssize_t c = x.shape[1]
    if real is float:
        gw_np = np.zeros((co, c, 2, 2), dtype=np.float32)
    else:
        gw_np = np.zeros((co, c, 2, 2), dtype=np.float64)
    cdef real[:, :, :, ::1] gw = gw_np
    cdef Py_ssize_t b, o, ci, i, j, y, xx
    cdef real acc
    with nogil:
        for o in range(co):
            for ci in range(c):
                for i in range(2):
                    for j in range(2):
                        acc = 0
                        for b in range(n):
                            for y in range(h2):
                                for xx in range(w2):
                                    acc += gy[b, o, y, xx] * x[b, ci, 2 * y + i, 2 * xx + j]
                        gw[o, ci, i, j] = acc
    return gw_np
