# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the channels-last kernels in ``_pykernels``.

Loop orders are chosen so every floating point sum is accumulated in the
same order as the numpy version; outputs match bit for bit.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(x, int kh, int kw, int stride, int pad):
    cdef const double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], h = xv.shape[1], w = xv.shape[2], c = xv.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    out = np.empty((n * oh * ow, kh * kw * c), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t b, oy, ox, ky, kx, row, col, iy, ix, ch
    with nogil:
        row = 0
        for b in range(n):
            for oy in range(oh):
                for ox in range(ow):
                    col = 0
                    for ky in range(kh):
                        iy = oy * stride + ky - pad
                        for kx in range(kw):
                            ix = ox * stride + kx - pad
                            if 0 <= iy < h and 0 <= ix < w:
                                for ch in range(c):
                                    ov[row, col + ch] = xv[b, iy, ix, ch]
                            else:
                                for ch in range(c):
                                    ov[row, col + ch] = 0.0
                            col += c
                    row += 1
    return out


def col2im(cols, shape, int kh, int kw, int stride, int pad):
    cdef const double[:, ::1] cv = np.ascontiguousarray(cols, dtype=np.float64)
    cdef Py_ssize_t n = shape[0], h = shape[1], w = shape[2], c = shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, h, w, c), dtype=np.float64)
    cdef double[:, :, :, ::1] ov = out
    cdef Py_ssize_t b, oy, ox, ky, kx, ch, col, iy, ix, row
    with nogil:
        for ky in range(kh):
            for kx in range(kw):
                col = (ky * kw + kx) * c
                for b in range(n):
                    for oy in range(oh):
                        iy = oy * stride + ky - pad
                        if iy < 0 or iy >= h:
                            continue
                        for ox in range(ow):
                            ix = ox * stride + kx - pad
                            if ix < 0 or ix >= w:
                                continue
                            row = (b * oh + oy) * ow + ox
                            for ch in range(c):
                                ov[b, iy, ix, ch] += cv[row, col + ch]
    return out


def maxpool_argmax(x, int k):
    cdef const double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], h = xv.shape[1], w = xv.shape[2], c = xv.shape[3]
    cdef Py_ssize_t oh = h // k, ow = w // k
    out = np.empty((n, oh, ow, c), dtype=np.float64)
    idx = np.empty((n, oh, ow, c), dtype=np.int64)
    cdef double[:, :, :, ::1] ov = out
    cdef long long[:, :, :, ::1] iv = idx
    cdef Py_ssize_t b, ch, oy, ox, dy, dx, iy, ix
    cdef double best, v
    with nogil:
        for b in range(n):
            for oy in range(oh):
                for ox in range(ow):
                    for ch in range(c):
                        iy = oy * k
                        ix = ox * k
                        best = xv[b, iy, ix, ch]
                        iv[b, oy, ox, ch] = ((b * h + iy) * w + ix) * c + ch
                        for dy in range(k):
                            for dx in range(k):
                                v = xv[b, oy * k + dy, ox * k + dx, ch]
                                if v > best:
                                    best = v
                                    iv[b, oy, ox, ch] = ((b * h + oy * k + dy) * w + ox * k + dx) * c + ch
                        ov[b, oy, ox, ch] = best
    return out, idx
