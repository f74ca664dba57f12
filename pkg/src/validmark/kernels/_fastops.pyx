# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the training hot loop.

Loops are arranged so the innermost dimension walks contiguous memory
(per-row saxpy over the output), with padding handled by precomputed valid
index ranges instead of per-pixel bound checks. Contracts mirror
_reference.py; float64 in, float64 out.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline Py_ssize_t _lo(Py_ssize_t pad, Py_ssize_t k, Py_ssize_t stride) noexcept nogil:
    # smallest o with o*stride + k - pad >= 0
    cdef Py_ssize_t d = pad - k
    if d <= 0:
        return 0
    return (d + stride - 1) // stride


cdef inline Py_ssize_t _hi(Py_ssize_t limit, Py_ssize_t out_n, Py_ssize_t pad,
                           Py_ssize_t k, Py_ssize_t stride) noexcept nogil:
    # one past the largest o with o*stride + k - pad <= limit - 1
    cdef Py_ssize_t top = (limit - 1 - k + pad) // stride + 1
    if top > out_n:
        return out_n
    if top < 0:
        return 0
    return top


def conv2d_forward(cnp.ndarray x_in, cnp.ndarray w_in, cnp.ndarray b_in,
                   int stride, int pad):
    cdef double[:, :, :, ::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef double[:, :, :, ::1] w = np.ascontiguousarray(w_in, dtype=np.float64)
    cdef double[::1] b = np.ascontiguousarray(b_in, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t f = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (wd + 2 * pad - kw) // stride + 1
    out_arr = np.empty((n, f, ho, wo), dtype=np.float64)
    cdef double[:, :, :, ::1] y = out_arr
    cdef Py_ssize_t ni, fi, ci, oy, ox, ky, kx, iy, base
    cdef Py_ssize_t oy_lo, oy_hi, ox_lo, ox_hi
    cdef double wv, bv
    with nogil:
        for ni in range(n):
            for fi in range(f):
                bv = b[fi]
                for oy in range(ho):
                    for ox in range(wo):
                        y[ni, fi, oy, ox] = bv
                for ci in range(c):
                    for ky in range(kh):
                        oy_lo = _lo(pad, ky, stride)
                        oy_hi = _hi(h, ho, pad, ky, stride)
                        for kx in range(kw):
                            ox_lo = _lo(pad, kx, stride)
                            ox_hi = _hi(wd, wo, pad, kx, stride)
                            wv = w[fi, ci, ky, kx]
                            if wv == 0.0:
                                continue
                            for oy in range(oy_lo, oy_hi):
                                iy = oy * stride + ky - pad
                                base = kx - pad
                                if stride == 1:
                                    for ox in range(ox_lo, ox_hi):
                                        y[ni, fi, oy, ox] += wv * x[ni, ci, iy, base + ox]
                                else:
                                    for ox in range(ox_lo, ox_hi):
                                        y[ni, fi, oy, ox] += wv * x[ni, ci, iy, base + ox * stride]
    return out_arr


def conv2d_backward(cnp.ndarray x_in, cnp.ndarray w_in, cnp.ndarray dy_in,
                    int stride, int pad):
    cdef double[:, :, :, ::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef double[:, :, :, ::1] w = np.ascontiguousarray(w_in, dtype=np.float64)
    cdef double[:, :, :, ::1] dy = np.ascontiguousarray(dy_in, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t f = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = dy.shape[2], wo = dy.shape[3]
    dx_arr = np.zeros((n, c, h, wd), dtype=np.float64)
    dw_arr = np.zeros((f, c, kh, kw), dtype=np.float64)
    db_arr = np.zeros(f, dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef double[:, :, :, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef Py_ssize_t ni, fi, ci, oy, ox, ky, kx, iy, base
    cdef Py_ssize_t oy_lo, oy_hi, ox_lo, ox_hi
    cdef double wv, acc, acc0, acc1, dyv
    with nogil:
        for ni in range(n):
            for fi in range(f):
                acc = 0.0
                for oy in range(ho):
                    for ox in range(wo):
                        acc += dy[ni, fi, oy, ox]
                db[fi] += acc
                for ci in range(c):
                    for ky in range(kh):
                        oy_lo = _lo(pad, ky, stride)
                        oy_hi = _hi(h, ho, pad, ky, stride)
                        for kx in range(kw):
                            ox_lo = _lo(pad, kx, stride)
                            ox_hi = _hi(wd, wo, pad, kx, stride)
                            wv = w[fi, ci, ky, kx]
                            acc = 0.0
                            base = kx - pad
                            for oy in range(oy_lo, oy_hi):
                                iy = oy * stride + ky - pad
                                # two passes: a 2-way unrolled dot product for
                                # dw, then a saxpy for dx (both vectorizable)
                                acc0 = 0.0
                                acc1 = 0.0
                                if stride == 1:
                                    for ox in range(ox_lo, ox_hi - 1, 2):
                                        acc0 += x[ni, ci, iy, base + ox] * dy[ni, fi, oy, ox]
                                        acc1 += x[ni, ci, iy, base + ox + 1] * dy[ni, fi, oy, ox + 1]
                                    if (ox_hi - ox_lo) & 1:
                                        acc0 += x[ni, ci, iy, base + ox_hi - 1] * dy[ni, fi, oy, ox_hi - 1]
                                    for ox in range(ox_lo, ox_hi):
                                        dx[ni, ci, iy, base + ox] += wv * dy[ni, fi, oy, ox]
                                else:
                                    for ox in range(ox_lo, ox_hi):
                                        dyv = dy[ni, fi, oy, ox]
                                        acc0 += x[ni, ci, iy, base + ox * stride] * dyv
                                        dx[ni, ci, iy, base + ox * stride] += wv * dyv
                                acc += acc0 + acc1
                            dw[fi, ci, ky, kx] += acc
    return dx_arr, dw_arr, db_arr


def maxpool2_forward(cnp.ndarray x_in):
    cdef double[:, :, :, ::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t h2 = h // 2, w2 = w // 2
    y_arr = np.empty((n, c, h2, w2), dtype=np.float64)
    arg_arr = np.empty((n, c, h2, w2), dtype=np.int64)
    cdef double[:, :, :, ::1] y = y_arr
    cdef long long[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t ni, ci, oy, ox, k, iy, ix
    cdef double best, val
    cdef long long besti
    with nogil:
        for ni in range(n):
            for ci in range(c):
                for oy in range(h2):
                    for ox in range(w2):
                        best = x[ni, ci, 2 * oy, 2 * ox]
                        besti = 0
                        for k in range(1, 4):
                            iy = 2 * oy + (k >> 1)
                            ix = 2 * ox + (k & 1)
                            val = x[ni, ci, iy, ix]
                            if val > best:
                                best = val
                                besti = k
                        y[ni, ci, oy, ox] = best
                        arg[ni, ci, oy, ox] = besti
    return y_arr, arg_arr


def maxpool2_backward(cnp.ndarray dy_in, cnp.ndarray arg_in, int h, int w):
    cdef double[:, :, :, ::1] dy = np.ascontiguousarray(dy_in, dtype=np.float64)
    cdef long long[:, :, :, ::1] arg = np.ascontiguousarray(arg_in, dtype=np.int64)
    cdef Py_ssize_t n = dy.shape[0], c = dy.shape[1], h2 = dy.shape[2], w2 = dy.shape[3]
    dx_arr = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t ni, ci, oy, ox
    cdef long long k
    with nogil:
        for ni in range(n):
            for ci in range(c):
                for oy in range(h2):
                    for ox in range(w2):
                        k = arg[ni, ci, oy, ox]
                        dx[ni, ci, 2 * oy + (k >> 1), 2 * ox + (k & 1)] += dy[ni, ci, oy, ox]
    return dx_arr
