# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled data-movement kernels for convolution and pooling.

All kernels assume stride 1 (convolution) or stride 2 (pooling) and
contiguous NCHW input. Shape validation happens in the Python layer.
"""

import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double

cnp.import_array()


def im2col(real[:, :, :, ::1] x, int k, int pad):
    """Unfold ``x`` into ``(C*k*k, N*H_out*W_out)`` patch columns."""
    cdef Py_ssize_t n_img = x.shape[0], c_in = x.shape[1]
    cdef Py_ssize_t h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t h_out = h + 2 * pad - k + 1, w_out = w + 2 * pad - k + 1
    dtype = np.float32 if real is float else np.float64
    cols_arr = np.zeros((c_in * k * k, n_img * h_out * w_out), dtype=dtype)
    cdef real[:, ::1] cols = cols_arr
    cdef Py_ssize_t n, c, ky, kx, oy, ox, iy, row, base
    cdef Py_ssize_t ox_lo, ox_hi
    for n in range(n_img):
        base = n * h_out * w_out
        for c in range(c_in):
            for ky in range(k):
                for kx in range(k):
                    row = (c * k + ky) * k + kx
                    # valid output columns for this kernel tap
                    ox_lo = pad - kx
                    if ox_lo < 0:
                        ox_lo = 0
                    ox_hi = w + pad - kx
                    if ox_hi > w_out:
                        ox_hi = w_out
                    for oy in range(h_out):
                        iy = oy + ky - pad
                        if iy < 0 or iy >= h:
                            continue
                        for ox in range(ox_lo, ox_hi):
                            cols[row, base + oy * w_out + ox] = x[n, c, iy, ox + kx - pad]
    return cols_arr


def col2im(real[:, ::1] cols, Py_ssize_t n_img, Py_ssize_t c_in, Py_ssize_t h, Py_ssize_t w, int k, int pad):
    """Adjoint of :func:`im2col`: scatter-add columns back to ``(N, C, H, W)``."""
    cdef Py_ssize_t h_out = h + 2 * pad - k + 1, w_out = w + 2 * pad - k + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n_img, c_in, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, c, ky, kx, oy, ox, iy, row, base
    cdef Py_ssize_t ox_lo, ox_hi
    for n in range(n_img):
        base = n * h_out * w_out
        for c in range(c_in):
            for ky in range(k):
                for kx in range(k):
                    row = (c * k + ky) * k + kx
                    ox_lo = pad - kx
                    if ox_lo < 0:
                        ox_lo = 0
                    ox_hi = w + pad - kx
                    if ox_hi > w_out:
                        ox_hi = w_out
                    for oy in range(h_out):
                        iy = oy + ky - pad
                        if iy < 0 or iy >= h:
                            continue
                        for ox in range(ox_lo, ox_hi):
                            out[n, c, iy, ox + kx - pad] += cols[row, base + oy * w_out + ox]
    return out_arr


def maxpool2_forward(real[:, :, :, ::1] x):
    """2x2 stride-2 max. Returns ``(out, argmax)`` with argmax in ``0..3`` (row-major in window)."""
    cdef Py_ssize_t n_img = x.shape[0], chans = x.shape[1]
    cdef Py_ssize_t ho = x.shape[2] // 2, wo = x.shape[3] // 2
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n_img, chans, ho, wo), dtype=dtype)
    arg_arr = np.empty((n_img, chans, ho, wo), dtype=np.int8)
    cdef real[:, :, :, ::1] out = out_arr
    cdef cnp.int8_t[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t n, c, i, j
    cdef real best, v
    cdef cnp.int8_t idx
    for n in range(n_img):
        for c in range(chans):
            for i in range(ho):
                for j in range(wo):
                    # first maximum wins on ties
                    best = x[n, c, 2 * i, 2 * j]
                    idx = 0
                    v = x[n, c, 2 * i, 2 * j + 1]
                    if v > best:
                        best = v
                        idx = 1
                    v = x[n, c, 2 * i + 1, 2 * j]
                    if v > best:
                        best = v
                        idx = 2
                    v = x[n, c, 2 * i + 1, 2 * j + 1]
                    if v > best:
                        best = v
                        idx = 3
                    out[n, c, i, j] = best
                    arg[n, c, i, j] = idx
    return out_arr, arg_arr


def maxpool2_backward(real[:, :, :, ::1] grad, cnp.int8_t[:, :, :, ::1] arg):
    cdef Py_ssize_t n_img = grad.shape[0], chans = grad.shape[1]
    cdef Py_ssize_t ho = grad.shape[2], wo = grad.shape[3]
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.zeros((n_img, chans, 2 * ho, 2 * wo), dtype=dtype)
    cdef real[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t n, c, i, j
    cdef cnp.int8_t idx
    for n in range(n_img):
        for c in range(chans):
            for i in range(ho):
                for j in range(wo):
                    idx = arg[n, c, i, j]
                    dx[n, c, 2 * i + (idx >> 1), 2 * j + (idx & 1)] = grad[n, c, i, j]
    return dx_arr
