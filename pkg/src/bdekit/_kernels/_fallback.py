"""Pure numpy versions of the compiled kernels in ``_core.pyx``.

Signatures and outputs match the compiled module exactly; the test suite
runs both against each other.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, k, pad):
    n, c, h, w = x.shape
    h_out, w_out = h + 2 * pad - k + 1, w + 2 * pad - k + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    # (N, C, H_out, W_out, k, k) -> (C, k, k, N, H_out, W_out)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * h_out * w_out)
    return np.ascontiguousarray(cols)


def col2im(cols, n, c_in, h, w, k, pad):
    h_out, w_out = h + 2 * pad - k + 1, w + 2 * pad - k + 1
    cols6 = cols.reshape(c_in, k, k, n, h_out, w_out).transpose(3, 0, 1, 2, 4, 5)
    out = np.zeros((n, c_in, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ky in range(k):
        for kx in range(k):
            out[:, :, ky:ky + h_out, kx:kx + w_out] += cols6[:, :, ky, kx]
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(out)


def maxpool2_forward(x):
    n, c, h, w = x.shape
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    arg = np.argmax(blocks, axis=-1).astype(np.int8)
    out = np.take_along_axis(blocks, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def maxpool2_backward(grad, arg):
    n, c, ho, wo = grad.shape
    onehot = np.arange(4, dtype=np.int8) == arg[..., None]
    blocks = np.where(onehot, grad[..., None], 0).astype(grad.dtype)
    dx = blocks.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(dx.reshape(n, c, 2 * ho, 2 * wo))
