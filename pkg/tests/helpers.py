"""Shared test helpers and independent oracles."""

import numpy as np

from bdekit.bitcore import ImageBuffer


def random_image(rng, h, w, max_bits=8) -> ImageBuffer:
    return ImageBuffer(rng.integers(0, 1 << max_bits, size=(h, w, 3)), max_bits)


def conv2d_loops(x, weight, bias, pad):
    """Direct nested-loop cross-correlation, stride 1, zero padding."""
    n, c_in, h, w = x.shape
    c_out, _, k, _ = weight.shape
    xp = np.zeros((n, c_in, h + 2 * pad, w + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + w] = x
    ho, wo = h + 2 * pad - k + 1, w + 2 * pad - k + 1
    out = np.zeros((n, c_out, ho, wo))
    for b in range(n):
        for o in range(c_out):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if bias is None else float(bias[o])
                    for c in range(c_in):
                        for ky in range(k):
                            for kx in range(k):
                                acc += xp[b, c, i + ky, j + kx] * weight[o, c, ky, kx]
                    out[b, o, i, j] = acc
    return out


def maxpool_loops(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2))
    for b in range(n):
        for ch in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    out[b, ch, i, j] = max(x[b, ch, 2 * i, 2 * j], x[b, ch, 2 * i, 2 * j + 1],
                                           x[b, ch, 2 * i + 1, 2 * j], x[b, ch, 2 * i + 1, 2 * j + 1])
    return out


def central_difference(f, arr, step=1e-5):
    """Numerical gradient of scalar ``f()`` w.r.t. every element of ``arr`` (perturbed in place)."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = f()
        flat[i] = old - step
        fm = f()
        flat[i] = old
        g[i] = (fp - fm) / (2 * step)
    return grad


def relative_error(analytic, numeric, floor=1e-6):
    """Elementwise |a - n| / max(|a|, |n|, floor)."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def conv2d_shifts(x, weight, bias=None):
    """Zero-padded 'same' cross-correlation built from shifted einsums (independent of im2col)."""
    c_out, c_in, k, _ = weight.shape
    pad = k // 2
    n, _, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, c_out, h, w))
    for ky in range(k):
        for kx in range(k):
            out += np.einsum("oc,nchw->nohw", weight[:, :, ky, kx], xp[:, :, ky:ky + h, kx:kx + w])
    if bias is not None:
        out += bias[None, :, None, None]
    return out
