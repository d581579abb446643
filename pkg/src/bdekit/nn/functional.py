"""Layer primitives on :class:`~bdekit.nn.tensor.Tensor` (NCHW layout)."""

from __future__ import annotations

import numpy as np

from bdekit import _kernels
from bdekit.errors import InvalidInputError
from bdekit.nn.tensor import Tensor


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check4(x: Tensor, what: str):
    if x.data.ndim != 4:
        raise InvalidInputError(f"{what} expects a 4-D (N, C, H, W) tensor, got {x.shape}")


def conv2d(x, weight, bias=None, padding: int | None = None) -> Tensor:
    """Stride-1 cross-correlation with zero padding.

    ``weight`` is ``(C_out, C_in, k, k)``. ``padding`` defaults to ``k // 2``,
    which preserves spatial size for odd ``k``.
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    _check4(x, "conv2d")
    c_out, c_in, k, k2 = weight.shape
    if k != k2:
        raise InvalidInputError("only square kernels are supported")
    if x.shape[1] != c_in:
        raise InvalidInputError(f"conv2d expects {c_in} input channels, got {x.shape[1]}")
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (c_out,):
            raise InvalidInputError(f"bias shape {bias.shape} does not match {c_out} filters")
    pad = k // 2 if padding is None else padding
    n, _, h, w = x.shape
    h_out, w_out = h + 2 * pad - k + 1, w + 2 * pad - k + 1
    if h_out < 1 or w_out < 1:
        raise InvalidInputError("input smaller than kernel")

    xd = np.ascontiguousarray(x.data)
    w2 = weight.data.reshape(c_out, c_in * k * k)
    # columns are (C_in*k*k, N*H_out*W_out) so each pass is a single GEMM
    if k == 1 and pad == 0:
        cols = xd.transpose(1, 0, 2, 3).reshape(c_in, n * h * w)
    else:
        cols = _kernels.im2col(xd, k, pad)
    out = w2 @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(c_out, n, h_out, w_out).transpose(1, 0, 2, 3))

    def back(g):
        g2 = np.ascontiguousarray(np.transpose(g, (1, 0, 2, 3))).reshape(c_out, n * h_out * w_out)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (g2 @ cols.T).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=1)
        if x.requires_grad:
            gcols = w2.T @ g2
            if k == 1 and pad == 0:
                gx = np.ascontiguousarray(gcols.reshape(c_in, n, h, w).transpose(1, 0, 2, 3))
            else:
                gx = _kernels.col2im(gcols, n, c_in, h, w, k, pad)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    if bias is None:
        return Tensor._make(out, parents, lambda g: back(g)[:2])
    return Tensor._make(out, parents, back)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return Tensor._make(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    # split by sign to avoid overflow in exp
    d = x.data
    e = np.exp(-np.abs(d))
    s = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return Tensor._make(s, (x,), lambda g: (g * s * (1 - s),))


def clip(x, lo: float, hi: float) -> Tensor:
    x = _as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return Tensor._make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def maxpool2(x) -> Tensor:
    x = _as_tensor(x)
    _check4(x, "maxpool2")
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise InvalidInputError(f"maxpool2 needs even spatial dims, got {x.shape[2:]}")
    out, arg = _kernels.maxpool2_forward(np.ascontiguousarray(x.data))

    def back(g):
        return (_kernels.maxpool2_backward(np.ascontiguousarray(g, dtype=x.dtype), arg),)

    return Tensor._make(out, (x,), back)


def _depth_to_space(a: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = a.shape
    oc = c // (r * r)
    return a.reshape(n, oc, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, oc, h * r, w * r)


def _space_to_depth(a: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = a.shape
    return a.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(
        n, c * r * r, h // r, w // r
    )


def pixel_shuffle(x, factor: int = 2) -> Tensor:
    """Depth-to-space: ``(N, C*r*r, H, W) -> (N, C, H*r, W*r)``."""
    x = _as_tensor(x)
    _check4(x, "pixel_shuffle")
    if x.shape[1] % (factor * factor):
        raise InvalidInputError(
            f"pixel_shuffle needs channels divisible by {factor * factor}, got {x.shape[1]}"
        )
    out = np.ascontiguousarray(_depth_to_space(x.data, factor))
    return Tensor._make(out, (x,), lambda g: (_space_to_depth(g, factor),))


def space_to_depth(x, factor: int = 2) -> Tensor:
    x = _as_tensor(x)
    _check4(x, "space_to_depth")
    if x.shape[2] % factor or x.shape[3] % factor:
        raise InvalidInputError(f"space_to_depth needs spatial dims divisible by {factor}")
    out = np.ascontiguousarray(_space_to_depth(x.data, factor))
    return Tensor._make(out, (x,), lambda g: (_depth_to_space(g, factor),))


def concat_channels(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check4(a, "concat_channels")
    _check4(b, "concat_channels")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise InvalidInputError(f"cannot concatenate {a.shape} and {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return Tensor._make(out, (a, b), lambda g: (g[:, :ca], g[:, ca:]))


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"cannot add {a.shape} and {b.shape}")
    return a + b


def l1_loss(pred, target) -> Tensor:
    """Mean absolute difference. The subgradient at zero difference is 0."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise InvalidInputError(f"l1_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    sign = np.sign(diff)

    def back(g):
        gp = g * sign / n
        return gp, -gp

    return Tensor._make(np.abs(diff).mean(), (pred, target), back)
