"""Functional forward/backward kernels for the layer zoo.

All kernels take and return plain numpy arrays in NCHW layout and are pure:
each forward returns (output, cache) and the matching backward consumes the
cache.  Convolution is cross-correlation (no kernel flip).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import ShapeMismatch


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    hp, wp = x.shape[2], x.shape[3]
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeMismatch(f"kernel {kh}x{kw} stride {stride} too large for {h}x{w} (pad {pad})")
    sn, sc, sh, sw = x.strides
    view = as_strided(
        x,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
    )
    cols = np.ascontiguousarray(view).reshape(n, c * kh * kw, oh * ow)
    return cols, (oh, ow, hp, wp)


def _col2im(cols_grad: np.ndarray, x_shape, kh, kw, stride, pad, oh, ow):
    n, c, h, w = x_shape
    hp, wp = h + 2 * pad, w + 2 * pad
    dxp = np.zeros((n, c, hp, wp), dtype=cols_grad.dtype)
    g = cols_grad.reshape(n, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += g[:, :, i, j]
    if pad:
        return dxp[:, :, pad:-pad, pad:-pad]
    return dxp


def conv2d_forward(x, w, b, stride: int, pad: int):
    """x: (N, C, H, W); w: (O, C, kh, kw); b: (O,)."""
    o, c, kh, kw = w.shape
    cols, (oh, ow, _, _) = _im2col(x, kh, kw, stride, pad)
    out = np.einsum("ok,nkl->nol", w.reshape(o, -1), cols, optimize=True)
    out += b[None, :, None]
    out = out.reshape(x.shape[0], o, oh, ow)
    return out, (x.shape, cols, w, stride, pad, oh, ow)


def conv2d_backward(dy, cache):
    x_shape, cols, w, stride, pad, oh, ow = cache
    n = x_shape[0]
    o, c, kh, kw = w.shape
    dyf = dy.reshape(n, o, oh * ow)
    dw = np.einsum("nol,nkl->ok", dyf, cols, optimize=True).reshape(w.shape)
    db = dyf.sum(axis=(0, 2))
    dcols = np.einsum("ok,nol->nkl", w.reshape(o, -1), dyf, optimize=True)
    dx = _col2im(dcols, x_shape, kh, kw, stride, pad, oh, ow)
    return dx, dw, db


def maxpool_forward(x, kernel: int, stride: int):
    n, c, h, w = x.shape
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeMismatch(f"pool {kernel}/{stride} too large for {h}x{w}")
    sn, sc, sh, sw = x.strides
    view = as_strided(
        x,
        shape=(n, c, oh, ow, kernel, kernel),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
    )
    windows = view.reshape(n, c, oh, ow, kernel * kernel)
    arg = windows.argmax(axis=4)
    out = np.take_along_axis(windows, arg[..., None], axis=4)[..., 0]
    return out, (x.shape, arg, kernel, stride, oh, ow)


def maxpool_backward(dy, cache):
    x_shape, arg, kernel, stride, oh, ow = cache
    n, c, h, w = x_shape
    dx = np.zeros(x_shape, dtype=dy.dtype)
    ky, kx = np.divmod(arg, kernel)
    oy = np.arange(oh)[None, None, :, None] * stride
    ox = np.arange(ow)[None, None, None, :] * stride
    rows = (oy + ky).ravel()
    colz = (ox + kx).ravel()
    ni = np.repeat(np.arange(n), c * oh * ow)
    ci = np.tile(np.repeat(np.arange(c), oh * ow), n)
    np.add.at(dx, (ni, ci, rows, colz), dy.ravel())
    return dx


def avgpool_global_forward(x):
    out = x.mean(axis=(2, 3))
    return out, x.shape


def avgpool_global_backward(dy, x_shape):
    n, c, h, w = x_shape
    return np.broadcast_to(dy[:, :, None, None], x_shape).copy() / (h * w)


def relu_forward(x):
    out = np.maximum(x, 0)
    return out, x > 0


def relu_backward(dy, mask):
    return dy * mask


def fc_forward(x, w, b):
    """x: (N, ...) flattened to (N, D); w: (D, F); b: (F,)."""
    xf = x.reshape(x.shape[0], -1)
    return xf @ w + b, (x.shape, xf, w)


def fc_backward(dy, cache):
    x_shape, xf, w = cache
    dw = xf.T @ dy
    db = dy.sum(axis=0)
    dx = (dy @ w.T).reshape(x_shape)
    return dx, dw, db


def _lrn_window_sum(t, radius):
    c = t.shape[1]
    padded = np.pad(t, ((0, 0), (radius, radius), (0, 0), (0, 0)))
    csum = np.cumsum(padded, axis=1)
    csum = np.concatenate([np.zeros_like(csum[:, :1]), csum], axis=1)
    return csum[:, 2 * radius + 1:2 * radius + 1 + c] - csum[:, :c]


def lrn_forward(x, n: int, alpha: float, beta: float, k: float):
    """b = a / (k + (alpha/n) * sum_window a^2)^beta over a channel window."""
    if n % 2 == 0:
        raise ShapeMismatch("lrn depth must be odd")
    radius = (n - 1) // 2
    denom = k + (alpha / n) * _lrn_window_sum(x * x, radius)
    scale = denom ** (-beta)
    out = x * scale
    return out, (x, denom, scale, n, alpha, beta, radius)


def lrn_backward(dy, cache):
    x, denom, scale, n, alpha, beta, radius = cache
    t = dy * x * denom ** (-beta - 1.0)
    return dy * scale - (2.0 * alpha * beta / n) * x * _lrn_window_sum(t, radius)


def softmax_xent(logits, labels):
    """Mean cross-entropy with log-sum-exp stabilization.

    Returns (loss, probs, dlogits)."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    probs = exps / exps.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    lse = np.log(exps.sum(axis=1)) - shifted[np.arange(n), labels]
    loss = float(lse.mean())
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, probs, dlogits
