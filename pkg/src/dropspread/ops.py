"""Differentiable array operations (forward + explicit adjoints).

All tensors are NCHW float64. Every ``*_backward`` function is the exact
adjoint of its forward counterpart, which is what makes the finite-difference
gradient checks in the test suite meaningful.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import backend


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-padding stride-1 convolution. x: (N,C,H,W), w: (Cout,Cin,kh,kw)."""
    n, c, h, wd = x.shape
    cout, cin, kh, kw = w.shape
    if cin != c:
        raise ValueError(f"channel mismatch: input has {c}, kernel expects {cin}")
    if kh == 1 and kw == 1:
        cols = x.reshape(n, c, h * wd)
    else:
        xp = np.pad(x, ((0, 0), (0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
        cols = backend.im2col(xp, kh, kw, h, wd)
    y = w.reshape(cout, cin * kh * kw) @ cols
    return y.reshape(n, cout, h, wd) + b.reshape(1, cout, 1, 1)


def conv2d_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray):
    """Gradients of conv2d. Returns (dx, dw, db)."""
    n, c, h, wd = x.shape
    cout, cin, kh, kw = w.shape
    if kh == 1 and kw == 1:
        cols = x.reshape(n, c, h * wd)
    else:
        xp = np.pad(x, ((0, 0), (0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
        cols = backend.im2col(xp, kh, kw, h, wd)
    dym = dy.reshape(n, cout, h * wd)
    dw = np.einsum("nop,nkp->ok", dym, cols).reshape(w.shape)
    db = dym.sum(axis=(0, 2))
    dcols = w.reshape(cout, cin * kh * kw).T @ dym
    if kh == 1 and kw == 1:
        dx = dcols.reshape(x.shape)
    else:
        dx = backend.col2im(dcols, c, kh, kw, h, wd, kh // 2, kw // 2)
    return dx, dw, db


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, dy, 0.0)


def avgpool2(x: np.ndarray) -> np.ndarray:
    """2x2 average pooling; spatial dims must be even."""
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def avgpool2_backward(dy: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(dy, 2, axis=2), 2, axis=3) * 0.25


def upsample2_nearest(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def upsample2_nearest_backward(dy: np.ndarray) -> np.ndarray:
    n, c, h, w = dy.shape
    return dy.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


@lru_cache(maxsize=128)
def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out, n_in) interpolation matrix, half-pixel-center convention."""
    a = np.zeros((n_out, n_in))
    if n_in == 1:
        a[:, 0] = 1.0
        return a
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    rows = np.arange(n_out)
    np.add.at(a, (rows, i0), 1.0 - t)
    np.add.at(a, (rows, i1), t)
    return a


def resize_bilinear(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of (..., H, W) via separable interpolation matrices."""
    ar = _bilinear_matrix(x.shape[-2], out_h)
    ac = _bilinear_matrix(x.shape[-1], out_w)
    return np.einsum("oi,...iw->...ow", ar, x) @ ac.T


def resize_bilinear_backward(dy: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    ar = _bilinear_matrix(in_h, dy.shape[-2])
    ac = _bilinear_matrix(in_w, dy.shape[-1])
    return np.einsum("oi,...ow->...iw", ar, dy @ ac)


def resize_nearest(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour resize of (..., H, W); exact for label maps."""
    h, w = x.shape[-2], x.shape[-1]
    rows = np.minimum((np.arange(out_h) + 0.5) * h / out_h, h - 1).astype(int)
    cols = np.minimum((np.arange(out_w) + 0.5) * w / out_w, w - 1).astype(int)
    return x[..., rows[:, None], cols[None, :]]


def softmax(x: np.ndarray, axis: int) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(s: np.ndarray, dy: np.ndarray, axis: int) -> np.ndarray:
    """Backward through softmax given its output s."""
    dot = (s * dy).sum(axis=axis, keepdims=True)
    return s * (dy - dot)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
