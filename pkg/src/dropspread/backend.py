"""Hot array kernels, numba-compiled by default with pure-numpy fallbacks.

The convolution layers spend nearly all their time in im2col / col2im.
Both are provided in two flavours:

* ``*_numba`` -- explicit loops under ``@numba.njit``
* ``*_numpy`` -- vectorized slicing

Selection is done once at import time from the environment variable
``DROPSPREAD_NUMBA``: set it to ``0`` to force the numpy path (useful on
machines where the JIT is unavailable or for benchmarking, see
``benchmarks/bench_kernels.py``).
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("DROPSPREAD_NUMBA", "1").strip().lower()
_WANT_NUMBA = _FLAG not in ("0", "false", "off", "no")

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

NUMBA_ENABLED = _WANT_NUMBA and _HAVE_NUMBA


def im2col_numpy(xp: np.ndarray, kh: int, kw: int, out_h: int, out_w: int) -> np.ndarray:
    """Unfold padded input (N, C, Hp, Wp) into (N, C*kh*kw, out_h*out_w), stride 1."""
    n, c, _, _ = xp.shape
    cols = np.empty((n, c, kh, kw, out_h, out_w), dtype=xp.dtype)
    for ky in range(kh):
        for kx in range(kw):
            cols[:, :, ky, kx] = xp[:, :, ky:ky + out_h, kx:kx + out_w]
    return cols.reshape(n, c * kh * kw, out_h * out_w)


def col2im_numpy(cols: np.ndarray, c: int, kh: int, kw: int,
                 out_h: int, out_w: int, pad_h: int, pad_w: int) -> np.ndarray:
    """Adjoint of im2col: scatter-add columns back to an (N, C, H, W) array."""
    n = cols.shape[0]
    cols6 = cols.reshape(n, c, kh, kw, out_h, out_w)
    xp = np.zeros((n, c, out_h + 2 * pad_h, out_w + 2 * pad_w), dtype=cols.dtype)
    for ky in range(kh):
        for kx in range(kw):
            xp[:, :, ky:ky + out_h, kx:kx + out_w] += cols6[:, :, ky, kx]
    if pad_h == 0 and pad_w == 0:
        return xp
    return xp[:, :, pad_h:pad_h + out_h, pad_w:pad_w + out_w].copy()


if _HAVE_NUMBA:

    @njit(cache=True)
    def _im2col_jit(xp, kh, kw, out_h, out_w):  # pragma: no cover - jitted
        n, c, _, _ = xp.shape
        cols = np.empty((n, c * kh * kw, out_h * out_w), dtype=xp.dtype)
        for b in range(n):
            for ch in range(c):
                for ky in range(kh):
                    for kx in range(kw):
                        row = (ch * kh + ky) * kw + kx
                        for y in range(out_h):
                            base = y * out_w
                            for x in range(out_w):
                                cols[b, row, base + x] = xp[b, ch, y + ky, x + kx]
        return cols

    @njit(cache=True)
    def _col2im_jit(cols, c, kh, kw, out_h, out_w, pad_h, pad_w):  # pragma: no cover
        n = cols.shape[0]
        hp = out_h + 2 * pad_h
        wp = out_w + 2 * pad_w
        xp = np.zeros((n, c, hp, wp), dtype=cols.dtype)
        for b in range(n):
            for ch in range(c):
                for ky in range(kh):
                    for kx in range(kw):
                        row = (ch * kh + ky) * kw + kx
                        for y in range(out_h):
                            base = y * out_w
                            for x in range(out_w):
                                xp[b, ch, y + ky, x + kx] += cols[b, row, base + x]
        return xp[:, :, pad_h:pad_h + out_h, pad_w:pad_w + out_w].copy()

    def im2col_numba(xp, kh, kw, out_h, out_w):
        return _im2col_jit(np.ascontiguousarray(xp), kh, kw, out_h, out_w)

    def col2im_numba(cols, c, kh, kw, out_h, out_w, pad_h, pad_w):
        return _col2im_jit(np.ascontiguousarray(cols), c, kh, kw,
                           out_h, out_w, pad_h, pad_w)


if NUMBA_ENABLED:
    im2col = im2col_numba
    col2im = col2im_numba
else:
    im2col = im2col_numpy
    col2im = col2im_numpy


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
