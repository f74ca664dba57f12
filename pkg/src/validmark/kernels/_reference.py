"""Pure-numpy fallback for the hot kernels (im2col convolutions).

Same contracts as the compiled backend in _fastops.pyx; used when the
extension is unavailable or VALIDMARK_NO_EXT=1.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (N, C, Ho, Wo, kh, kw) view over the padded input
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                   stride: int, pad: int) -> np.ndarray:
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = _windows(xp, w.shape[2], w.shape[3], stride)
    y = np.einsum("nchwij,fcij->nfhw", win, w, optimize=True)
    return y + b[None, :, None, None]


def conv2d_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray,
                    stride: int, pad: int):
    """Gradients (dx, dw, db) of conv2d_forward."""
    n, c, h, width = x.shape
    f, _, kh, kw = w.shape
    ho, wo = dy.shape[2], dy.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x

    db = dy.sum(axis=(0, 2, 3))
    win = _windows(xp, kh, kw, stride)
    dw = np.einsum("nchwij,nfhw->fcij", win, dy, optimize=True)

    dxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            patch = np.einsum("fc,nfhw->nchw", w[:, :, i, j], dy, optimize=True)
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += patch
    dx = dxp[:, :, pad:pad + h, pad:pad + width] if pad else dxp
    return dx, dw, db


def maxpool2_forward(x: np.ndarray):
    """2x2 stride-2 max pool; odd trailing rows/cols are dropped.

    Returns (y, argmax) where argmax holds the within-window winner index
    in row-major window order (first maximal element wins ties).
    """
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    win = x[:, :, :h2 * 2, :w2 * 2].reshape(n, c, h2, 2, w2, 2)
    flat = win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    arg = flat.argmax(axis=-1).astype(np.int64)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return y, arg


def maxpool2_backward(dy: np.ndarray, argmax: np.ndarray, h: int, w: int) -> np.ndarray:
    n, c, h2, w2 = dy.shape
    dxw = np.zeros((n, c, h2, w2, 4), dtype=dy.dtype)
    np.put_along_axis(dxw, argmax[..., None], dy[..., None], axis=-1)
    dx = np.zeros((n, c, h, w), dtype=dy.dtype)
    dx[:, :, :h2 * 2, :w2 * 2] = (
        dxw.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h2 * 2, w2 * 2)
    )
    return dx
