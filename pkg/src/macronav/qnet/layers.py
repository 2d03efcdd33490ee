"""Channel-last (N, H, W, C) layers with explicit backward passes."""

from __future__ import annotations

import numpy as np


def conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Stride-1, zero-padded 3x3 convolution. ``w`` has shape (3, 3, C, O)."""
    n, h, wd, c = x.shape
    xp = np.zeros((n, h + 2, wd + 2, c), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, :] = x
    out = np.empty((n, h, wd, w.shape[3]), dtype=x.dtype)
    out[...] = b
    for i in range(3):
        for j in range(3):
            out += xp[:, i : i + h, j : j + wd, :] @ w[i, j]
    return out, xp


def conv3x3_backward(dout: np.ndarray, xp: np.ndarray, w: np.ndarray, need_dx: bool = True):
    n, h, wd, o = dout.shape
    c = xp.shape[3]
    flat = dout.reshape(-1, o)
    dw = np.empty_like(w)
    for i in range(3):
        for j in range(3):
            dw[i, j] = xp[:, i : i + h, j : j + wd, :].reshape(-1, c).T @ flat
    db = flat.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dxp = np.zeros_like(xp)
    for i in range(3):
        for j in range(3):
            dxp[:, i : i + h, j : j + wd, :] += dout @ w[i, j].T
    return dxp[:, 1:-1, 1:-1, :], dw, db


def _quadrants(x: np.ndarray):
    return (x[:, 0::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 0::2], x[:, 1::2, 1::2])


def maxpool2_forward(x: np.ndarray, keep_index: bool = True):
    """2x2 max pooling. Ties resolve to the first quadrant in row-major order."""
    q = _quadrants(x)
    if not keep_index:
        return np.maximum(np.maximum(q[0], q[1]), np.maximum(q[2], q[3])), None
    stacked = np.stack(q)
    idx = stacked.argmax(axis=0)
    out = np.take_along_axis(stacked, idx[None], axis=0)[0]
    return out, idx


def maxpool2_backward(dout: np.ndarray, idx: np.ndarray, shape) -> np.ndarray:
    dx = np.zeros(shape, dtype=dout.dtype)
    dx[:, 0::2, 0::2] = dout * (idx == 0)
    dx[:, 0::2, 1::2] = dout * (idx == 1)
    dx[:, 1::2, 0::2] = dout * (idx == 2)
    dx[:, 1::2, 1::2] = dout * (idx == 3)
    return dx


def huber(residual: np.ndarray, delta: float = 1.0):
    """Elementwise Huber loss and its derivative."""
    a = np.abs(residual)
    quad = a <= delta
    loss = np.where(quad, 0.5 * residual**2, delta * (a - 0.5 * delta))
    grad = np.where(quad, residual, delta * np.sign(residual))
    return loss, grad
