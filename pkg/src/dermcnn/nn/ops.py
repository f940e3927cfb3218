"""Layer forward/backward kernels on (N, C, H, W) arrays.

Every backward is the exact gradient of its forward; the test suite checks
each one against central finite differences.  Kernels preserve the input
dtype, so training can run in float32 while gradient checks run in float64.
Reductions use fixed loop order, keeping results identical across runs.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .. import rng
from ..errors import LabelNotBinary, ShapeMismatch, NonIntegralOutputSize, WindowLargerThanInput

PROB_EPS = 1e-7


def _conv_windows(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    # (N, C, Hp, Wp) -> (N, C, Ho, Wo, k, k) view
    return sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]


def conv2d_forward(x, w, b, stride: int = 1, pad: int = 0):
    """Cross-correlation with zero padding and per-output-channel bias."""
    n, c, h, wd = x.shape
    o, ci, k, k2 = w.shape
    if ci != c or k != k2 or b.shape != (o,):
        raise ShapeMismatch(f"conv2d: x{x.shape} w{w.shape} b{b.shape} are incompatible")
    ho, rh = divmod(h + 2 * pad - k, stride)
    wo, rw = divmod(wd + 2 * pad - k, stride)
    ho, wo = ho + 1, wo + 1
    if rh or rw or ho < 1 or wo < 1:
        raise NonIntegralOutputSize(f"conv2d: {h}x{wd} with k={k} stride={stride} pad={pad}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = _conv_windows(xp, k, stride).transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    y = cols @ w.reshape(o, -1).T + b
    y = y.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    cache = (x.shape, xp, w, stride, pad)
    return np.ascontiguousarray(y), cache


def conv2d_backward(cache, dy):
    x_shape, xp, w, stride, pad = cache
    n, c, h, wd = x_shape
    o, _, k, _ = w.shape
    if dy.shape[:2] != (n, o):
        raise ShapeMismatch(f"conv2d backward: dY {dy.shape} does not match output (N={n}, O={o})")
    ho, wo = dy.shape[2], dy.shape[3]
    dyr = dy.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
    cols = _conv_windows(xp, k, stride).transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    dw = (dyr.T @ cols).reshape(w.shape)
    db = dy.sum(axis=(0, 2, 3))
    dcols = (dyr @ w.reshape(o, -1)).reshape(n, ho, wo, c, k, k).transpose(0, 3, 1, 2, 4, 5)
    dxp = np.zeros_like(xp)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, :, :, i, j]
    dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
    return np.ascontiguousarray(dx), dw, db


def maxpool_forward(x, size: int, stride: int | None = None):
    """Window max with ties broken by first occurrence in row-major order."""
    stride = stride or size
    n, c, h, w = x.shape
    if size > h or size > w:
        raise WindowLargerThanInput(f"maxpool: window {size} exceeds input {h}x{w}")
    ho = (h - size) // stride + 1
    wo = (w - size) // stride + 1
    if ho < 1 or wo < 1:
        raise WindowLargerThanInput(f"maxpool: no complete window for {h}x{w}, size={size}, stride={stride}")
    tiles = _conv_windows(x, size, stride).reshape(n, c, ho, wo, size * size)
    arg = tiles.argmax(axis=4)
    y = np.take_along_axis(tiles, arg[..., None], axis=4)[..., 0]
    cache = (x.shape, size, stride, arg)
    return np.ascontiguousarray(y), cache


def maxpool_backward(cache, dy):
    x_shape, size, stride, arg = cache
    if dy.shape != arg.shape:
        raise ShapeMismatch(f"maxpool backward: dY {dy.shape} does not match output {arg.shape}")
    dx = np.zeros(x_shape, dtype=dy.dtype)
    ho, wo = arg.shape[2], arg.shape[3]
    ai, aj = np.divmod(arg, size)
    for i in range(size):
        for j in range(size):
            hit = (ai == i) & (aj == j)
            dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += np.where(hit, dy, 0.0)
    return dx


def dense_forward(x, w, b):
    """y = x W^T + b with W shaped (units, in_features)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeMismatch(f"dense: x{x.shape} w{w.shape} b{b.shape} are incompatible")
    return x @ w.T + b, (x, w)


def dense_backward(cache, dy):
    x, w = cache
    if dy.shape != (x.shape[0], w.shape[0]):
        raise ShapeMismatch(f"dense backward: dY {dy.shape} does not match ({x.shape[0]}, {w.shape[0]})")
    return dy @ w, dy.T @ x, dy.sum(axis=0)


def relu(x):
    return np.maximum(x, 0.0), x


def relu_backward(cache, dy):
    return np.where(cache > 0, dy, 0.0)


def sigmoid(x):
    """Numerically stable logistic function."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out, out


def sigmoid_backward(cache, dy):
    return dy * cache * (1.0 - cache)


def dropout(x, rate: float, seed: int, training: bool):
    """Inverted dropout: survivors are rescaled by 1/(1-rate); inference is identity."""
    if not 0.0 <= rate < 1.0:
        raise ShapeMismatch(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    keep = rng.stream(seed, rng.DROPOUT).random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    return x * keep * np.asarray(scale, dtype=x.dtype), (keep, scale)


def dropout_backward(cache, dy):
    if cache is None:
        return dy
    keep, scale = cache
    return dy * keep * np.asarray(scale, dtype=dy.dtype)


def _check_binary(y):
    y = np.asarray(y)
    if not np.isin(y, (0, 1)).all():
        raise LabelNotBinary(f"labels must be 0/1, got values {np.unique(y)[:5]}")
    return y.astype(np.float64)


def bce_loss(p, y) -> float:
    """Mean binary cross-entropy; probabilities are clamped to [1e-7, 1 - 1e-7]."""
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    y = _check_binary(y).reshape(-1)
    if p.shape != y.shape:
        raise ShapeMismatch(f"bce: {p.shape} scores vs {y.shape} labels")
    pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)))


def bce_grad(p, y):
    """d loss / d p on the clamped probabilities."""
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    y = _check_binary(y).reshape(-1)
    if p.shape != y.shape:
        raise ShapeMismatch(f"bce: {p.shape} scores vs {y.shape} labels")
    pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return (pc - y) / (pc * (1.0 - pc)) / p.size
