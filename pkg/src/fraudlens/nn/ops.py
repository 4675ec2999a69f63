"""Tensor primitives: cross-correlation, pooling, activations, dropout, BCE."""

from __future__ import annotations

import numpy as np

PROB_CLAMP = 1e-7


def xcorr2d(input: np.ndarray, kernel: np.ndarray, padding: int = 0, stride: int = 1) -> np.ndarray:
    """2-D cross-correlation of a single-channel map with a kernel.

    The kernel slides over the zero-padded input left-to-right, top-to-bottom;
    each output element is the elementwise product-sum of the window with the
    kernel (no kernel flip). Output dims are
    floor((H + 2p - kh) / s) + 1 by floor((W + 2p - kw) / s) + 1.
    """
    x = np.asarray(input)
    k = np.asarray(kernel)
    if x.ndim != 2 or k.ndim != 2:
        raise ValueError("xcorr2d expects 2-D input and kernel")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if padding < 0:
        raise ValueError("padding must be >= 0")
    h, w = x.shape
    kh, kw = k.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError("kernel larger than padded input")
    xp = np.pad(x, padding)
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw))
    windows = windows[::stride, ::stride][:oh, :ow]
    return np.einsum("ijab,ab->ij", windows, k)


def maxpool2d(input: np.ndarray) -> np.ndarray:
    """2x2 stride-2 max pooling over the trailing two axes.

    Leading axes (channels, batch) pass through. A trailing odd row or
    column is dropped (floor semantics).
    """
    x = np.asarray(input)
    if x.ndim < 2:
        raise ValueError("maxpool2d expects at least 2 dims")
    h, w = x.shape[-2], x.shape[-1]
    if h < 2 or w < 2:
        raise ValueError("spatial dims must be >= 2")
    oh, ow = h // 2, w // 2
    x = x[..., : oh * 2, : ow * 2]
    shaped = x.reshape(*x.shape[:-2], oh, 2, ow, 2)
    return shaped.max(axis=(-3, -1))


def activation(x: np.ndarray, kind: str) -> np.ndarray:
    """Elementwise ReLU or logistic sigmoid."""
    x = np.asarray(x)
    if kind == "ReLU":
        return np.maximum(x, 0)
    if kind == "Sigmoid":
        return _sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp on the negative half only, for overflow safety at large |x|
    out = np.empty_like(x, dtype=x.dtype if x.dtype.kind == "f" else np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def dropout(x: np.ndarray, p: float, training: bool, seed: int = 0):
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p).

    Inference is the identity. Returns (output, mask); the mask already
    carries the 1/(1-p) scaling so backward is a plain multiply.
    """
    x = np.asarray(x)
    if not 0.0 <= p < 1.0:
        raise ValueError("p must be in [0, 1)")
    if not training or p == 0.0:
        return x.copy(), np.ones_like(x)
    rng = np.random.default_rng(seed)
    keep = rng.random(x.shape) >= p
    mask = keep.astype(x.dtype) / (1.0 - p)
    return x * mask, mask


def bce_loss(y: np.ndarray, p: np.ndarray) -> float:
    """Mean binary cross entropy; probabilities clamped to [1e-7, 1 - 1e-7]."""
    y = np.asarray(y, dtype=np.float64).ravel()
    p = np.asarray(p, dtype=np.float64).ravel()
    if y.size == 0:
        raise ValueError("empty batch")
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
