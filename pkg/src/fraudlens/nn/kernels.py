"""Compiled NHWC kernels: 3x3 same-padding convolution, 2x2 max pooling,
and the fused ReLU backward pass.

Parallelism is deterministic: work splits per batch image (or per kernel
tap for the weight gradient), so every output element is accumulated by
exactly one thread in a fixed order and results are bitwise identical to
sequential execution.
"""

from __future__ import annotations

from numba import njit, prange


@njit(parallel=True, cache=True, fastmath=True)
def conv3x3_fwd(xp, w, b, y):
    """y[bi,i,j,co] = sum_{a,c,ci} xp[bi,i+a,j+c,ci] * w[a,c,ci,co] + b[co].

    xp is the zero-padded input (B, H+2, W+2, Ci); y is (B, H, W, Co).
    The input gradient is this same kernel applied to the padded output
    gradient with the 180-degree rotated, channel-swapped weights.
    """
    n_b, h, wd, c_out = y.shape
    c_in = xp.shape[3]
    for bi in prange(n_b):
        for i in range(h):
            for j in range(wd):
                for co in range(c_out):
                    y[bi, i, j, co] = b[co]
            for a in range(3):
                for c in range(3):
                    for ci in range(c_in):
                        for j in range(wd):
                            v = xp[bi, i + a, j + c, ci]
                            for co in range(c_out):
                                y[bi, i, j, co] += v * w[a, c, ci, co]


@njit(parallel=True, cache=True, fastmath=True)
def conv3x3_dw(xp, dy, dw9):
    """Weight gradient into dw9 (9, Ci, Co), zero-initialized by the caller;
    tap k = 3 * a + c. Parallel over the nine taps."""
    n_b, h, wd, c_out = dy.shape
    c_in = xp.shape[3]
    for tap in prange(9):
        a = tap // 3
        c = tap % 3
        for bi in range(n_b):
            for i in range(h):
                for j in range(wd):
                    for ci in range(c_in):
                        v = xp[bi, i + a, j + c, ci]
                        for co in range(c_out):
                            dw9[tap, ci, co] += v * dy[bi, i, j, co]


@njit(parallel=True, cache=True, fastmath=True)
def maxpool2_fwd(x, y, arg):
    """2x2 stride-2 max; arg records the in-window winner index (0..3,
    first maximum wins) for the backward scatter."""
    n_b, oh, ow, c = y.shape
    for bi in prange(n_b):
        for i in range(oh):
            for j in range(ow):
                for ch in range(c):
                    best = x[bi, 2 * i, 2 * j, ch]
                    k = 0
                    if x[bi, 2 * i, 2 * j + 1, ch] > best:
                        best = x[bi, 2 * i, 2 * j + 1, ch]
                        k = 1
                    if x[bi, 2 * i + 1, 2 * j, ch] > best:
                        best = x[bi, 2 * i + 1, 2 * j, ch]
                        k = 2
                    if x[bi, 2 * i + 1, 2 * j + 1, ch] > best:
                        best = x[bi, 2 * i + 1, 2 * j + 1, ch]
                        k = 3
                    y[bi, i, j, ch] = best
                    arg[bi, i, j, ch] = k


@njit(parallel=True, cache=True, fastmath=True)
def maxpool2_bwd(dy, arg, dx):
    """Route each pooled gradient to its argmax position; dx is
    zero-initialized at the unpooled shape (odd tails get zero)."""
    n_b, oh, ow, c = dy.shape
    for bi in prange(n_b):
        for i in range(oh):
            for j in range(ow):
                for ch in range(c):
                    k = arg[bi, i, j, ch]
                    dx[bi, 2 * i + k // 2, 2 * j + k % 2, ch] = dy[bi, i, j, ch]


@njit(parallel=True, cache=True, fastmath=True)
def relu_bwd(dy, x, dx):
    """dx = dy where x > 0 else 0, over flat arrays."""
    n = dy.shape[0]
    for i in prange(n):
        dx[i] = dy[i] if x[i] > 0.0 else 0.0
