"""Non-linear layer operations as forward/backward pairs.

Each forward returns (output, cache); the cache holds exactly what the
matching backward (and the visualization backward pass) needs: pool switch
indices, dropout masks, batch statistics, pre-activation values.

Like the tensor primitives, everything preserves the input dtype. Eval-mode
dropout and batchnorm are pure deterministic functions; train-mode dropout
consumes an rng stream and train-mode batchnorm mutates the running
statistics of its state (callers serialize those updates per layer).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# ---------------------------------------------------------------------------
# ReLU


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0), x


def relu_backward(cache: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return grad * (cache > 0)


# ---------------------------------------------------------------------------
# Max pooling with switches


class MaxPoolCache(NamedTuple):
    switches: np.ndarray  # (N, C, OH, OW) flat index into H*W
    in_shape: tuple


def maxpool_forward(x: np.ndarray, window: int, stride: int):
    """Max over window x window regions; switches record the argmax position
    of each region as a flat index into the input plane (ties go to the first
    element in row-major scan order)."""
    n, c, h, w = x.shape
    if window < 1 or stride < 1:
        raise ValueError(f"bad pool geometry window={window} stride={stride}")
    if window > h or window > w:
        raise ValueError(f"pool window {window} exceeds input {h}x{w}")
    out_h = (h - window) // stride + 1
    out_w = (w - window) // stride + 1
    win = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(n, c, out_h, out_w, window * window)
    local = flat.argmax(axis=4)
    y = flat.max(axis=4)
    rows = (np.arange(out_h) * stride)[None, None, :, None] + local // window
    cols = (np.arange(out_w) * stride)[None, None, None, :] + local % window
    switches = (rows * w + cols).astype(np.int64)
    return y, MaxPoolCache(switches, x.shape)


def maxpool_backward(cache: MaxPoolCache, grad: np.ndarray) -> np.ndarray:
    n, c, h, w = cache.in_shape
    gx = np.zeros((n, c, h * w), dtype=grad.dtype)
    idx_n = np.arange(n)[:, None, None, None]
    idx_c = np.arange(c)[None, :, None, None]
    np.add.at(gx, (idx_n, idx_c, cache.switches), grad)
    return gx.reshape(n, c, h, w)


# ---------------------------------------------------------------------------
# Local response normalization (across channels)


class LrnCache(NamedTuple):
    x: np.ndarray
    denom: np.ndarray  # k + (alpha/n) * windowed sum of squares
    n: int
    alpha: float
    beta: float


def _channel_window_sum(v: np.ndarray, n: int) -> np.ndarray:
    """Sum of v over a size-n channel window centered per channel, clipped at
    the channel boundaries."""
    c = v.shape[1]
    r = n // 2
    cs = np.cumsum(v, axis=1)
    upper = np.minimum(np.arange(c) + r, c - 1)
    lower = np.arange(c) - r - 1
    out = cs[:, upper].copy()
    valid = lower >= 0
    if valid.any():
        out[:, valid] -= cs[:, lower[valid]]
    return out


def lrn_forward(x: np.ndarray, n: int = 5, k: float = 2.0,
                alpha: float = 1e-4, beta: float = 0.75):
    """y = x / (k + (alpha/n) * sum_{neighbors} x^2)^beta across channels."""
    c = x.shape[1]
    if n < 1 or n % 2 == 0:
        raise ValueError(f"lrn window must be odd and positive, got {n}")
    if n > 2 * c - 1:
        raise ValueError(f"lrn window {n} too wide for {c} channels")
    s = _channel_window_sum(x * x, n)
    denom = k + (alpha / n) * s
    y = x * denom ** (-beta)
    return y, LrnCache(x, denom, n, alpha, beta)


def lrn_backward(cache: LrnCache, grad: np.ndarray) -> np.ndarray:
    x, d, n, alpha, beta = cache
    inner = _channel_window_sum(grad * x * d ** (-beta - 1), n)
    return grad * d ** (-beta) - (2.0 * alpha * beta / n) * x * inner


# ---------------------------------------------------------------------------
# Dropout (inverted: scaled at train time, identity at eval)


class DropoutCache(NamedTuple):
    mask: np.ndarray | None
    keep_prob: float


def dropout_forward(x: np.ndarray, keep_prob: float, mode: str,
                    rng: np.random.Generator | None = None):
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep probability must be in (0, 1], got {keep_prob}")
    if mode == "eval":
        return x, DropoutCache(None, keep_prob)
    if rng is None:
        raise ValueError("train-mode dropout requires an rng")
    mask = rng.random(x.shape) < keep_prob
    return x * mask / keep_prob, DropoutCache(mask, keep_prob)


def dropout_backward(cache: DropoutCache, grad: np.ndarray) -> np.ndarray:
    if cache.mask is None:
        return grad
    return grad * cache.mask / cache.keep_prob


# ---------------------------------------------------------------------------
# Batch normalization


@dataclass
class BatchNormState:
    """Learnable scale/shift plus running statistics for one channel axis."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.9  # fraction of the old running value kept per update

    @classmethod
    def create(cls, channels: int, eps: float = 1e-5, momentum: float = 0.9,
               dtype=np.float32) -> "BatchNormState":
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            eps=eps,
            momentum=momentum,
        )


class BatchNormCache(NamedTuple):
    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    axes: tuple


def _bn_shape(x: np.ndarray):
    if x.ndim == 4:
        return (0, 2, 3), (1, -1, 1, 1)
    if x.ndim == 2:
        return (0,), (1, -1)
    raise ValueError(f"batchnorm expects 2D or 4D input, got shape {x.shape}")


def batchnorm_forward(x: np.ndarray, state: BatchNormState, mode: str):
    """Normalize per channel to zero mean / unit variance with batch statistics
    (train) or running statistics (eval), then apply the learnable gamma/beta.

    Train mode updates the running statistics in place by exponential moving
    average and requires a batch of at least 2.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    axes, bshape = _bn_shape(x)
    gamma = state.gamma.reshape(bshape)
    beta = state.beta.reshape(bshape)
    if mode == "train":
        if x.shape[0] < 2:
            raise ValueError("train-mode batchnorm needs batch size >= 2")
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        m = state.momentum
        state.running_mean *= m
        state.running_mean += (1.0 - m) * mu.astype(state.running_mean.dtype)
        state.running_var *= m
        state.running_var += (1.0 - m) * var.astype(state.running_var.dtype)
    else:
        mu = state.running_mean.astype(x.dtype)
        var = state.running_var.astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x - mu.reshape(bshape)) * inv_std.reshape(bshape)
    y = gamma * xhat + beta
    return y, BatchNormCache(xhat, inv_std, state.gamma, axes)


def batchnorm_backward(cache: BatchNormCache, grad: np.ndarray):
    """Returns (grad_x, grad_gamma, grad_beta) for train-mode normalization."""
    xhat, inv_std, gamma, axes = cache
    bshape = (1, -1, 1, 1) if grad.ndim == 4 else (1, -1)
    count = np.prod([grad.shape[a] for a in axes])
    grad_beta = grad.sum(axis=axes)
    grad_gamma = (grad * xhat).sum(axis=axes)
    g = grad * gamma.reshape(bshape)
    gx = g - g.mean(axis=axes, keepdims=True) \
        - xhat * (g * xhat).sum(axis=axes, keepdims=True) / count
    gx = gx * inv_std.reshape(bshape)
    return gx, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# Spatial pyramid pooling


class SppCache(NamedTuple):
    switches: np.ndarray  # (N, C, total_bins) flat index into H*W
    in_shape: tuple
    levels: tuple


def _spp_bins(size: int, level: int):
    edges = [(i * size) // level for i in range(level + 1)]
    return list(zip(edges[:-1], edges[1:]))


def spp_forward(x: np.ndarray, levels):
    """Max-pool an l x l grid of near-equal bins for each pyramid level and
    concatenate (levels in declared order, channels-major within a level).
    Output length C * sum(l^2) is independent of the input's spatial size.
    """
    levels = tuple(int(l) for l in levels)
    if not levels or any(l < 1 for l in levels):
        raise ValueError(f"pyramid levels must be non-empty and >= 1, got {levels}")
    n, c, h, w = x.shape
    if min(h, w) < max(levels):
        raise ValueError(
            f"spatial size {h}x{w} smaller than pyramid level {max(levels)}")
    total = sum(l * l for l in levels)
    pooled = np.empty((n, c, total), dtype=x.dtype)
    switches = np.empty((n, c, total), dtype=np.int64)
    pos = 0
    for l in levels:
        row_bins = _spp_bins(h, l)
        col_bins = _spp_bins(w, l)
        for i, (r0, r1) in enumerate(row_bins):
            for j, (c0, c1) in enumerate(col_bins):
                sub = x[:, :, r0:r1, c0:c1].reshape(n, c, -1)
                local = sub.argmax(axis=2)
                width = c1 - c0
                pooled[:, :, pos + i * l + j] = sub.max(axis=2)
                switches[:, :, pos + i * l + j] = \
                    (r0 + local // width) * w + (c0 + local % width)
        pos += l * l
    # levels concatenate in declared order; channels-major within a level
    blocks = []
    pos = 0
    for l in levels:
        blocks.append(pooled[:, :, pos:pos + l * l].reshape(n, c * l * l))
        pos += l * l
    return np.concatenate(blocks, axis=1), SppCache(switches, x.shape, levels)


def spp_backward(cache: SppCache, grad: np.ndarray) -> np.ndarray:
    n, c, h, w = cache.in_shape
    parts = []
    pos = 0
    for l in cache.levels:
        parts.append(grad[:, pos * c:(pos + l * l) * c].reshape(n, c, l * l))
        pos += l * l
    g = np.concatenate(parts, axis=2)
    gx = np.zeros((n, c, h * w), dtype=grad.dtype)
    idx_n = np.arange(n)[:, None, None]
    idx_c = np.arange(c)[None, :, None]
    np.add.at(gx, (idx_n, idx_c, cache.switches), g)
    return gx.reshape(n, c, h, w)


def spp_output_length(channels: int, levels) -> int:
    return channels * sum(int(l) * int(l) for l in levels)


# ---------------------------------------------------------------------------
# Softmax + cross-entropy


def softmax_xent(logits: np.ndarray, labels):
    """Stable softmax probabilities and mean cross-entropy loss.

    logits: (N, C) or (C,); labels: int array (N,) or scalar. Returns
    (probs, loss) where probs matches the logits' leading shape.
    """
    squeeze = logits.ndim == 1
    z = np.atleast_2d(np.asarray(logits))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, c = z.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(
            f"labels must lie in [0, {c}), got range "
            f"[{labels.min()}, {labels.max()}]")
    zs = z - z.max(axis=1, keepdims=True)
    e = np.exp(zs)
    sums = e.sum(axis=1)
    probs = e / sums[:, None]
    nll = np.log(sums) - zs[np.arange(n), labels]
    loss = float(nll.mean())
    return (probs[0] if squeeze else probs), loss


def softmax_xent_grad(probs: np.ndarray, labels) -> np.ndarray:
    """Gradient of the mean cross-entropy loss w.r.t. the logits."""
    squeeze = probs.ndim == 1
    p = np.atleast_2d(probs)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n = p.shape[0]
    g = p.copy()
    g[np.arange(n), labels] -= 1.0
    g /= n
    return g[0] if squeeze else g
