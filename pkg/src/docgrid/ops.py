"""Dense tensor primitives: multi-channel 2D convolution and the affine
(fully connected) product, each with exact analytic gradients.

All arrays use the NCHW layout (batch, channels, height, width) in C order.
Parameters are stored as 32-bit floats; every op preserves the dtype of its
inputs, so passing float64 arrays gives 64-bit accumulation for tight
numerical checks.

The convolution is a cross-correlation: kernels are applied as stored,
without flipping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class ConvGeometry:
    """Kernel size, stride and symmetric zero padding of a 2D convolution."""

    kernel_h: int
    kernel_w: int
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ValueError(
                f"kernel dims must be positive, got {self.kernel_h}x{self.kernel_w}")
        if self.stride < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if self.pad < 0:
            raise ValueError(f"padding must be non-negative, got {self.pad}")

    def out_size(self, in_h: int, in_w: int) -> tuple[int, int]:
        out_h = (in_h + 2 * self.pad - self.kernel_h) // self.stride + 1
        out_w = (in_w + 2 * self.pad - self.kernel_w) // self.stride + 1
        return out_h, out_w


def _im2col(x: np.ndarray, geom: ConvGeometry, out_h: int, out_w: int) -> np.ndarray:
    """Unfold conv windows of x into a (N, out_h*out_w, C*kh*kw) matrix."""
    n, c, _, _ = x.shape
    if geom.pad:
        p = geom.pad
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(x, (geom.kernel_h, geom.kernel_w), axis=(2, 3))
    win = win[:, :, ::geom.stride, ::geom.stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(n, out_h * out_w, c * geom.kernel_h * geom.kernel_w)


def _col2im(dcols: np.ndarray, x_shape: tuple, geom: ConvGeometry,
            out_h: int, out_w: int) -> np.ndarray:
    """Scatter-add column gradients back to input positions (inverse of _im2col)."""
    n, c, h, w = x_shape
    kh, kw, s, p = geom.kernel_h, geom.kernel_w, geom.stride, geom.pad
    dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dcols.dtype)
    dwin = dcols.reshape(n, out_h, out_w, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + s * out_h:s, j:j + s * out_w:s] += dwin[:, :, :, :, i, j]
    if p:
        return np.ascontiguousarray(dxp[:, :, p:-p, p:-p])
    return dxp


def conv2d(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray,
           geom: ConvGeometry) -> np.ndarray:
    """Multi-channel 2D convolution (cross-correlation) with per-filter bias.

    x: (N, C, H, W); kernels: (O, C, kh, kw); bias: (O,). Returns (N, O, H', W')
    where each element is the dot product of a kernel with the padded input
    window under it, plus the filter bias.
    """
    x = np.asarray(x)
    kernels = np.asarray(kernels)
    bias = np.asarray(bias)
    if x.ndim != 4:
        raise ValueError(f"input must be NCHW, got shape {x.shape}")
    if kernels.ndim != 4:
        raise ValueError(f"kernels must be OCKK, got shape {kernels.shape}")
    n, c, h, w = x.shape
    o, ck, kh, kw = kernels.shape
    if ck != c:
        raise ValueError(
            f"channel mismatch: input {x.shape} has {c} channels, "
            f"kernels {kernels.shape} expect {ck}")
    if (kh, kw) != (geom.kernel_h, geom.kernel_w):
        raise ValueError(
            f"kernels {kernels.shape} disagree with geometry "
            f"{geom.kernel_h}x{geom.kernel_w}")
    if bias.shape != (o,):
        raise ValueError(f"bias shape {bias.shape} does not match {o} filters")
    out_h, out_w = geom.out_size(h, w)
    if out_h < 1 or out_w < 1:
        raise ValueError(
            f"geometry {geom} yields empty output {out_h}x{out_w} "
            f"for input {h}x{w}")
    cols = _im2col(x, geom, out_h, out_w)
    out = cols @ kernels.reshape(o, -1).T
    out += bias
    return np.ascontiguousarray(out.transpose(0, 2, 1)).reshape(n, o, out_h, out_w)


def conv2d_grad(x: np.ndarray, kernels: np.ndarray, geom: ConvGeometry,
                grad_out: np.ndarray):
    """Gradients of conv2d w.r.t. (input, kernels, bias) for upstream grad_out."""
    x = np.asarray(x)
    kernels = np.asarray(kernels)
    grad_out = np.asarray(grad_out)
    n, c, h, w = x.shape
    o = kernels.shape[0]
    out_h, out_w = geom.out_size(h, w)
    if grad_out.shape != (n, o, out_h, out_w):
        raise ValueError(
            f"grad_out shape {grad_out.shape} does not match conv output "
            f"{(n, o, out_h, out_w)}")
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    cols = _im2col(x, geom, out_h, out_w)
    g = grad_out.reshape(n, o, out_h * out_w)
    grad_kernels = np.tensordot(g, cols, axes=([0, 2], [0, 1])).reshape(kernels.shape)
    dcols = np.matmul(g.transpose(0, 2, 1), kernels.reshape(o, -1))
    grad_input = _col2im(dcols, x.shape, geom, out_h, out_w)
    return grad_input, grad_kernels, grad_bias


def matmul_affine(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map for fully connected layers: out[n,u] = sum_f w[u,f]*x[n,f] + b[u]."""
    x = np.asarray(x)
    weight = np.asarray(weight)
    bias = np.asarray(bias)
    if x.ndim != 2 or weight.ndim != 2:
        raise ValueError(
            f"expected 2D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(
            f"feature mismatch: input {x.shape} vs weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ValueError(
            f"bias shape {bias.shape} does not match {weight.shape[0]} units")
    return x @ weight.T + bias


def matmul_affine_grad(x: np.ndarray, weight: np.ndarray, grad_out: np.ndarray):
    """Gradients of matmul_affine w.r.t. (input, weight, bias)."""
    x = np.asarray(x)
    weight = np.asarray(weight)
    grad_out = np.asarray(grad_out)
    if grad_out.shape != (x.shape[0], weight.shape[0]):
        raise ValueError(
            f"grad_out shape {grad_out.shape} does not match output "
            f"{(x.shape[0], weight.shape[0])}")
    grad_input = grad_out @ weight
    grad_weight = grad_out.T @ x
    grad_bias = grad_out.sum(axis=0)
    return grad_input, grad_weight, grad_bias
