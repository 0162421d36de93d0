"""Tensor primitive tests: naive-loop oracles, hand-computed examples,
gradient checks, and shape/linearity properties."""

import itertools

import numpy as np
import pytest

from docgrid import ops
from conftest import check_grad, numeric_grad, max_rel_err


def conv2d_loops(x, kernels, bias, stride, pad):
    """Six-nested-loop reference convolution (cross-correlation)."""
    n, c, h, w = x.shape
    o, _, kh, kw = kernels.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out_h = (h + 2 * pad - kh) // stride + 1
    out_w = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, out_h, out_w), dtype=np.float64)
    for ni in range(n):
        for oi in range(o):
            for yi in range(out_h):
                for xi in range(out_w):
                    acc = 0.0
                    for ci in range(c):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += (kernels[oi, ci, ky, kx]
                                        * xp[ni, ci, yi * stride + ky,
                                             xi * stride + kx])
                    out[ni, oi, yi, xi] = acc + bias[oi]
    return out


def matmul_loops(x, weight, bias):
    n, f = x.shape
    u = weight.shape[0]
    out = np.zeros((n, u), dtype=np.float64)
    for ni in range(n):
        for ui in range(u):
            acc = 0.0
            for fi in range(f):
                acc += weight[ui, fi] * x[ni, fi]
            out[ni, ui] = acc + bias[ui]
    return out


class TestConv2d:
    def test_all_ones(self):
        x = np.ones((1, 1, 3, 3), dtype=np.float32)
        k = np.ones((1, 1, 2, 2), dtype=np.float32)
        y = ops.conv2d(x, k, np.zeros(1, np.float32), ops.ConvGeometry(2, 2))
        np.testing.assert_array_equal(y, np.full((1, 1, 2, 2), 4.0, np.float32))

    def test_zero_kernel_gives_bias(self):
        rng = np.random.default_rng(0)
        x = rng.random((2, 3, 4, 4)).astype(np.float32)
        k = np.zeros((1, 3, 1, 1), dtype=np.float32)
        b = np.array([2.5], dtype=np.float32)
        y = ops.conv2d(x, k, b, ops.ConvGeometry(1, 1))
        np.testing.assert_array_equal(y, np.full((2, 1, 4, 4), 2.5, np.float32))

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(42)
        x = rng.standard_normal((1, 2, 5, 5))
        k = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        got = ops.conv2d(x, k, b, ops.ConvGeometry(3, 3, stride=2, pad=1))
        want = conv2d_loops(x, k, b, stride=2, pad=1)
        np.testing.assert_allclose(got, want, atol=1e-5)

    def test_loop_oracle_geometry_sweep(self):
        rng = np.random.default_rng(3)
        for kernel, stride, pad in itertools.product((1, 2, 3), (1, 2), (0, 1)):
            h = rng.integers(kernel, kernel + 5)
            w = rng.integers(kernel, kernel + 5)
            x = rng.standard_normal((2, 2, h, w))
            k = rng.standard_normal((2, 2, kernel, kernel))
            b = rng.standard_normal(2)
            geom = ops.ConvGeometry(kernel, kernel, stride, pad)
            np.testing.assert_allclose(
                ops.conv2d(x, k, b, geom),
                conv2d_loops(x, k, b, stride, pad), atol=1e-5)

    def test_channel_mismatch_names_shapes(self):
        x = np.zeros((1, 2, 4, 4), np.float32)
        k = np.zeros((1, 3, 2, 2), np.float32)
        with pytest.raises(ValueError, match=r"\(1, 2, 4, 4\).*\(1, 3, 2, 2\)"):
            ops.conv2d(x, k, np.zeros(1, np.float32), ops.ConvGeometry(2, 2))

    def test_empty_output_rejected(self):
        x = np.zeros((1, 1, 2, 2), np.float32)
        k = np.zeros((1, 1, 3, 3), np.float32)
        with pytest.raises(ValueError, match="empty output"):
            ops.conv2d(x, k, np.zeros(1, np.float32), ops.ConvGeometry(3, 3))

    def test_identity_kernel(self):
        # stride 1, 1x1 kernel of value 1 is the identity map
        rng = np.random.default_rng(1)
        x = rng.random((2, 1, 6, 6)).astype(np.float32)
        k = np.ones((1, 1, 1, 1), dtype=np.float32)
        y = ops.conv2d(x, k, np.zeros(1, np.float32), ops.ConvGeometry(1, 1))
        np.testing.assert_array_equal(y, x)

    def test_linearity(self):
        rng = np.random.default_rng(5)
        k = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
        b = np.zeros(3, np.float32)
        geom = ops.ConvGeometry(3, 3, 1, 1)
        x = rng.standard_normal((1, 2, 6, 6)).astype(np.float32)
        y = rng.standard_normal((1, 2, 6, 6)).astype(np.float32)
        a_coef, b_coef = 0.7, -1.3
        lhs = ops.conv2d(a_coef * x + b_coef * y, k, b, geom)
        rhs = a_coef * ops.conv2d(x, k, b, geom) + b_coef * ops.conv2d(y, k, b, geom)
        np.testing.assert_allclose(lhs, rhs, atol=1e-4)

    def test_output_shape_formula(self):
        rng = np.random.default_rng(9)
        for kernel, stride, pad in itertools.product(range(1, 6), range(1, 4),
                                                     range(0, 3)):
            h, w = 11, 13
            geom = ops.ConvGeometry(kernel, kernel, stride, pad)
            eh = (h + 2 * pad - kernel) // stride + 1
            ew = (w + 2 * pad - kernel) // stride + 1
            if eh < 1 or ew < 1:
                continue
            x = rng.standard_normal((1, 1, h, w)).astype(np.float32)
            k = rng.standard_normal((2, 1, kernel, kernel)).astype(np.float32)
            y = ops.conv2d(x, k, np.zeros(2, np.float32), geom)
            assert y.shape == (1, 2, eh, ew)


class TestConv2dGrad:
    def test_zero_grad_out(self):
        rng = np.random.default_rng(0)
        x = rng.random((1, 2, 4, 4))
        k = rng.random((2, 2, 3, 3))
        geom = ops.ConvGeometry(3, 3)
        gx, gk, gb = ops.conv2d_grad(x, k, geom, np.zeros((1, 2, 2, 2)))
        assert not gx.any() and not gk.any() and not gb.any()

    def test_hand_differentiated_1x1(self):
        # out = w * x elementwise over a 2x2 input with a 1x1 kernel
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        w = np.array([[[[1.5]]]])
        geom = ops.ConvGeometry(1, 1)
        grad_out = np.ones((1, 1, 2, 2))
        gx, gk, gb = ops.conv2d_grad(x, w, geom, grad_out)
        np.testing.assert_allclose(gk, [[[[10.0]]]])  # sum of inputs
        np.testing.assert_allclose(gx, np.full((1, 1, 2, 2), 1.5))
        np.testing.assert_allclose(gb, [4.0])

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_difference(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.random((2, 2, 5, 5))
        k = rng.standard_normal((3, 2, 3, 3)) * 0.5
        b = rng.standard_normal(3) * 0.1
        geom = ops.ConvGeometry(3, 3, stride=2, pad=1)
        w_loss = rng.standard_normal(ops.conv2d(x, k, b, geom).shape)

        gx, gk, gb = ops.conv2d_grad(x, k, geom, w_loss)
        check_grad(lambda v: float((ops.conv2d(v, k, b, geom) * w_loss).sum()),
                   x, gx)
        check_grad(lambda v: float((ops.conv2d(x, v, b, geom) * w_loss).sum()),
                   k, gk)
        check_grad(lambda v: float((ops.conv2d(x, k, v, geom) * w_loss).sum()),
                   b, gb)

    def test_bad_grad_shape(self):
        x = np.zeros((1, 1, 4, 4))
        k = np.zeros((1, 1, 3, 3))
        with pytest.raises(ValueError, match="does not match conv output"):
            ops.conv2d_grad(x, k, ops.ConvGeometry(3, 3), np.zeros((1, 1, 3, 3)))


class TestMatmulAffine:
    def test_identity_weight(self):
        x = np.arange(6, dtype=np.float32).reshape(2, 3)
        y = ops.matmul_affine(x, np.eye(3, dtype=np.float32),
                              np.zeros(3, np.float32))
        np.testing.assert_array_equal(y, x)

    def test_hand_example(self):
        y = ops.matmul_affine(np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]]),
                              np.array([5.0]))
        np.testing.assert_allclose(y, [[16.0]])

    def test_loop_oracle(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((4, 7))
        w = rng.standard_normal((3, 7))
        b = rng.standard_normal(3)
        np.testing.assert_allclose(ops.matmul_affine(x, w, b),
                                   matmul_loops(x, w, b), atol=1e-5)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="feature mismatch"):
            ops.matmul_affine(np.zeros((2, 3)), np.zeros((4, 5)), np.zeros(4))


class TestMatmulAffineGrad:
    def test_zero_grad(self):
        gx, gw, gb = ops.matmul_affine_grad(np.ones((2, 3)), np.ones((4, 3)),
                                            np.zeros((2, 4)))
        assert not gx.any() and not gw.any() and not gb.any()

    def test_single_element_chain_rule(self):
        x = np.array([[3.0]])
        w = np.array([[2.0]])
        g = np.array([[5.0]])
        gx, gw, gb = ops.matmul_affine_grad(x, w, g)
        np.testing.assert_allclose(gw, [[15.0]])  # grad_out * input
        np.testing.assert_allclose(gx, [[10.0]])
        np.testing.assert_allclose(gb, [5.0])

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_difference(self, seed):
        rng = np.random.default_rng(100 + seed)
        x = rng.random((3, 5))
        w = rng.standard_normal((4, 5)) * 0.5
        b = rng.standard_normal(4) * 0.1
        w_loss = rng.standard_normal((3, 4))
        gx, gw, gb = ops.matmul_affine_grad(x, w, w_loss)
        check_grad(lambda v: float((ops.matmul_affine(v, w, b) * w_loss).sum()),
                   x, gx)
        check_grad(lambda v: float((ops.matmul_affine(x, v, b) * w_loss).sum()),
                   w, gw)
        check_grad(lambda v: float((ops.matmul_affine(x, w, v) * w_loss).sum()),
                   b, gb)


def test_float32_storage_dtype():
    rng = np.random.default_rng(2)
    x = rng.random((1, 1, 4, 4)).astype(np.float32)
    k = rng.random((1, 1, 2, 2)).astype(np.float32)
    y = ops.conv2d(x, k, np.zeros(1, np.float32), ops.ConvGeometry(2, 2))
    assert y.dtype == np.float32
    assert np.isfinite(y).all()
    # passing float64 switches the whole computation to 64-bit accumulation
    y64 = ops.conv2d(x.astype(np.float64), k.astype(np.float64),
                     np.zeros(1), ops.ConvGeometry(2, 2))
    assert y64.dtype == np.float64
