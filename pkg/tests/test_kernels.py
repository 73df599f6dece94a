"""Kernel backends: conv against the naive loop oracle, pooling argmax
routing, pack/unpack round trips, fused batch-norm pieces. Each test runs
under every available backend."""

import numpy as np
import pytest

from crackscreen import kernels


def naive_conv(x, w, stride, pad):
    """Quadruple-loop cross-correlation oracle, sequential accumulation."""
    B, C, H, W = x.shape
    O, _, KH, KW = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    OH = (H + 2 * pad - KH) // stride + 1
    OW = (W + 2 * pad - KW) // stride + 1
    out = np.zeros((B, O, OH, OW), dtype=x.dtype)
    for b in range(B):
        for o in range(O):
            for oh in range(OH):
                for ow in range(OW):
                    acc = 0.0
                    for c in range(C):
                        for i in range(KH):
                            for j in range(KW):
                                acc += xp[b, c, oh * stride + i, ow * stride + j] \
                                    * w[o, c, i, j]
                    out[b, o, oh, ow] = acc
    return out


def run_conv(x, w, stride, pad):
    B, C, H, W = x.shape
    O, _, KH, KW = w.shape
    Hp, Wp = H + 2 * pad, W + 2 * pad
    OH, OW = (Hp - KH) // stride + 1, (Wp - KW) // stride + 1
    dims = (B, Hp, Wp, OH, OW, KH, KW, stride)
    xflat = kernels.pack_input(x, pad)
    out = kernels.conv_forward(xflat, np.ascontiguousarray(w.reshape(O, -1)), dims)
    return kernels.unpack_output(out, B, OH, OW), dims, xflat


@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("pad", [0, 1])
@pytest.mark.parametrize("k", [1, 3, 7])
def test_conv_forward_matches_naive_oracle(kernel_backend, stride, pad, k):
    """Agreement with the loop oracle, exact up to summation order (64-bit)."""
    rng = np.random.default_rng(k * 10 + stride + pad)
    H = W = 9 if k == 7 else 7
    x = rng.standard_normal((2, 3, H, W))
    w = rng.standard_normal((4, 3, k, k))
    out, _, _ = run_conv(x, w, stride, pad)
    ref = naive_conv(x, w, stride, pad)
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_conv_identity_1x1(kernel_backend):
    x = np.random.default_rng(0).standard_normal((2, 3, 5, 5)).astype(np.float32)
    w = np.eye(3, dtype=np.float32).reshape(3, 3, 1, 1)
    out, _, _ = run_conv(x, w, 1, 0)
    np.testing.assert_allclose(out, x, atol=1e-6)


def test_conv_ones_center(kernel_backend):
    x = np.ones((1, 1, 3, 3))
    w = np.ones((1, 1, 3, 3))
    out, _, _ = run_conv(x, w, 1, 0)
    assert out.shape == (1, 1, 1, 1) and out[0, 0, 0, 0] == 9.0


def test_conv_backward_against_loops(kernel_backend):
    """dW and dX match brute-force loop accumulation."""
    rng = np.random.default_rng(7)
    B, C, H, W, O, K, s, p = 2, 3, 6, 6, 4, 3, 1, 1
    x = rng.standard_normal((B, C, H, W))
    w = rng.standard_normal((O, C, K, K))
    out, dims, xflat = run_conv(x, w, s, p)
    dout = rng.standard_normal(out.shape)
    gflat = kernels.pack_input(dout, 0)
    dw = kernels.conv_backward_w(xflat, gflat, dims, (K, K)).reshape(w.shape)
    dxflat = kernels.conv_backward_x(gflat, w.reshape(O, -1), dims, C)
    dx = kernels.unpack_output(dxflat, B, H, W, p)
    # oracles
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    dw_ref = np.zeros_like(w)
    dxp_ref = np.zeros_like(xp)
    OH, OW = out.shape[2:]
    for b in range(B):
        for o in range(O):
            for oh in range(OH):
                for ow in range(OW):
                    g = dout[b, o, oh, ow]
                    for c in range(C):
                        for i in range(K):
                            for j in range(K):
                                dw_ref[o, c, i, j] += g * xp[b, c, oh + i, ow + j]
                                dxp_ref[b, c, oh + i, ow + j] += g * w[o, c, i, j]
    np.testing.assert_allclose(dw, dw_ref, rtol=1e-10)
    np.testing.assert_allclose(dx, dxp_ref[:, :, p:p + H, p:p + W], rtol=1e-10)


def test_pack_unpack_roundtrip(kernel_backend):
    x = np.random.default_rng(1).standard_normal((3, 4, 5, 6)).astype(np.float32)
    flat = kernels.pack_input(x, 2)
    back = kernels.unpack_output(flat, 3, 5, 6, 2)
    np.testing.assert_array_equal(back, x)


def test_maxpool_values_and_argmax(kernel_backend):
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    out, idx = kernels.maxpool_forward(x, (2, 2), 2, 0)
    assert out[0, 0, 0, 0] == 4.0
    dx = kernels.maxpool_backward(np.ones_like(out), idx, x.shape)
    np.testing.assert_array_equal(dx[0, 0], [[0, 0], [0, 1]])


def test_maxpool_tie_routes_to_lowest_index(kernel_backend):
    x = np.full((1, 1, 2, 2), 5.0)
    out, idx = kernels.maxpool_forward(x, (2, 2), 2, 0)
    dx = kernels.maxpool_backward(np.ones_like(out), idx, x.shape)
    np.testing.assert_array_equal(dx[0, 0], [[1, 0], [0, 0]])


def test_maxpool_padded_windows(kernel_backend):
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    out, idx = kernels.maxpool_forward(x, (3, 3), 2, 1)
    ref = np.array([[5.0, 7.0], [13.0, 15.0]])
    np.testing.assert_array_equal(out[0, 0], ref)
    dx = kernels.maxpool_backward(np.ones_like(out), idx, x.shape)
    assert dx.sum() == 4.0 and dx[0, 0, 3, 3] == 1.0


def test_bn_stats_and_backward(kernel_backend):
    rng = np.random.default_rng(3)
    x = rng.normal(2.0, 1.5, size=(2, 3, 4, 4))
    mean, var = kernels.bn_stats(x)
    np.testing.assert_allclose(mean, x.mean(axis=(0, 2, 3)), rtol=1e-12)
    np.testing.assert_allclose(var, x.var(axis=(0, 2, 3)), rtol=1e-10)
    g = rng.normal(size=x.shape)
    gamma = rng.normal(1.0, 0.1, size=3)
    ivar = 1.0 / np.sqrt(var + 1e-5)
    dx, dgamma, dbeta = kernels.bn_backward_train(x, g, mean, ivar, gamma)
    # composed-formula oracle
    xhat = (x - mean[None, :, None, None]) * ivar[None, :, None, None]
    dxhat = g * gamma[None, :, None, None]
    n = x.shape[0] * x.shape[2] * x.shape[3]
    s1 = dxhat.sum(axis=(0, 2, 3)) / n
    s2 = (dxhat * xhat).sum(axis=(0, 2, 3)) / n
    dx_ref = ivar[None, :, None, None] * (
        dxhat - s1[None, :, None, None] - xhat * s2[None, :, None, None])
    np.testing.assert_allclose(dx, dx_ref, rtol=1e-10)
    np.testing.assert_allclose(dgamma, (g * xhat).sum(axis=(0, 2, 3)), rtol=1e-10)
    np.testing.assert_allclose(dbeta, g.sum(axis=(0, 2, 3)), rtol=1e-12)


def test_backends_agree_on_conv(kernel_backend):
    """Whatever backend is active, results match the reference backend."""
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 4, 8, 8))
    w = rng.standard_normal((6, 4, 3, 3))
    out, _, _ = run_conv(x, w, 2, 1)
    prev = kernels.set_backend("numpy")
    try:
        ref, _, _ = run_conv(x, w, 2, 1)
    finally:
        kernels.set_backend(prev)
    np.testing.assert_allclose(out, ref, rtol=1e-12)
