"""Pure-numpy fallback kernels.

Same API and layout conventions as kernels.fast, with no numba or direct
BLAS binding. Used when CRACKSCREEN_KERNELS=numpy or when the fast path
cannot be imported. Correctness-first; the im2col buffer is materialized
in full, so this path is slower and hungrier on large batches.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def pack_input(x, pad):
    B, C, H, W = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    return np.ascontiguousarray(x.transpose(1, 0, 2, 3)).reshape(C, -1)


def unpack_output(flat, B, H, W, pad=0):
    C = flat.shape[0]
    Hp, Wp = H + 2 * pad, W + 2 * pad
    full = flat.reshape(C, B, Hp, Wp)
    if pad:
        full = full[:, :, pad:pad + H, pad:pad + W]
    return np.ascontiguousarray(full.transpose(1, 0, 2, 3))


def _im2col(xflat, dims):
    B, Hp, Wp, OH, OW, KH, KW, stride = dims
    C = xflat.shape[0]
    xp = xflat.reshape(C, B, Hp, Wp)
    win = sliding_window_view(xp, (KH, KW), axis=(2, 3))[:, :, ::stride, ::stride]
    # (C,B,OH,OW,KH,KW) -> (C,KH,KW,B,OH,OW) -> (C*KH*KW, B*OH*OW)
    return np.ascontiguousarray(win.transpose(0, 4, 5, 1, 2, 3)).reshape(C * KH * KW, -1)


def conv_forward(xflat, wmat, dims):
    return wmat @ _im2col(xflat, dims)


def conv_backward_w(xflat, doutflat, dims, kshape):
    return doutflat @ _im2col(xflat, dims).T


def conv_backward_x(doutflat, wmat, dims, C):
    B, Hp, Wp, OH, OW, KH, KW, stride = dims
    dcol = (wmat.T @ doutflat).reshape(C, KH, KW, B, OH, OW)
    dxp = np.zeros((C, B, Hp, Wp), dtype=doutflat.dtype)
    for i in range(KH):
        for j in range(KW):
            dxp[:, :, i:i + OH * stride:stride, j:j + OW * stride:stride] += dcol[:, i, j]
    return dxp.reshape(C, -1)


def relu_backward(g, out):
    return np.where(out > 0, g, 0).astype(g.dtype)


def bn_stats(x):
    mean = x.mean(axis=(0, 2, 3), dtype=np.float64)
    var = (x.astype(np.float64) ** 2).mean(axis=(0, 2, 3)) - mean ** 2
    return mean.astype(x.dtype), np.maximum(var, 0.0).astype(x.dtype)


def bn_scale_shift(x, scale, shift):
    return x * scale.astype(x.dtype)[None, :, None, None] \
        + shift.astype(x.dtype)[None, :, None, None]


def bn_backward_train(x, g, mean, ivar, gamma):
    n = x.shape[0] * x.shape[2] * x.shape[3]
    mean64 = mean.astype(np.float64)
    sg = g.sum(axis=(0, 2, 3), dtype=np.float64)
    sgx = (g.astype(np.float64) * (x.astype(np.float64) - mean64[None, :, None, None])
           ).sum(axis=(0, 2, 3))
    iv = ivar.astype(np.float64)
    gam = gamma.astype(np.float64)
    dgamma = sgx * iv
    dbeta = sg
    A = iv * gam
    Bc = -(iv * iv) * A * (sgx / n)
    Cc = -A * (sg / n) - Bc * mean64
    dx = (A.astype(g.dtype)[None, :, None, None] * g
          + Bc.astype(g.dtype)[None, :, None, None] * x
          + Cc.astype(g.dtype)[None, :, None, None])
    return dx, dgamma.astype(g.dtype), dbeta.astype(g.dtype)


def maxpool_forward(x, kernel, stride, pad):
    B, C, H, W = x.shape
    kh, kw = kernel
    if pad:
        xp = np.full((B, C, H + 2 * pad, W + 2 * pad), -np.inf, dtype=x.dtype)
        xp[:, :, pad:pad + H, pad:pad + W] = x
    else:
        xp = x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    B_, C_, OH, OW = win.shape[:4]
    flat = win.reshape(B, C, OH, OW, kh * kw)
    sub = np.argmax(flat, axis=-1)  # first occurrence = lowest linear index
    out = np.take_along_axis(flat, sub[..., None], axis=-1)[..., 0]
    # map window-local argmax back to unpadded input coordinates
    oh_grid, ow_grid = np.meshgrid(np.arange(OH), np.arange(OW), indexing="ij")
    h = oh_grid[None, None] * stride - pad + sub // kw
    w = ow_grid[None, None] * stride - pad + sub % kw
    idx = (h * W + w).astype(np.int64)
    return np.ascontiguousarray(out), idx


def maxpool_backward(dout, idx, xshape):
    B, C, H, W = xshape
    dx = np.zeros((B, C, H * W), dtype=dout.dtype)
    bi = np.arange(B)[:, None, None, None]
    ci = np.arange(C)[None, :, None, None]
    np.add.at(dx, (np.broadcast_to(bi, idx.shape), np.broadcast_to(ci, idx.shape), idx), dout)
    return dx.reshape(B, C, H, W)
