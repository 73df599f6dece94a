"""numba + BLAS convolution/pooling kernels.

Layout convention inside the conv kernels: activations are packed
channel-major, "CF" = (channels, batch*height*width), zero-padded. The
convolution itself is a blocked im2col feeding gemm; column blocks are
sized to stay cache-resident, so the 9x patch duplication never touches
DRAM. Weight matrices are the public (O, C, KH, KW) tensors reshaped to
(O, C*KH*KW); im2col rows use the same (c, i, j) order.
"""

import numpy as np
from numba import njit

from . import blas

# output pixels per gemm block; small enough that a col block stays cache-resident
_BLOCK_COLS = 2048


@njit(cache=True)
def _pack_pad(x, pad, out):
    # x (B,C,H,W) -> out (C, B*Hp*Wp) zero-padded
    B, C, H, W = x.shape
    Hp = H + 2 * pad
    Wp = W + 2 * pad
    for c in range(C):
        row = out[c]
        for b in range(B):
            base = b * Hp * Wp
            for h in range(H):
                dst = base + (h + pad) * Wp + pad
                src = x[b, c, h]
                for w in range(W):
                    row[dst + w] = src[w]


@njit(cache=True)
def _unpack_unpad(flat, B, H, W, pad, out):
    # flat (C, B*Hp*Wp) -> out (B,C,H,W), dropping the pad border
    C = flat.shape[0]
    Hp = H + 2 * pad
    Wp = W + 2 * pad
    for c in range(C):
        row = flat[c]
        for b in range(B):
            base = b * Hp * Wp
            for h in range(H):
                src = base + (h + pad) * Wp + pad
                dst = out[b, c, h]
                for w in range(W):
                    dst[w] = row[src + w]


@njit(cache=True)
def _build_col_block(xflat, colblk, Hp, Wp, OH, OW, KH, KW, stride, row0, nrows):
    # colblk (C*KH*KW, nrows*OW); output row r = (b, oh) flattened as b*OH+oh
    C = xflat.shape[0]
    for c in range(C):
        xr = xflat[c]
        for i in range(KH):
            for j in range(KW):
                krow = (c * KH + i) * KW + j
                dstrow = colblk[krow]
                for r in range(nrows):
                    b = (row0 + r) // OH
                    oh = (row0 + r) % OH
                    src = (b * Hp + oh * stride + i) * Wp + j
                    dst = r * OW
                    if stride == 1:
                        for ow in range(OW):
                            dstrow[dst + ow] = xr[src + ow]
                    else:
                        for ow in range(OW):
                            dstrow[dst + ow] = xr[src + ow * stride]


@njit(cache=True)
def _scatter_col_block(dcolblk, dxflat, Hp, Wp, OH, OW, KH, KW, stride, row0, nrows):
    # transpose of _build_col_block: accumulate column block back into dxflat
    C = dxflat.shape[0]
    for c in range(C):
        xr = dxflat[c]
        for i in range(KH):
            for j in range(KW):
                krow = (c * KH + i) * KW + j
                srcrow = dcolblk[krow]
                for r in range(nrows):
                    b = (row0 + r) // OH
                    oh = (row0 + r) % OH
                    dst = (b * Hp + oh * stride + i) * Wp + j
                    src = r * OW
                    if stride == 1:
                        for ow in range(OW):
                            xr[dst + ow] += srcrow[src + ow]
                    else:
                        for ow in range(OW):
                            xr[dst + ow * stride] += srcrow[src + ow]


def pack_input(x, pad):
    """(B,C,H,W) -> contiguous channel-major flat (C, B*Hp*Wp) with zero pad."""
    B, C, H, W = x.shape
    Hp, Wp = H + 2 * pad, W + 2 * pad
    out = np.zeros((C, B * Hp * Wp), dtype=x.dtype)
    _pack_pad(x, pad, out)
    return out


def unpack_output(flat, B, H, W, pad=0):
    """Inverse of pack_input: (C, B*Hp*Wp) -> (B,C,H,W) interior."""
    C = flat.shape[0]
    out = np.empty((B, C, H, W), dtype=flat.dtype)
    _unpack_unpad(flat, B, H, W, pad, out)
    return out


def _ptr(a, elem_offset=0):
    return a.ctypes.data + elem_offset * a.itemsize


def conv_forward(xflat, wmat, dims):
    """out (O, B*OH*OW) = conv of packed input with wmat (O, C*KH*KW)."""
    B, Hp, Wp, OH, OW, KH, KW, stride = dims
    C = xflat.shape[0]
    O, K = wmat.shape
    Nv = B * OH * OW
    out = np.empty((O, Nv), dtype=xflat.dtype)
    its = xflat.itemsize
    if KH == 1 and KW == 1 and stride == 1:
        # col is the input itself
        blas.gemm(its, b"N", b"N", Nv, O, C, 1.0, _ptr(xflat), Nv,
                  _ptr(wmat), C, 0.0, _ptr(out), Nv)
        return out
    rows_pb = max(1, _BLOCK_COLS // OW)
    total_rows = B * OH
    colblk = np.empty((K, rows_pb * OW), dtype=xflat.dtype)
    for row0 in range(0, total_rows, rows_pb):
        nrows = min(rows_pb, total_rows - row0)
        mb = nrows * OW
        _build_col_block(xflat, colblk, Hp, Wp, OH, OW, KH, KW, stride, row0, nrows)
        # column-major: out^T(mb,O) = col^T(mb,K) @ wmat^T(K,O)
        blas.gemm(its, b"N", b"N", mb, O, K, 1.0, _ptr(colblk), rows_pb * OW,
                  _ptr(wmat), K, 0.0, _ptr(out, row0 * OW), Nv)
    return out


def conv_backward_w(xflat, doutflat, dims, kshape):
    """dW (O, C*KH*KW) from packed input and packed output grad."""
    B, Hp, Wp, OH, OW, KH, KW, stride = dims
    C = xflat.shape[0]
    O = doutflat.shape[0]
    K = C * KH * KW
    Nv = B * OH * OW
    dw = np.zeros((O, K), dtype=xflat.dtype)
    its = xflat.itemsize
    if KH == 1 and KW == 1 and stride == 1:
        blas.gemm(its, b"T", b"N", K, O, Nv, 1.0, _ptr(xflat), Nv,
                  _ptr(doutflat), Nv, 0.0, _ptr(dw), K)
        return dw
    rows_pb = max(1, _BLOCK_COLS // OW)
    total_rows = B * OH
    colblk = np.empty((K, rows_pb * OW), dtype=xflat.dtype)
    for row0 in range(0, total_rows, rows_pb):
        nrows = min(rows_pb, total_rows - row0)
        mb = nrows * OW
        _build_col_block(xflat, colblk, Hp, Wp, OH, OW, KH, KW, stride, row0, nrows)
        # column-major: dW^T(K,O) += col(K,mb)[via T] @ dout^T(mb,O)
        blas.gemm(its, b"T", b"N", K, O, mb, 1.0, _ptr(colblk), rows_pb * OW,
                  _ptr(doutflat, row0 * OW), Nv, 1.0, _ptr(dw), K)
    return dw


def conv_backward_x(doutflat, wmat, dims, C):
    """dX packed (C, B*Hp*Wp) from packed output grad and weights.

    Stride-1 convolutions route through conv_forward on the flipped,
    transposed kernel (a full correlation), which keeps the gemm shapes in
    the well-conditioned k = C*KH*KW regime; strided convolutions fall back
    to the col2im scatter.
    """
    B, Hp, Wp, OH, OW, KH, KW, stride = dims
    O, K = wmat.shape
    Nv = B * OH * OW
    its = doutflat.itemsize
    if KH == 1 and KW == 1 and stride == 1:
        dxflat = np.zeros((C, B * Hp * Wp), dtype=doutflat.dtype)
        blas.gemm(its, b"N", b"T", Nv, C, O, 1.0, _ptr(doutflat), Nv,
                  _ptr(wmat), C, 0.0, _ptr(dxflat), Nv)
        return dxflat
    if stride == 1:
        # dxp = full-corr(dout, flip(w)^T); pad dout by k-1 on the padded grid
        wflip = np.ascontiguousarray(
            wmat.reshape(O, C, KH, KW)[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        ).reshape(C, O * KH * KW)
        doutp = np.zeros((O, B * (OH + 2 * (KH - 1)) * (OW + 2 * (KW - 1))),
                         dtype=doutflat.dtype)
        _pack_pad(doutflat.reshape(O, B, OH, OW).transpose(1, 0, 2, 3), KH - 1, doutp)
        dims2 = (B, OH + 2 * (KH - 1), OW + 2 * (KW - 1), Hp, Wp, KH, KW, 1)
        return conv_forward(doutp, wflip, dims2)
    dxflat = np.zeros((C, B * Hp * Wp), dtype=doutflat.dtype)
    rows_pb = max(1, _BLOCK_COLS // OW)
    total_rows = B * OH
    dcolblk = np.empty((K, rows_pb * OW), dtype=doutflat.dtype)
    for row0 in range(0, total_rows, rows_pb):
        nrows = min(rows_pb, total_rows - row0)
        mb = nrows * OW
        # column-major: dcol^T(mb,K) = dout^T(mb,O) @ wmat(O,K)[via T is (K,O)^T]
        blas.gemm(its, b"N", b"T", mb, K, O, 1.0, _ptr(doutflat, row0 * OW), Nv,
                  _ptr(wmat), K, 0.0, _ptr(dcolblk), rows_pb * OW)
        _scatter_col_block(dcolblk, dxflat, Hp, Wp, OH, OW, KH, KW, stride, row0, nrows)
    return dxflat


@njit(cache=True)
def _bn_stats(x):
    # biased per-channel mean/var over (B, H, W); float64 accumulation
    B, C, H, W = x.shape
    mean = np.zeros(C, dtype=np.float64)
    sq = np.zeros(C, dtype=np.float64)
    for b in range(B):
        for c in range(C):
            plane = x[b, c]
            s = 0.0
            s2 = 0.0
            for h in range(H):
                row = plane[h]
                for w in range(W):
                    v = np.float64(row[w])
                    s += v
                    s2 += v * v
            mean[c] += s
            sq[c] += s2
    n = B * H * W
    mean /= n
    var = sq / n - mean * mean
    return mean, np.maximum(var, 0.0)


@njit(cache=True)
def _bn_scale_shift(x, scale, shift, out):
    B, C, H, W = x.shape
    for b in range(B):
        for c in range(C):
            sc = scale[c]
            sh = shift[c]
            src = x[b, c]
            dst = out[b, c]
            for h in range(H):
                srow = src[h]
                drow = dst[h]
                for w in range(W):
                    drow[w] = srow[w] * sc + sh


@njit(cache=True)
def _bn_backward_sums(x, g, mean):
    # per-channel sums of g and g * (x - mean); float64 accumulation
    B, C, H, W = x.shape
    sg = np.zeros(C, dtype=np.float64)
    sgx = np.zeros(C, dtype=np.float64)
    for b in range(B):
        for c in range(C):
            mu = mean[c]
            xp = x[b, c]
            gp = g[b, c]
            a = 0.0
            bb = 0.0
            for h in range(H):
                xrow = xp[h]
                grow = gp[h]
                for w in range(W):
                    gv = np.float64(grow[w])
                    a += gv
                    bb += gv * (np.float64(xrow[w]) - mu)
            sg[c] += a
            sgx[c] += bb
    return sg, sgx


@njit(cache=True)
def _bn_dx(x, g, A, Bc, Cc, out):
    # dx = A[c] * g + Bc[c] * x + Cc[c], fused
    B, C, H, W = x.shape
    for b in range(B):
        for c in range(C):
            a = A[c]
            bcoef = Bc[c]
            ccoef = Cc[c]
            xp = x[b, c]
            gp = g[b, c]
            dst = out[b, c]
            for h in range(H):
                xrow = xp[h]
                grow = gp[h]
                drow = dst[h]
                for w in range(W):
                    drow[w] = a * grow[w] + bcoef * xrow[w] + ccoef


def bn_stats(x):
    """Biased per-channel batch mean/variance of an NCHW tensor."""
    mean, var = _bn_stats(x)
    return mean.astype(x.dtype), var.astype(x.dtype)


def bn_scale_shift(x, scale, shift):
    """out = x * scale[c] + shift[c]; the normalized-affine fused form."""
    out = np.empty_like(x)
    _bn_scale_shift(x, scale.astype(x.dtype), shift.astype(x.dtype), out)
    return out


@njit(cache=True)
def _relu_bwd(g, out, dx):
    for i in range(g.size):
        dx[i] = g[i] if out[i] > 0 else 0.0


def relu_backward(g, out):
    """dx = g where the forward output was positive, else 0; single pass."""
    g = np.ascontiguousarray(g)
    dx = np.empty_like(g)
    _relu_bwd(g.reshape(-1), np.ascontiguousarray(out).reshape(-1), dx.reshape(-1))
    return dx


def bn_backward_train(x, g, mean, ivar, gamma):
    """Fused train-mode batch-norm backward; returns (dx, dgamma, dbeta)."""
    n = x.shape[0] * x.shape[2] * x.shape[3]
    sg, sgx = _bn_backward_sums(x, g, mean.astype(np.float64))
    iv = ivar.astype(np.float64)
    gam = gamma.astype(np.float64)
    dgamma = sgx * iv
    dbeta = sg
    A = iv * gam
    Bc = -(iv * iv) * A * (sgx / n)
    Cc = -A * (sg / n) - Bc * mean.astype(np.float64)
    dx = np.empty_like(g)
    _bn_dx(x, g, A.astype(g.dtype), Bc.astype(g.dtype), Cc.astype(g.dtype), dx)
    return dx, dgamma.astype(g.dtype), dbeta.astype(g.dtype)


@njit(cache=True)
def _maxpool_fwd(x, kh, kw, stride, pad, out, idx):
    B, C, H, W = x.shape
    OH = out.shape[2]
    OW = out.shape[3]
    for b in range(B):
        for c in range(C):
            plane = x[b, c]
            for oh in range(OH):
                h0 = oh * stride - pad
                for ow in range(OW):
                    w0 = ow * stride - pad
                    best = -np.inf
                    besti = -1
                    for i in range(kh):
                        h = h0 + i
                        if h < 0 or h >= H:
                            continue
                        for j in range(kw):
                            w = w0 + j
                            if w < 0 or w >= W:
                                continue
                            v = plane[h, w]
                            if v > best:
                                best = v
                                besti = h * W + w
                    out[b, c, oh, ow] = best
                    idx[b, c, oh, ow] = besti


@njit(cache=True)
def _maxpool_bwd(dout, idx, dx):
    B, C, OH, OW = dout.shape
    W = dx.shape[3]
    for b in range(B):
        for c in range(C):
            plane = dx[b, c]
            for oh in range(OH):
                for ow in range(OW):
                    k = idx[b, c, oh, ow]
                    if k >= 0:
                        plane[k // W, k % W] += dout[b, c, oh, ow]


def maxpool_forward(x, kernel, stride, pad):
    """Windowed max with argmax bookkeeping; ties go to the lowest index."""
    B, C, H, W = x.shape
    kh, kw = kernel
    OH = (H + 2 * pad - kh) // stride + 1
    OW = (W + 2 * pad - kw) // stride + 1
    out = np.empty((B, C, OH, OW), dtype=x.dtype)
    idx = np.empty((B, C, OH, OW), dtype=np.int64)
    _maxpool_fwd(x, kh, kw, stride, pad, out, idx)
    return out, idx


def maxpool_backward(dout, idx, xshape):
    dx = np.zeros(xshape, dtype=dout.dtype)
    _maxpool_bwd(dout, idx, dx)
    return dx
