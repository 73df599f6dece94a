"""Neural-network layers: convolution, batch norm, pooling, linear, dropout,
and the residual block used by the backbone.

Layers hold their parameters as Tensors and are stateless with respect to
train/eval mode: the mode is an argument to forward. Only batch norm has a
forward side effect (running-stat updates, training mode only), so
eval-mode forward of every layer is a pure function.
"""

import numpy as np

from . import kernels
from .tensor import Tensor, make_node, tmean, relu

__all__ = [
    "conv2d", "max_pool2d", "global_avg_pool", "pool", "dropout",
    "Conv2d", "BatchNorm2d", "MaxPool2d", "Linear", "Dropout", "ResidualBlock",
]


def conv2d(x, weight, stride=1, padding=0):
    """2D cross-correlation (no kernel flip) of NCHW input with OIHW weights."""
    B, C, H, W = x.shape
    O, CI, KH, KW = weight.shape
    if C != CI:
        raise ValueError(f"input has {C} channels, conv expects {CI}")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if Hp < KH or Wp < KW:
        raise ValueError(f"padded input {Hp}x{Wp} smaller than kernel {KH}x{KW}")
    OH = (Hp - KH) // stride + 1
    OW = (Wp - KW) // stride + 1
    dims = (B, Hp, Wp, OH, OW, KH, KW, stride)
    xflat = kernels.pack_input(x.data, padding)
    wmat = np.ascontiguousarray(weight.data.reshape(O, -1))
    outflat = kernels.conv_forward(xflat, wmat, dims)
    out = kernels.unpack_output(outflat, B, OH, OW)

    def backward(g):
        gflat = kernels.pack_input(g, 0)
        grads = []
        if weight.requires_grad:
            dw = kernels.conv_backward_w(xflat, gflat, dims, (KH, KW))
            grads.append((weight, dw.reshape(weight.shape)))
        if x.requires_grad:
            dxflat = kernels.conv_backward_x(gflat, wmat, dims, C)
            grads.append((x, kernels.unpack_output(dxflat, B, H, W, padding)))
        return grads

    return make_node(out, (x, weight), backward)


def max_pool2d(x, window, stride=None, padding=0):
    """Windowed max pooling with argmax-routed backward (ties: lowest index)."""
    if isinstance(window, int):
        window = (window, window)
    stride = stride or window[0]
    B, C, H, W = x.shape
    if window[0] > H + 2 * padding or window[1] > W + 2 * padding:
        raise ValueError(f"pool window {window} larger than padded input {H}x{W}")
    out, idx = kernels.maxpool_forward(x.data, window, stride, padding)

    def backward(g):
        return ((x, kernels.maxpool_backward(g, idx, x.shape)),)

    return make_node(out, (x,), backward)


def global_avg_pool(x):
    """(B,C,H,W) -> (B,C,1,1) spatial means."""
    return tmean(x, axes=(2, 3), keepdims=True)


def pool(kind, x, window=None, stride=None, padding=0):
    if kind == "max":
        return max_pool2d(x, window, stride, padding)
    if kind == "global_avg":
        return global_avg_pool(x)
    raise ValueError(f"unknown pool kind {kind!r}")


def dropout(x, p, training, rng=None):
    """Inverted dropout: train-time zeroing with 1/(1-p) rescale; eval identity."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / np.asarray(1.0 - p, x.data.dtype)
    return x * Tensor(keep)


class Conv2d:
    """Convolution layer; bias-free by default (backbone convs precede BN)."""

    def __init__(self, in_channels, out_channels, kernel, stride=1, padding=0,
                 bias=False, rng=None, dtype=np.float32):
        if isinstance(kernel, int):
            kernel = (kernel, kernel)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        rng = rng or np.random.default_rng()
        fan_out = out_channels * kernel[0] * kernel[1]
        std = np.sqrt(2.0 / fan_out)
        w = rng.normal(0.0, std, size=(out_channels, in_channels, *kernel))
        self.weight = Tensor(w.astype(dtype), requires_grad=True)
        self.bias = None
        if bias:
            self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)

    def forward(self, x):
        out = conv2d(x, self.weight, self.stride, self.padding)
        if self.bias is not None:
            out = out + self.bias.reshape((1, self.out_channels, 1, 1))
        return out

    def params(self):
        ps = [("weight", self.weight)]
        if self.bias is not None:
            ps.append(("bias", self.bias))
        return ps

    def out_hw(self, h, w):
        kh, kw = self.kernel
        return ((h + 2 * self.padding - kh) // self.stride + 1,
                (w + 2 * self.padding - kw) // self.stride + 1)


class BatchNorm2d:
    """Per-channel batch normalization with running statistics.

    Training mode normalizes with biased batch statistics and updates
    running stats as running = (1-momentum)*running + momentum*batch.
    Eval mode depends only on the running stats.
    """

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x, training=False):
        B, C, H, W = x.shape
        if C != self.channels:
            raise ValueError(f"input has {C} channels, batch norm expects {self.channels}")
        gamma, beta = self.gamma, self.beta
        dt = x.data.dtype
        if training:
            if B * H * W == 1:
                raise ValueError("batch variance is degenerate: a single value per channel")
            mean, var = kernels.bn_stats(x.data)
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean + m * mean.astype(
                self.running_mean.dtype))
            self.running_var = ((1 - m) * self.running_var + m * var.astype(
                self.running_var.dtype))
        else:
            mean = self.running_mean.astype(dt)
            var = self.running_var.astype(dt)
        ivar = (1.0 / np.sqrt(var.astype(np.float64) + self.eps)).astype(dt)
        scale = gamma.data * ivar
        shift = beta.data - mean * scale
        out = kernels.bn_scale_shift(x.data, scale, shift)

        def backward(g):
            grads = []
            if training:
                dx, dgamma, dbeta = kernels.bn_backward_train(
                    x.data, g, mean, ivar, gamma.data)
            else:
                xhat_sums = ((g * x.data).sum(axis=(0, 2, 3)) -
                             mean * g.sum(axis=(0, 2, 3))) * ivar
                dgamma = xhat_sums.astype(dt)
                dbeta = g.sum(axis=(0, 2, 3))
                dx = g * (gamma.data * ivar)[None, :, None, None]
            if gamma.requires_grad:
                grads.append((gamma, dgamma))
            if beta.requires_grad:
                grads.append((beta, dbeta))
            if x.requires_grad:
                grads.append((x, dx))
            return grads

        return make_node(out, (x, gamma, beta), backward)

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def set_buffers(self, mean, var):
        self.running_mean = mean.astype(self.running_mean.dtype)
        self.running_var = var.astype(self.running_var.dtype)


class MaxPool2d:
    def __init__(self, window, stride=None, padding=0):
        self.window = (window, window) if isinstance(window, int) else window
        self.stride = stride or self.window[0]
        self.padding = padding

    def forward(self, x):
        return max_pool2d(x, self.window, self.stride, self.padding)

    def params(self):
        return []

    def out_hw(self, h, w):
        return ((h + 2 * self.padding - self.window[0]) // self.stride + 1,
                (w + 2 * self.padding - self.window[1]) // self.stride + 1)


class Linear:
    """Affine map (B, in) -> (B, out); weights uniform +-1/sqrt(fan_in)."""

    def __init__(self, in_features, out_features, bias=True, rng=None, dtype=np.float32):
        self.in_features = in_features
        self.out_features = out_features
        rng = rng or np.random.default_rng()
        bound = 1.0 / np.sqrt(in_features)
        w = rng.uniform(-bound, bound, size=(out_features, in_features))
        self.weight = Tensor(w.astype(dtype), requires_grad=True)
        self.bias = None
        if bias:
            b = rng.uniform(-bound, bound, size=out_features)
            self.bias = Tensor(b.astype(dtype), requires_grad=True)

    def forward(self, x):
        if x.shape[-1] != self.in_features:
            raise ValueError(f"input features {x.shape[-1]} != {self.in_features}")
        out = x @ self.weight.transpose((1, 0))
        if self.bias is not None:
            out = out + self.bias
        return out

    def params(self):
        ps = [("weight", self.weight)]
        if self.bias is not None:
            ps.append(("bias", self.bias))
        return ps


class Dropout:
    def __init__(self, p):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p

    def forward(self, x, training=False, rng=None):
        return dropout(x, self.p, training, rng)

    def params(self):
        return []


class ResidualBlock:
    """Two 3x3 conv+BN stages plus a shortcut; relu(branch(x) + shortcut(x)).

    The shortcut is a 1x1 projection conv+BN when the block changes channel
    count or strides, identity otherwise.
    """

    def __init__(self, in_channels, out_channels, stride=1, rng=None, dtype=np.float32):
        self.conv1 = Conv2d(in_channels, out_channels, 3, stride, 1, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(out_channels, dtype=dtype)
        self.conv2 = Conv2d(out_channels, out_channels, 3, 1, 1, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(out_channels, dtype=dtype)
        self.projection = None
        self.bn_proj = None
        if stride != 1 or in_channels != out_channels:
            self.projection = Conv2d(in_channels, out_channels, 1, stride, 0, rng=rng, dtype=dtype)
            self.bn_proj = BatchNorm2d(out_channels, dtype=dtype)

    def forward(self, x, training=False):
        h = relu(self.bn1.forward(self.conv1.forward(x), training))
        h = self.bn2.forward(self.conv2.forward(h), training)
        if self.projection is not None:
            shortcut = self.bn_proj.forward(self.projection.forward(x), training)
        else:
            shortcut = x
        return relu(h + shortcut)

    def params(self):
        named = []
        parts = [("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2), ("bn2", self.bn2)]
        if self.projection is not None:
            parts += [("proj", self.projection), ("bn_proj", self.bn_proj)]
        for prefix, layer in parts:
            named += [(f"{prefix}.{n}", t) for n, t in layer.params()]
        return named

    def buffers(self):
        named = [(f"bn1.{n}", a) for n, a in self.bn1.buffers()]
        named += [(f"bn2.{n}", a) for n, a in self.bn2.buffers()]
        if self.bn_proj is not None:
            named += [(f"bn_proj.{n}", a) for n, a in self.bn_proj.buffers()]
        return named
