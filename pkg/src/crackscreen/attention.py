"""Convolutional block attention: channel gating followed by spatial gating.

Channel attention pools the feature map globally (average and max), runs
both descriptors through a shared bottleneck MLP, sums, and squashes with
a sigmoid. Spatial attention aggregates across channels (mean and max),
concatenates, and reduces to a single map with a large-kernel convolution.
Both gates multiply the feature map elementwise, so attention only ever
attenuates.
"""

import numpy as np

from .layers import Conv2d, Linear
from .tensor import concat, relu, sigmoid, tmax, tmean

__all__ = ["ChannelAttention", "SpatialAttention", "CBAM"]


class ChannelAttention:
    """Per-channel gate from pooled descriptors through a shared C -> C/r -> C MLP."""

    def __init__(self, channels, ratio=16, rng=None, dtype=np.float32):
        if channels % ratio != 0:
            raise ValueError(f"channels {channels} not divisible by reduction ratio {ratio}")
        self.channels = channels
        self.ratio = ratio
        self.fc1 = Linear(channels, channels // ratio, bias=False, rng=rng, dtype=dtype)
        self.fc2 = Linear(channels // ratio, channels, bias=False, rng=rng, dtype=dtype)

    def gate(self, x):
        """The (B, C) channel weight vector, entries in (0, 1)."""
        if x.shape[1] != self.channels:
            raise ValueError(f"input has {x.shape[1]} channels, expected {self.channels}")
        avg = tmean(x, axes=(2, 3))
        mx = tmax(x, axes=(2, 3))
        a = self.fc2.forward(relu(self.fc1.forward(avg)))
        m = self.fc2.forward(relu(self.fc1.forward(mx)))
        return sigmoid(a + m)

    def forward(self, x):
        B, C = x.shape[:2]
        return x * self.gate(x).reshape((B, C, 1, 1))

    def params(self):
        return [("fc1.weight", self.fc1.weight), ("fc2.weight", self.fc2.weight)]


class SpatialAttention:
    """Per-position gate from channel mean/max through a 7x7 convolution."""

    def __init__(self, kernel=7, rng=None, dtype=np.float32):
        self.conv = Conv2d(2, 1, kernel, stride=1, padding=kernel // 2, bias=True,
                           rng=rng, dtype=dtype)

    def gate(self, x):
        """The (B, 1, H, W) spatial weight map, entries in (0, 1)."""
        mean_c = tmean(x, axes=(1,), keepdims=True)
        max_c = tmax(x, axes=(1,), keepdims=True)
        return sigmoid(self.conv.forward(concat([mean_c, max_c], axis=1)))

    def forward(self, x):
        return x * self.gate(x)

    def params(self):
        return [(f"conv.{n}", t) for n, t in self.conv.params()]


class CBAM:
    """Channel attention first, then spatial attention, both multiplicative."""

    def __init__(self, channels, ratio=16, rng=None, dtype=np.float32):
        self.channel = ChannelAttention(channels, ratio, rng=rng, dtype=dtype)
        self.spatial = SpatialAttention(rng=rng, dtype=dtype)

    def forward(self, x):
        return self.spatial.forward(self.channel.forward(x))

    def params(self):
        return ([(f"channel.{n}", t) for n, t in self.channel.params()]
                + [(f"spatial.{n}", t) for n, t in self.spatial.params()])
