"""Declarative model architecture: presets, builder, and cost accounting.

An ArchConfig describes the network (stem, residual stages, optional
attention block, classifier head); build_model instantiates it, and
count_params/count_macs derive exact parameter and multiply-accumulate
counts from the config alone, without instantiating anything.

Counting conventions (stated so the numbers are reproducible):
  conv MACs   = output_elems * in_channels * kh * kw (+ output_elems if biased)
  linear MACs = in * out (+ out if biased)
  batch norm  = 1 MAC per element (eval-mode scale+shift)
  relu / residual add / elementwise gate = 1 op per element
  pooling     = 1 op per window element per output element
"""

from dataclasses import dataclass, field, asdict

import numpy as np

from .attention import CBAM
from .layers import BatchNorm2d, Conv2d, Dropout, Linear, MaxPool2d, ResidualBlock
from .tensor import relu

__all__ = ["ArchConfig", "ModelStats", "Model", "build_model", "count_params",
           "count_macs", "preset_names", "get_preset"]


@dataclass
class ArchConfig:
    name: str
    stem_kernel: int
    stem_channels: int
    stem_stride: int
    stem_pad: int
    stem_pool: tuple | None          # (window, stride, pad) or None
    stages: list                     # [(blocks, channels, first_stride), ...]
    cbam: bool
    cbam_ratio: int = 16
    head_dropout: float = 0.2
    num_classes: int = 2
    input_hw: int = 224
    in_channels: int = 3

    def validate(self):
        if self.cbam and self.stages[-1][1] % self.cbam_ratio != 0:
            raise ValueError(
                f"final stage channels {self.stages[-1][1]} not divisible by "
                f"attention reduction ratio {self.cbam_ratio}")
        for blocks, channels, stride in self.stages:
            if blocks < 1 or channels < 1 or stride not in (1, 2):
                raise ValueError(f"bad stage spec {(blocks, channels, stride)}")
        return self

    def to_dict(self):
        d = asdict(self)
        d["stem_pool"] = list(self.stem_pool) if self.stem_pool else None
        d["stages"] = [list(s) for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("stem_pool"):
            d["stem_pool"] = tuple(d["stem_pool"])
        d["stages"] = [tuple(s) for s in d["stages"]]
        return cls(**d).validate()


def _resnet18(cbam):
    return ArchConfig(
        name="resnet18-cbam" if cbam else "resnet18",
        stem_kernel=7, stem_channels=64, stem_stride=2, stem_pad=3,
        stem_pool=(3, 2, 1),
        stages=[(2, 64, 1), (2, 128, 2), (2, 256, 2), (2, 512, 2)],
        cbam=cbam, input_hw=224)


def _tiny(cbam):
    return ArchConfig(
        name="tiny-cbam" if cbam else "tiny",
        stem_kernel=3, stem_channels=16, stem_stride=1, stem_pad=1,
        stem_pool=None,
        stages=[(1, 16, 1), (1, 32, 2), (1, 64, 2), (1, 128, 2)],
        cbam=cbam, input_hw=64)


_PRESETS = {
    "resnet18": lambda: _resnet18(False),
    "resnet18-cbam": lambda: _resnet18(True),
    "tiny": lambda: _tiny(False),
    "tiny-cbam": lambda: _tiny(True),
}


def preset_names():
    return sorted(_PRESETS)


def get_preset(name):
    try:
        return _PRESETS[name]().validate()
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; have {preset_names()}") from None


@dataclass
class ModelStats:
    """Exact parameter and MAC totals with a backbone/attention/head split."""
    config_name: str
    input_hw: int
    params: dict = field(default_factory=dict)   # component -> int
    macs: dict = field(default_factory=dict)     # component -> int

    @property
    def total_params(self):
        return sum(self.params.values())

    @property
    def total_macs(self):
        return sum(self.macs.values())

    def to_dict(self):
        return {
            "config": self.config_name,
            "input_hw": self.input_hw,
            "total_params": self.total_params,
            "total_macs": self.total_macs,
            "params": dict(self.params),
            "macs": dict(self.macs),
            "params_millions": round(self.total_params / 1e6, 2),
            "macs_billions": round(self.total_macs / 1e9, 2),
        }


class Model:
    """Composed forward pipeline: stem -> stages -> [CBAM] -> pooled head."""

    def __init__(self, config: ArchConfig, rng=None, dtype=np.float32):
        config.validate()
        self.config = config
        rng = rng or np.random.default_rng()
        c = config
        self.stem_conv = Conv2d(c.in_channels, c.stem_channels, c.stem_kernel,
                                c.stem_stride, c.stem_pad, rng=rng, dtype=dtype)
        self.stem_bn = BatchNorm2d(c.stem_channels, dtype=dtype)
        self.stem_pool = MaxPool2d(c.stem_pool[0], c.stem_pool[1], c.stem_pool[2]) \
            if c.stem_pool else None
        self.stages = []
        in_ch = c.stem_channels
        for blocks, channels, stride in c.stages:
            stage = []
            for bi in range(blocks):
                stage.append(ResidualBlock(in_ch, channels, stride if bi == 0 else 1,
                                           rng=rng, dtype=dtype))
                in_ch = channels
            self.stages.append(stage)
        self.feature_channels = in_ch
        self.cbam = CBAM(in_ch, c.cbam_ratio, rng=rng, dtype=dtype) if c.cbam else None
        self.dropout = Dropout(c.head_dropout)
        self.fc = Linear(in_ch, c.num_classes, bias=True, rng=rng, dtype=dtype)

    def forward_features(self, x, training=False):
        """Pre-pool feature map (post-attention when attention is enabled)."""
        h = relu(self.stem_bn.forward(self.stem_conv.forward(x), training))
        if self.stem_pool is not None:
            h = self.stem_pool.forward(h)
        for stage in self.stages:
            for block in stage:
                h = block.forward(h, training)
        if self.cbam is not None:
            h = self.cbam.forward(h)
        return h

    def forward(self, x, training=False, rng=None):
        f = self.forward_features(x, training)
        return self.head(f, training, rng)

    def head(self, features, training=False, rng=None):
        B = features.shape[0]
        pooled = features.mean(axes=(2, 3)).reshape((B, self.feature_channels))
        pooled = self.dropout.forward(pooled, training, rng)
        return self.fc.forward(pooled)

    # -- parameter / state access ---------------------------------------------

    def params(self):
        named = [(f"stem.conv.{n}", t) for n, t in self.stem_conv.params()]
        named += [(f"stem.bn.{n}", t) for n, t in self.stem_bn.params()]
        for si, stage in enumerate(self.stages):
            for bi, block in enumerate(stage):
                named += [(f"stage{si}.block{bi}.{n}", t) for n, t in block.params()]
        if self.cbam is not None:
            named += [(f"cbam.{n}", t) for n, t in self.cbam.params()]
        named += [(f"head.fc.{n}", t) for n, t in self.fc.params()]
        return named

    def bn_layers(self):
        named = [("stem.bn", self.stem_bn)]
        for si, stage in enumerate(self.stages):
            for bi, block in enumerate(stage):
                named.append((f"stage{si}.block{bi}.bn1", block.bn1))
                named.append((f"stage{si}.block{bi}.bn2", block.bn2))
                if block.bn_proj is not None:
                    named.append((f"stage{si}.block{bi}.bn_proj", block.bn_proj))
        return named

    def state(self):
        """Ordered (name, array) pairs: parameters then batch-norm buffers."""
        entries = [(n, t.data) for n, t in self.params()]
        for n, bn in self.bn_layers():
            entries.append((f"{n}.running_mean", bn.running_mean))
            entries.append((f"{n}.running_var", bn.running_var))
        return entries

    def load_state(self, arrays):
        """Assign parameters/buffers from a {name: array} mapping in place."""
        param_map = dict(self.params())
        bn_map = dict(self.bn_layers())
        for name, arr in arrays.items():
            if name in param_map:
                t = param_map[name]
                if t.data.shape != arr.shape:
                    raise ValueError(f"shape mismatch for {name}: "
                                     f"{t.data.shape} vs {arr.shape}")
                t.data = arr.astype(t.data.dtype).reshape(t.data.shape)
            elif name.endswith(".running_mean"):
                bn_map[name[:-len(".running_mean")]].running_mean = arr.copy()
            elif name.endswith(".running_var"):
                bn_map[name[:-len(".running_var")]].running_var = arr.copy()
            else:
                raise KeyError(f"unknown state entry {name!r}")

    def zero_grad(self):
        for _, t in self.params():
            t.grad = None


def build_model(config, rng=None, dtype=np.float32):
    if isinstance(config, str):
        config = get_preset(config)
    return Model(config, rng=rng, dtype=dtype)


# -- analytic cost accounting ------------------------------------------------------


def _conv_shape(h, w, k, stride, pad):
    return (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1


def count_params(config) -> ModelStats:
    """Exact trainable-parameter count from shape arithmetic alone."""
    if isinstance(config, str):
        config = get_preset(config)
    config.validate()
    c = config
    backbone = c.stem_channels * c.in_channels * c.stem_kernel ** 2 + 2 * c.stem_channels
    in_ch = c.stem_channels
    for blocks, channels, stride in c.stages:
        for bi in range(blocks):
            s = stride if bi == 0 else 1
            backbone += channels * in_ch * 9 + 2 * channels      # conv1 + bn1
            backbone += channels * channels * 9 + 2 * channels   # conv2 + bn2
            if s != 1 or in_ch != channels:
                backbone += channels * in_ch + 2 * channels      # projection + bn
            in_ch = channels
    attention = 0
    if c.cbam:
        attention = 2 * in_ch * (in_ch // c.cbam_ratio)          # bias-free MLP pair
        attention += 7 * 7 * 2 * 1 + 1                           # 7x7 spatial conv + bias
    head = in_ch * c.num_classes + c.num_classes
    return ModelStats(c.name, c.input_hw,
                      params={"backbone": backbone, "attention": attention, "head": head},
                      macs={})


def count_macs(config, input_hw=None) -> ModelStats:
    """Multiply-accumulate count at a stated input size (conventions above)."""
    if isinstance(config, str):
        config = get_preset(config)
    config.validate()
    c = config
    hw = input_hw or c.input_hw
    h = w = hw

    def conv_cost(in_ch, out_ch, k, stride, pad, h, w, bias=False):
        oh, ow = _conv_shape(h, w, k, stride, pad)
        macs = out_ch * oh * ow * in_ch * k * k
        if bias:
            macs += out_ch * oh * ow
        return macs, oh, ow

    backbone, oh, ow = conv_cost(c.in_channels, c.stem_channels, c.stem_kernel,
                                 c.stem_stride, c.stem_pad, h, w)
    backbone += 2 * c.stem_channels * oh * ow                    # bn + relu
    h, w = oh, ow
    if c.stem_pool:
        win, stride, pad = c.stem_pool
        oh, ow = _conv_shape(h, w, win, stride, pad)
        backbone += c.stem_channels * oh * ow * win * win        # pooling reads
        h, w = oh, ow
    in_ch = c.stem_channels
    for blocks, channels, stride in c.stages:
        for bi in range(blocks):
            s = stride if bi == 0 else 1
            m1, oh, ow = conv_cost(in_ch, channels, 3, s, 1, h, w)
            m2, _, _ = conv_cost(channels, channels, 3, 1, 1, oh, ow)
            backbone += m1 + m2
            backbone += 4 * channels * oh * ow                   # 2 bn + 2 relu
            if s != 1 or in_ch != channels:
                mp, _, _ = conv_cost(in_ch, channels, 1, s, 0, h, w)
                backbone += mp + channels * oh * ow              # projection + its bn
            backbone += channels * oh * ow                       # residual add
            h, w, in_ch = oh, ow, channels
    attention = 0
    if c.cbam:
        hw_elems = in_ch * h * w
        hidden = in_ch // c.cbam_ratio
        attention += 2 * hw_elems                                # global avg + max pool
        attention += 2 * 2 * in_ch * hidden                     # shared MLP, both branches
        attention += 2 * in_ch                                   # sum + sigmoid
        attention += hw_elems                                    # channel gate multiply
        attention += 2 * hw_elems                                # channel-wise mean + max
        sconv, _, _ = conv_cost(2, 1, 7, 1, 3, h, w, bias=True)
        attention += sconv + h * w                               # spatial conv + sigmoid
        attention += hw_elems                                    # spatial gate multiply
    head = in_ch * h * w                                         # global average pool
    head += in_ch * c.num_classes + c.num_classes                # fc
    return ModelStats(c.name, hw,
                      params={},
                      macs={"backbone": backbone, "attention": attention, "head": head})
