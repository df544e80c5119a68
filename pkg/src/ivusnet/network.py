"""Network assembly: encoder/decoder blocks wired into the full model.

Topology: four encoding blocks (the first without a downsampling stage),
three decoding blocks fed by skip connections from the matching encoder
stage, and a 5x5 convolution head with a sigmoid output. Every block runs a
main branch (repeated 3x3 conv -> PReLU -> batch norm) in parallel with a
refining branch (3x3 conv -> PReLU -> 1x1 conv) and sums the two.

Encoding blocks 2..4 halve the spatial resolution with a two-way downsampling
stage: a 2x2 average pool and a 2x2 stride-2 convolution run side by side and
their outputs are channel-concatenated. Decoding blocks upsample with a 2x2
transposed convolution; the concatenation with the skip map feeds the main
branch only, while the refining branch sees just the upsampled map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, DimensionError
from .tensor import Tensor, concat_channels, add

PRESETS = {
    "paper": (64, 128, 256, 512),
    "tiny": (8, 16, 32, 64),
}


@dataclass
class ArchConfig:
    """Structural hyperparameters of the network."""

    block_depths: tuple = (64, 128, 256, 512)
    main_convs_per_block: int = 2
    input_channels: int = 1
    refine: bool = True

    @classmethod
    def from_preset(cls, name, **overrides):
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from "
                              f"{sorted(PRESETS)}")
        return cls(block_depths=PRESETS[name], **overrides)

    def validate(self):
        depths = tuple(int(d) for d in self.block_depths)
        if len(depths) != 4 or any(d <= 0 for d in depths):
            raise ConfigError(f"block_depths must be 4 positive ints, got "
                              f"{self.block_depths}")
        if self.main_convs_per_block < 1:
            raise ConfigError("main_convs_per_block must be >= 1")
        if self.input_channels < 1:
            raise ConfigError("input_channels must be >= 1")
        return self


def _he_uniform(rng, shape, fan_in, dtype=np.float32):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d:
    def __init__(self, rng, in_ch, out_ch, kernel, stride=1, padding="valid"):
        if kernel not in (1, 2, 3, 5):
            raise ConfigError(f"unsupported kernel size {kernel}")
        if stride not in (1, 2):
            raise ConfigError(f"unsupported stride {stride}")
        self.stride = stride
        self.padding = padding
        self.w = Tensor(_he_uniform(rng, (out_ch, in_ch, kernel, kernel),
                                    in_ch * kernel * kernel),
                        requires_grad=True)
        self.b = Tensor(np.zeros(out_ch, dtype=np.float32), requires_grad=True)

    def __call__(self, x):
        return ops.conv2d(x, self.w, self.b, self.stride, self.padding)

    def params(self):
        return [("w", self.w), ("b", self.b)]


class Deconv2x2:
    def __init__(self, rng, in_ch, out_ch):
        self.w = Tensor(_he_uniform(rng, (in_ch, out_ch, 2, 2), in_ch * 4),
                        requires_grad=True)
        self.b = Tensor(np.zeros(out_ch, dtype=np.float32), requires_grad=True)

    def __call__(self, x):
        return ops.deconv2d_2x2(x, self.w, self.b)

    def params(self):
        return [("w", self.w), ("b", self.b)]


class BatchNorm2d:
    def __init__(self, channels, momentum=0.9, eps=1e-5):
        self.gamma = Tensor(np.ones(channels, dtype=np.float32),
                            requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=np.float32),
                           requires_grad=True)
        self.state = ops.BatchNormState.create(channels, momentum, eps)

    def __call__(self, x, training):
        return ops.batchnorm(x, self.gamma, self.beta, self.state, training)

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.state.running_mean),
                ("running_var", self.state.running_var)]


class PReLU:
    def __init__(self, channels, init=0.25):
        self.alpha = Tensor(np.full(channels, init, dtype=np.float32),
                            requires_grad=True)

    def __call__(self, x):
        return ops.prelu(x, self.alpha)

    def params(self):
        return [("alpha", self.alpha)]


class _MainBranch:
    """Repeated (3x3 same conv -> PReLU -> batch norm) stack."""

    def __init__(self, rng, in_ch, depth, n_convs):
        self.units = []
        c = in_ch
        for _ in range(n_convs):
            self.units.append((Conv2d(rng, c, depth, 3, padding="same"),
                               PReLU(depth), BatchNorm2d(depth)))
            c = depth

    def __call__(self, x, training):
        for conv, act, bn in self.units:
            x = bn(act(conv(x)), training)
        return x

    def modules(self):
        for i, (conv, act, bn) in enumerate(self.units):
            yield f"conv{i + 1}", conv
            yield f"prelu{i + 1}", act
            yield f"bn{i + 1}", bn


class _RefineBranch:
    """3x3 same conv -> PReLU -> 1x1 conv."""

    def __init__(self, rng, in_ch, depth):
        self.conv3 = Conv2d(rng, in_ch, depth, 3, padding="same")
        self.act = PReLU(depth)
        self.conv1 = Conv2d(rng, depth, depth, 1)

    def __call__(self, x):
        return self.conv1(self.act(self.conv3(x)))

    def modules(self):
        yield "conv3", self.conv3
        yield "prelu", self.act
        yield "conv1", self.conv1


class EncodingBlock:
    def __init__(self, rng, in_ch, depth, n_convs, downsample, refine):
        self.down_conv = Conv2d(rng, in_ch, in_ch, 2, stride=2) if downsample \
            else None
        branch_in = 2 * in_ch if downsample else in_ch
        self.main = _MainBranch(rng, branch_in, depth, n_convs)
        self.refine = _RefineBranch(rng, branch_in, depth) if refine else None

    def __call__(self, x, training):
        if self.down_conv is not None:
            x = concat_channels(ops.avgpool_2x2(x), self.down_conv(x))
        out = self.main(x, training)
        if self.refine is not None:
            out = add(out, self.refine(x))
        return out

    def modules(self):
        if self.down_conv is not None:
            yield "down", self.down_conv
        for name, m in self.main.modules():
            yield f"main.{name}", m
        if self.refine is not None:
            for name, m in self.refine.modules():
                yield f"refine.{name}", m


class DecodingBlock:
    def __init__(self, rng, in_ch, skip_ch, depth, n_convs, refine):
        self.up = Deconv2x2(rng, in_ch, depth)
        self.main = _MainBranch(rng, depth + skip_ch, depth, n_convs)
        self.refine = _RefineBranch(rng, depth, depth) if refine else None

    def __call__(self, x, skip, training):
        up = self.up(x)
        out = self.main(concat_channels(up, skip), training)
        if self.refine is not None:
            out = add(out, self.refine(up))
        return out

    def modules(self):
        yield "up", self.up
        for name, m in self.main.modules():
            yield f"main.{name}", m
        if self.refine is not None:
            for name, m in self.refine.modules():
                yield f"refine.{name}", m


class IvusNet:
    """The full segmentation network. Build with :func:`build_network`."""

    def __init__(self, cfg, seed):
        cfg = cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d = tuple(cfg.block_depths)
        m = cfg.main_convs_per_block
        self.encoders = [
            EncodingBlock(rng, cfg.input_channels, d[0], m, False, cfg.refine),
            EncodingBlock(rng, d[0], d[1], m, True, cfg.refine),
            EncodingBlock(rng, d[1], d[2], m, True, cfg.refine),
            EncodingBlock(rng, d[2], d[3], m, True, cfg.refine),
        ]
        self.decoders = [
            DecodingBlock(rng, d[3], d[2], d[2], m, cfg.refine),
            DecodingBlock(rng, d[2], d[1], d[1], m, cfg.refine),
            DecodingBlock(rng, d[1], d[0], d[0], m, cfg.refine),
        ]
        self.head = Conv2d(rng, d[0], 1, 5, padding="same")

    def forward(self, image, training=False):
        x = image if isinstance(image, Tensor) else Tensor(image)
        if x.ndim != 4 or x.shape[1] != self.cfg.input_channels:
            raise DimensionError(
                f"expected input (batch, {self.cfg.input_channels}, H, W), "
                f"got {x.shape}")
        h, w = x.shape[2], x.shape[3]
        if h % 8 or w % 8:
            raise DimensionError(
                f"input spatial size {h}x{w} must be divisible by 8 "
                "(three 2x downsampling stages)")
        e1 = self.encoders[0](x, training)
        e2 = self.encoders[1](e1, training)
        e3 = self.encoders[2](e2, training)
        e4 = self.encoders[3](e3, training)
        y = self.decoders[0](e4, e3, training)
        y = self.decoders[1](y, e2, training)
        y = self.decoders[2](y, e1, training)
        return ops.sigmoid(self.head(y))

    def __call__(self, image, training=False):
        return self.forward(image, training)

    def _named_modules(self):
        for i, enc in enumerate(self.encoders):
            for name, mod in enc.modules():
                yield f"enc{i + 1}.{name}", mod
        for i, dec in enumerate(self.decoders):
            for name, mod in dec.modules():
                yield f"dec{i + 1}.{name}", mod
        yield "head", self.head

    def named_parameters(self):
        """Stable name -> Tensor mapping over every trainable parameter."""
        out = {}
        for mname, mod in self._named_modules():
            for pname, p in mod.params():
                out[f"{mname}.{pname}"] = p
        return out

    def named_buffers(self):
        """Stable name -> array mapping over batch-norm running statistics."""
        out = {}
        for mname, mod in self._named_modules():
            if isinstance(mod, BatchNorm2d):
                for bname, buf in mod.buffers():
                    out[f"{mname}.{bname}"] = buf
        return out

    def num_parameters(self):
        return sum(p.size for p in self.named_parameters().values())

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.zero_grad()


def build_network(cfg, seed):
    """Construct a network with weights drawn deterministically from ``seed``."""
    return IvusNet(cfg, seed)
