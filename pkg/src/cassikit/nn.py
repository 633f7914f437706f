"""Layer classes and parameter bookkeeping on top of the tensor core.

Modules register their weights as ``Tensor`` leaves with
``requires_grad=True``; ``named_parameters`` walks attributes (and lists
of sub-modules) in definition order, so parameter enumeration is
deterministic for checkpointing.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor

DTYPE = T.DEFAULT_DTYPE


class Module:
    """Minimal parameter container; subclasses assign Tensors and Modules."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor):
                        yield f"{full}.{i}", item

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def set_trainable(self, flag: bool):
        for p in self.parameters():
            p.requires_grad = flag


def he_init(rng: np.random.Generator, shape, fan_in: int, dtype=None, scale: float = 1.0) -> Tensor:
    std = scale * math.sqrt(2.0 / fan_in)
    return T.parameter(rng.standard_normal(shape) * std, dtype=dtype or DTYPE)


def xavier_init(rng: np.random.Generator, shape, fan_in: int, dtype=None, scale: float = 1.0) -> Tensor:
    std = scale * math.sqrt(1.0 / fan_in)
    return T.parameter(rng.standard_normal(shape) * std, dtype=dtype or DTYPE)


def zeros_param(shape, dtype=None) -> Tensor:
    return T.parameter(np.zeros(shape), dtype=dtype or DTYPE)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel, stride=1, dilation=1, padding=0,
                 groups=1, bias=True, init="he", scale=1.0, rng=None, dtype=None):
        kh, kw = T._pair(kernel)
        self.stride = stride
        self.dilation = dilation
        self.padding = padding
        self.groups = groups
        cg = cin // groups
        fan_in = cg * kh * kw
        dtype = dtype or DTYPE
        if init == "zero":
            self.weight = zeros_param((cout, cg, kh, kw), dtype)
        elif init == "dirac":
            # centred delta per channel: identity map for 1x1 or odd kernels
            w = np.zeros((cout, cg, kh, kw))
            for o in range(cout):
                w[o, o % cg, kh // 2, kw // 2] = 1.0
            self.weight = T.parameter(w, dtype=dtype)
        else:
            assert rng is not None, "random init needs an rng"
            self.weight = he_init(rng, (cout, cg, kh, kw), fan_in, dtype, scale=scale)
        self.bias = zeros_param((cout,), dtype) if bias else None

    def __call__(self, x):
        return T.conv2d(x, self.weight, bias=self.bias, stride=self.stride,
                        dilation=self.dilation, padding=self.padding, groups=self.groups)


class Linear(Module):
    def __init__(self, din, dout, bias=True, init="xavier", scale=1.0, rng=None, dtype=None):
        dtype = dtype or DTYPE
        if init == "zero":
            self.weight = zeros_param((din, dout), dtype)
        elif init == "identity":
            w = np.eye(din, dout)
            self.weight = T.parameter(w, dtype=dtype)
        else:
            assert rng is not None
            self.weight = xavier_init(rng, (din, dout), din, dtype, scale=scale)
        self.bias = zeros_param((dout,), dtype) if bias else None

    def __call__(self, x):
        out = T.matmul(x, self.weight)
        if self.bias is not None:
            out = out + self.bias
        return out


class DscBlock(Module):
    """Depthwise 3x3 conv -> GELU -> pointwise 1x1 conv; shape preserving."""

    def __init__(self, channels, rng=None, dtype=None, pointwise_init="he"):
        self.channels = channels
        self.depthwise = Conv2d(channels, channels, 3, padding=1, groups=channels,
                                rng=rng, dtype=dtype)
        self.pointwise = Conv2d(channels, channels, 1, init=pointwise_init, rng=rng, dtype=dtype)

    def __call__(self, x):
        if x.shape[1] != self.channels:
            raise ShapeError(f"dsc_block built for {self.channels} channels, got {x.shape[1]}")
        return self.pointwise(T.gelu(self.depthwise(x)))


class MBlock(Module):
    """Inverted-residual mobile block without batch norm.

    Pointwise expand (x4) -> depthwise 3x3 -> GELU -> pointwise project,
    with a residual add when shape allows.
    """

    def __init__(self, cin, cout, stride=1, expand=4, rng=None, dtype=None):
        mid = cin * expand
        self.expand = Conv2d(cin, mid, 1, rng=rng, dtype=dtype)
        self.depthwise = Conv2d(mid, mid, 3, stride=stride, padding=1, groups=mid,
                                rng=rng, dtype=dtype)
        self.project = Conv2d(mid, cout, 1, rng=rng, dtype=dtype)
        self.residual = stride == 1 and cin == cout

    def __call__(self, x):
        y = self.project(T.gelu(self.depthwise(self.expand(x))))
        return x + y if self.residual else y


class MixerBlock(Module):
    """One MLP-Mixer block: token-mixing MLP then channel-mixing MLP, no norms."""

    def __init__(self, tokens, channels, rng=None, dtype=None, expand=2):
        self.token_up = Linear(tokens, tokens * expand, rng=rng, dtype=dtype)
        self.token_down = Linear(tokens * expand, tokens, rng=rng, dtype=dtype)
        self.chan_up = Linear(channels, channels * expand, rng=rng, dtype=dtype)
        self.chan_down = Linear(channels * expand, channels, rng=rng, dtype=dtype)

    def __call__(self, z):
        # z: (B, N, C)
        zt = T.transpose(z, (0, 2, 1))
        zt = self.token_down(T.gelu(self.token_up(zt)))
        z = z + T.transpose(zt, (0, 2, 1))
        return z + self.chan_down(T.gelu(self.chan_up(z)))


def adaptive_avg_pool(x, out_hw: tuple[int, int]):
    """Average-pool (B,C,H,W) down to an exact grid; extents must divide."""
    h, w = x.shape[-2], x.shape[-1]
    oh, ow = out_hw
    if h % oh or w % ow:
        raise ShapeError(f"adaptive pooling needs divisible extents: {(h, w)} -> {(oh, ow)}")
    fh, fw = h // oh, w // ow
    b, c = x.shape[0], x.shape[1]
    v = T.reshape(x, (b, c, oh, fh, ow, fw))
    return T.mean(v, axis=(3, 5))
