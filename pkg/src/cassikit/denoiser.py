"""Per-stage U-shaped denoiser built from three-branch transformer blocks.

Each block splits its feature channels into a convolutional spatial flow
and a cross-flow half. The cross-spectral flow runs channel-token
attention with spatially compressed queries/keys and a full-resolution
dilated-conv value; the cross-prior flow attends from image tokens to a
compact prior-token pyramid. 1x1-conv bridges pass modulation signals
between flows, and an aggregation stack plus a feed-forward tail fuse the
three outputs with residual connections.

The U-shape stacks five such blocks over three resolution levels
(1-2-3-2-1); level ``i`` consumes level ``i`` of the prior pyramid. With
the output convolution zero-initialized the whole denoiser is the
identity map, so unfolding starts from plain projection behaviour.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .nn import Conv2d, Linear, MBlock, Module
from .tensor import Tensor


# ---------------------------------------------------------------------------
# prior pyramid
# ---------------------------------------------------------------------------

def prior_downsample(z: Tensor, merge: Linear) -> Tensor:
    """Merge adjacent token pairs: halve the token count, double channels.

    With the merge map at its identity initialization the merged token is
    exactly the concatenation of the pair.
    """
    b, n, c = z.shape
    if n % 2:
        raise ShapeError(f"prior_downsample needs an even token count, got {n}")
    paired = T.reshape(z, (b, n // 2, 2 * c))
    return merge(paired)


class PriorPyramidBuilder(Module):
    """Builds the three-level pyramid z1 (N x C), z2 (N/2 x 2C), z3 (N/4 x 4C)."""

    def __init__(self, tokens: int, channels: int, dtype=None):
        if tokens % 4:
            raise ShapeError(f"prior token count must be divisible by 4, got {tokens}")
        self.merge1 = Linear(2 * channels, 2 * channels, bias=False, init="identity", dtype=dtype)
        self.merge2 = Linear(4 * channels, 4 * channels, bias=False, init="identity", dtype=dtype)

    def __call__(self, z: Tensor) -> list[Tensor]:
        if z.ndim == 2:
            z = T.reshape(z, (1,) + z.shape)
        z2 = prior_downsample(z, self.merge1)
        z3 = prior_downsample(z2, self.merge2)
        return [z, z2, z3]


# ---------------------------------------------------------------------------
# flows
# ---------------------------------------------------------------------------

class SpatialFlow(Module):
    """Two mobile blocks (no batch norm); also exposes the query map that
    feeds the compensation bridges."""

    def __init__(self, channels: int, rng, dtype=None):
        self.mb1 = MBlock(channels, channels, rng=rng, dtype=dtype)
        self.mb2 = MBlock(channels, channels, rng=rng, dtype=dtype)

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        q = self.mb1(x)
        return self.mb2(q), q


class AcsAttention(Module):
    """Channel-token attention with asymmetric cross-scale embeddings.

    Queries and keys are strided 3x3 convs (quarter area, doubled
    channels); the value is a dilation-2 conv with a 5x3 kernel whose
    longer support lies along the dispersion (row) axis, keeping full
    resolution. Per head, the 2C x 2C logits are gated by the spatial
    compensation vector, scaled by a learnable positive temperature and
    softmaxed over keys; the mixed value is gated at full resolution and
    projected back to the flow width.
    """

    def __init__(self, channels: int, heads: int, nominal_hw: tuple[int, int],
                 rng=None, dtype=None):
        c2 = 2 * channels
        self.heads = heads
        self.to_q = Conv2d(channels, c2, 3, stride=2, padding=1, bias=False, rng=rng, dtype=dtype)
        self.to_k = Conv2d(channels, c2, 3, stride=2, padding=1, bias=False, rng=rng, dtype=dtype)
        self.to_v = Conv2d(channels, c2, (5, 3), dilation=2, padding=(4, 2), bias=False,
                           rng=rng, dtype=dtype)
        self.proj = Conv2d(c2, channels, 1, bias=False, rng=rng, dtype=dtype)
        h0, w0 = nominal_hw
        dh = max((h0 // 2) * (w0 // 2) // heads, 1)
        self.log_alpha = T.parameter(np.full((heads,), math.log(math.sqrt(dh))),
                                     dtype=dtype or T.DEFAULT_DTYPE)

    def __call__(self, u: Tensor, gate: Tensor, psv: Tensor,
                 zero_logits: bool = False) -> tuple[Tensor, Tensor]:
        b, c, h, w = u.shape
        if h % 2 or w % 2:
            raise ShapeError(f"cross-spectral attention needs even extents, got {(h, w)}")
        heads = self.heads
        c2 = 2 * c
        q = self.to_q(u)
        k = self.to_k(u)
        v = self.to_v(u)
        f = (h // 2) * (w // 2)
        if f % heads:
            raise ShapeError(f"{f} query features not divisible by {heads} heads")
        fh = f // heads
        qt = T.transpose(T.reshape(q, (b, c2, heads, fh)), (0, 2, 1, 3))
        kt = T.transpose(T.reshape(k, (b, c2, heads, fh)), (0, 2, 1, 3))
        logits = T.matmul(qt, T.transpose(kt, (0, 1, 3, 2)))
        if zero_logits:
            logits = T.mul(logits, 0.0)
        logits = T.mul(logits, T.reshape(gate, (b, 1, c2, 1)))
        alpha = T.reshape(T.exp(self.log_alpha), (1, heads, 1, 1))
        attn = T.softmax(T.div(logits, alpha), axis=-1)
        hw = h * w
        if hw % heads:
            raise ShapeError(f"{hw} value features not divisible by {heads} heads")
        vt = T.transpose(T.reshape(v, (b, c2, heads, hw // heads)), (0, 2, 1, 3))
        mixed = T.matmul(attn, vt)
        mixed = T.reshape(T.transpose(mixed, (0, 2, 1, 3)), (b, c2, h, w))
        out = self.proj(T.mul(mixed, psv))
        return out, v


class CrossPriorAttention(Module):
    """Image tokens attend to prior tokens (keys/values from the prior).

    By default the queries come from the cross-spectral value embedding
    (full resolution); set ``query_source='csf_query'`` to use the
    compressed query embedding instead, with the result upsampled back.
    """

    def __init__(self, channels: int, z_dim: int, heads: int, rng=None, dtype=None,
                 query_source: str = "csf_value"):
        c2 = 2 * channels
        if c2 % heads:
            raise ShapeError(f"{c2} channels not divisible by {heads} heads")
        if query_source not in ("csf_value", "csf_query"):
            raise ShapeError(f"unknown cpf query source {query_source!r}")
        self.heads = heads
        self.query_source = query_source
        self.to_k = Linear(z_dim, c2, bias=False, rng=rng, dtype=dtype)
        self.to_v = Linear(z_dim, c2, bias=False, rng=rng, dtype=dtype)
        self.proj = Conv2d(c2, channels, 1, bias=False, rng=rng, dtype=dtype)
        self.log_alpha = T.parameter(np.full((heads,), math.log(math.sqrt(c2 / heads))),
                                     dtype=dtype or T.DEFAULT_DTYPE)

    def __call__(self, queries: Tensor, z: Tensor) -> Tensor:
        b, c2, h, w = queries.shape
        heads = self.heads
        dh = c2 // heads
        n = z.shape[-2]
        qt = T.reshape(T.transpose(queries, (0, 2, 3, 1)), (b, h * w, heads, dh))
        qt = T.transpose(qt, (0, 2, 1, 3))
        k = self.to_k(z)
        v = self.to_v(z)
        kt = T.transpose(T.reshape(k, (b, n, heads, dh)), (0, 2, 1, 3))
        vt = T.transpose(T.reshape(v, (b, n, heads, dh)), (0, 2, 1, 3))
        alpha = T.reshape(T.exp(self.log_alpha), (1, heads, 1, 1))
        logits = T.div(T.matmul(qt, T.transpose(kt, (0, 1, 3, 2))), alpha)
        attn = T.softmax(logits, axis=-1)
        mixed = T.matmul(attn, vt)
        mixed = T.reshape(T.transpose(mixed, (0, 2, 1, 3)), (b, h * w, c2))
        grid = T.transpose(T.reshape(mixed, (b, h, w, c2)), (0, 3, 1, 2))
        if self.query_source == "csf_query":
            grid = T.bilinear_up2(grid)
        return self.proj(grid)


class TridentBlock(Module):
    """Three-branch block: spatial flow, cross-spectral flow, cross-prior flow.

    Shape preserving for even spatial extents.
    """

    def __init__(self, channels: int, z_dim: int, heads: int, nominal_hw: tuple[int, int],
                 rng=None, dtype=None, cpf_query_source: str = "csf_value"):
        if channels % 2:
            raise ShapeError(f"block channels must be even, got {channels}")
        c = channels // 2
        c2 = channels
        self.spatial = SpatialFlow(c, rng=rng, dtype=dtype)
        self.bridge_qk = Conv2d(c, c2, 1, bias=False, rng=rng, dtype=dtype)
        self.bridge_v = Conv2d(c, c2, 1, bias=False, rng=rng, dtype=dtype)
        self.csf = AcsAttention(c, heads, nominal_hw, rng=rng, dtype=dtype)
        self.cpf = CrossPriorAttention(c, z_dim, heads, rng=rng, dtype=dtype,
                                       query_source=cpf_query_source)
        # residual-branch tails start small so stacked blocks cannot blow up
        self.agg1 = Conv2d(3 * c, channels, 1, rng=rng, dtype=dtype)
        self.agg2 = Conv2d(channels, channels, 1, scale=0.1, rng=rng, dtype=dtype)
        self.ffn1 = Conv2d(channels, 2 * channels, 1, rng=rng, dtype=dtype)
        self.ffn2 = Conv2d(2 * channels, channels, 1, scale=0.1, rng=rng, dtype=dtype)

    def __call__(self, u: Tensor, z: Tensor) -> Tensor:
        c = u.shape[1] // 2
        uc = u[:, :c]
        us = u[:, c:]
        s_out, q_map = self.spatial(us)
        # tanh keeps both compensation gates bounded; raw products of two
        # activation maps square magnitudes and overflow float32 in depth
        psqk = T.avg_pool2(self.bridge_qk(q_map))
        gate = T.tanh(T.mean(psqk, axis=(2, 3)))
        psv = T.tanh(self.bridge_v(q_map))
        csf_out, v_csf = self.csf(uc, gate, psv)
        if self.cpf.query_source == "csf_value":
            cpf_out = self.cpf(v_csf, z)
        else:
            cpf_out = self.cpf(self.csf.to_q(uc), z)
        fused = T.concat([csf_out, cpf_out, s_out], axis=1)
        agg = self.agg2(T.gelu(self.agg1(fused)))
        x1 = u + agg
        return x1 + self.ffn2(T.gelu(self.ffn1(x1)))


# ---------------------------------------------------------------------------
# U-shape denoiser
# ---------------------------------------------------------------------------

@dataclass
class DenoiserConfig:
    bands: int
    base_channels: int = 16
    heads: tuple[int, int, int] = (4, 4, 4)
    latent_tokens: int = 16
    latent_channels: int = 32
    nominal_hw: tuple[int, int] = (32, 32)
    cpf_query_source: str = "csf_value"

    def level_channels(self) -> tuple[int, int, int]:
        c = self.base_channels
        return c, 2 * c, 4 * c

    def level_zdims(self) -> tuple[int, int, int]:
        cz = self.latent_channels
        return cz, 2 * cz, 4 * cz


class TridentDenoiser(Module):
    """U-shape over three levels with five three-branch blocks (1-2-3-2-1).

    The output conv is zero-initialized, so a freshly built denoiser is
    the identity map on its input.
    """

    def __init__(self, cfg: DenoiserConfig, rng, dtype=None):
        c1, c2, c3 = cfg.level_channels()
        z1, z2, z3 = cfg.level_zdims()
        h0, w0 = cfg.nominal_hw
        mk = lambda ch, zd, hd, hw: TridentBlock(ch, zd, hd, hw, rng=rng, dtype=dtype,
                                                 cpf_query_source=cfg.cpf_query_source)
        self.embed = Conv2d(cfg.bands, c1, 3, padding=1, rng=rng, dtype=dtype)
        self.tt1a = mk(c1, z1, cfg.heads[0], (h0, w0))
        self.down1 = Conv2d(c1, c2, 4, stride=2, padding=1, rng=rng, dtype=dtype)
        self.tt2a = mk(c2, z2, cfg.heads[1], (h0 // 2, w0 // 2))
        self.down2 = Conv2d(c2, c3, 4, stride=2, padding=1, rng=rng, dtype=dtype)
        self.tt3 = mk(c3, z3, cfg.heads[2], (h0 // 4, w0 // 4))
        self.up2 = Conv2d(c3, c2, 1, rng=rng, dtype=dtype)
        self.fuse2 = Conv2d(2 * c2, c2, 1, rng=rng, dtype=dtype)
        self.tt2b = mk(c2, z2, cfg.heads[1], (h0 // 2, w0 // 2))
        self.up1 = Conv2d(c2, c1, 1, rng=rng, dtype=dtype)
        self.fuse1 = Conv2d(2 * c1, c1, 1, rng=rng, dtype=dtype)
        self.tt1b = mk(c1, z1, cfg.heads[0], (h0, w0))
        self.out = Conv2d(c1, cfg.bands, 3, padding=1, init="zero", dtype=dtype)

    def __call__(self, x: Tensor, pyramid: list[Tensor]) -> Tensor:
        h, w = x.shape[-2], x.shape[-1]
        if h % 4 or w % 4:
            raise ShapeError(f"denoiser input extents must be divisible by 4, got {(h, w)}")
        z1, z2, z3 = pyramid
        e = self.embed(x)
        a = self.tt1a(e, z1)
        b = self.tt2a(self.down1(a), z2)
        bottom = self.tt3(self.down2(b), z3)
        u2 = self.up2(T.bilinear_up2(bottom))
        b2 = self.tt2b(self.fuse2(T.concat([u2, b], axis=1)), z2)
        u1 = self.up1(T.bilinear_up2(b2))
        a2 = self.tt1b(self.fuse1(T.concat([u1, a], axis=1)), z1)
        return x + self.out(a2)
