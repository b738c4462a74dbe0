"""Pixel branch: pyramid transformer encoder with an all-MLP decoder.

Four stages, each an overlapped patch embedding followed by two blocks of
spatial-reduction multihead attention and a convolutional feed-forward
network. The decoder unifies the four pyramid levels, upsamples them back
to input resolution and emits a per-pixel appearance descriptor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import tensor as T
from .ops import (
    Conv3x3Params,
    LinearParams,
    NormParams,
    conv3x3,
    init_conv3x3,
    init_linear,
    init_norm,
    instance_norm,
    linear,
)
from .rng import Prng
from .tensor import ConfigError, ShapeError, Tensor


@dataclass
class PixelformerConfig:
    """Stage widths and geometry of the pixel branch."""

    channels: tuple = (32, 64, 160, 256)
    heads: tuple = (1, 2, 5, 8)
    expansion: tuple = (8, 8, 4, 4)
    reduction: tuple = (8, 4, 2, 1)
    patch: tuple = ((7, 4, 3), (3, 2, 1), (3, 2, 1), (3, 2, 1))
    blocks_per_stage: int = 2
    out_dim: int = 32

    @property
    def num_stages(self):
        return len(self.channels)

    def expanded(self, i):
        return self.channels[i] * self.expansion[i]

    def validate(self):
        prev = 0
        for i, c in enumerate(self.channels):
            if c <= prev:
                raise ConfigError(f"stage channels must increase, got {self.channels}")
            if c % self.heads[i] != 0:
                raise ConfigError(f"channels {c} not divisible by heads {self.heads[i]} at stage {i}")
            prev = c
        return self


@dataclass
class SrmaParams:
    query: LinearParams
    key: LinearParams
    value: LinearParams
    out: LinearParams
    sr_norm: NormParams
    sr_proj: LinearParams


@dataclass
class CffnParams:
    norm: NormParams
    expand: LinearParams
    conv: Conv3x3Params
    project: LinearParams


@dataclass
class PixelBlockParams:
    attn_norm: NormParams
    attn: SrmaParams
    ffn: CffnParams


@dataclass
class PixelStageParams:
    patch: LinearParams
    blocks: list = field(default_factory=list)


@dataclass
class PixelDecoderParams:
    unify: list
    fuse: LinearParams
    mid: LinearParams
    head_hidden: LinearParams
    head_out: LinearParams


@dataclass
class PixelformerParams:
    stages: list
    decoder: PixelDecoderParams


def init_pixelformer(prng: Prng, cfg: PixelformerConfig) -> PixelformerParams:
    cfg.validate()
    stages = []
    c_prev = 3
    for i in range(cfg.num_stages):
        c = cfg.channels[i]
        ce = cfg.expanded(i)
        r = cfg.reduction[i]
        k, _, _ = cfg.patch[i]
        sp = prng.derive("pixel_stage", i)
        blocks = []
        for b in range(cfg.blocks_per_stage):
            bp = sp.derive("block", b)
            blocks.append(
                PixelBlockParams(
                    attn_norm=init_norm(c),
                    attn=SrmaParams(
                        query=init_linear(bp.derive(0), c, c),
                        key=init_linear(bp.derive(1), c, c),
                        value=init_linear(bp.derive(2), c, c),
                        out=init_linear(bp.derive(3), c, c),
                        sr_norm=init_norm(c),
                        sr_proj=init_linear(bp.derive(4), r * r * c, c),
                    ),
                    ffn=CffnParams(
                        norm=init_norm(c),
                        expand=init_linear(bp.derive(5), c, ce),
                        conv=init_conv3x3(bp.derive(6), ce, ce),
                        project=init_linear(bp.derive(7), ce, c),
                    ),
                )
            )
        stages.append(
            PixelStageParams(patch=init_linear(sp.derive("patch"), k * k * c_prev, c), blocks=blocks)
        )
        c_prev = c
    c4 = cfg.channels[-1]
    d = cfg.out_dim
    dp = prng.derive("pixel_decoder")
    decoder = PixelDecoderParams(
        unify=[init_linear(dp.derive(i), cfg.channels[i], c4) for i in range(cfg.num_stages)],
        fuse=init_linear(dp.derive("fuse"), cfg.num_stages * c4, c4),
        mid=init_linear(dp.derive("mid"), c4, 2 * d),
        head_hidden=init_linear(dp.derive("head_hidden"), 2 * d, 2 * d),
        head_out=init_linear(dp.derive("head_out"), 2 * d, d),
    )
    return PixelformerParams(stages=stages, decoder=decoder)


def overlapped_patch_embed(p: LinearParams, x, k: int, stride: int, pad: int):
    """Strided overlapping patchify + linear projection; returns an (H', W', C) grid."""
    h, w, _ = x.shape
    h_out = (h + 2 * pad - k) // stride + 1
    w_out = (w + 2 * pad - k) // stride + 1
    patches = T.extract_patches(x, k, stride, pad)
    return T.reshape(linear(p, patches), (h_out, w_out, p.out_dim))


def spatial_reduce(attn: SrmaParams, x, grid, r: int):
    """Normalise, merge r x r token neighbourhoods, project back to C channels."""
    h, w = grid
    n, c = x.shape
    if n != h * w:
        raise ShapeError(f"token count {n} does not match grid {grid}")
    if h % r or w % r:
        raise ConfigError(f"grid {grid} not divisible by reduction ratio {r}")
    xn = instance_norm(attn.sr_norm, x)
    if r > 1:
        g = T.reshape(xn, (h // r, r, w // r, r, c))
        g = T.transpose(g, (0, 2, 1, 3, 4))
        xn = T.reshape(g, (n // (r * r), r * r * c))
    return linear(attn.sr_proj, xn)


def srma_attention(attn: SrmaParams, x, grid, num_heads: int, r: int):
    """Multihead attention with keys/values taken from the reduced token set.

    The caller supplies pre-normalised input and adds the residual.
    """
    n, c = x.shape
    if c % num_heads:
        raise ConfigError(f"channels {c} not divisible by {num_heads} heads")
    d_head = c // num_heads
    scale = 1.0 / math.sqrt(d_head)
    q = linear(attn.query, x)
    reduced = spatial_reduce(attn, x, grid, r)
    k = linear(attn.key, reduced)
    v = linear(attn.value, reduced)
    outs = []
    for h in range(num_heads):
        qh = T.narrow(q, 1, h * d_head, d_head)
        kh = T.narrow(k, 1, h * d_head, d_head)
        vh = T.narrow(v, 1, h * d_head, d_head)
        weights = T.softmax(T.mul(T.matmul(qh, T.transpose(kh, (1, 0))), scale), axis=1)
        outs.append(T.matmul(weights, vh))
    merged = outs[0] if num_heads == 1 else T.concat(outs, axis=1)
    return linear(attn.out, merged)


def cffn_forward(ffn: CffnParams, x, grid):
    """Norm, expand, 3x3 conv on the token grid, GELU, project, residual."""
    h, w = grid
    n, _ = x.shape
    if n != h * w:
        raise ShapeError(f"token count {n} does not match grid {grid}")
    ce = ffn.expand.out_dim
    y = linear(ffn.expand, instance_norm(ffn.norm, x))
    y = conv3x3(ffn.conv, T.reshape(y, (h, w, ce)))
    y = T.gelu(y)
    y = linear(ffn.project, T.reshape(y, (n, ce)))
    return T.add(y, x)


def encoder_forward(params: PixelformerParams, cfg: PixelformerConfig, image):
    """Run the four pyramid stages; returns a list of (H_i, W_i, C_i) grids."""
    image = T.as_tensor(image)
    h, w, c = image.shape
    if h % 32 or w % 32:
        raise ConfigError(f"input size {(h, w)} must be divisible by 32")
    if c != 3:
        raise ShapeError(f"expected an H x W x 3 image, got {image.shape}")
    levels = []
    x = image
    for i, stage in enumerate(params.stages):
        k, s, pad = cfg.patch[i]
        grid_t = overlapped_patch_embed(stage.patch, x, k, s, pad)
        hi, wi, ci = grid_t.shape
        tokens = T.reshape(grid_t, (hi * wi, ci))
        for block in stage.blocks:
            attended = srma_attention(
                block.attn,
                instance_norm(block.attn_norm, tokens),
                (hi, wi),
                cfg.heads[i],
                cfg.reduction[i],
            )
            tokens = T.add(tokens, attended)
            tokens = cffn_forward(block.ffn, tokens, (hi, wi))
        x = T.reshape(tokens, (hi, wi, ci))
        levels.append(x)
    return levels


def decoder_forward(params: PixelDecoderParams, cfg: PixelformerConfig, levels):
    """Fuse the pyramid into a full-resolution H x W x D appearance map."""
    if len(levels) != cfg.num_stages:
        raise ShapeError(f"expected {cfg.num_stages} pyramid levels, got {len(levels)}")
    h4, w4, _ = levels[0].shape
    h, w = 4 * h4, 4 * w4
    unified = []
    for p, level in zip(params.unify, levels):
        u = linear(p, level)
        unified.append(T.bilinear_upsample(u, h4, w4))
    fused = linear(params.fuse, T.concat(unified, axis=2))
    mid = linear(params.mid, T.bilinear_upsample(fused, h // 2, w // 2))
    full = T.bilinear_upsample(mid, h, w)
    return linear(params.head_out, linear(params.head_hidden, full))


def forward(params: PixelformerParams, cfg: PixelformerConfig, image):
    """Encoder + decoder; image (H, W, 3) in [0, 1] to features (H, W, D)."""
    return decoder_forward(params.decoder, cfg, encoder_forward(params, cfg, image))
