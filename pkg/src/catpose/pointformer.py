"""Point branch: channelwise-attention transformer over unordered points.

Raw camera-frame points are mean-centred, lifted to a shared feature
description, then four stages (each fed from that shared lift) apply
blocks of channelwise multihead attention and a feed-forward network.
Every operation is pointwise or symmetric over points, so the whole
branch is permutation-equivariant. The decoder projects all four levels
to a common width, concatenates and fuses them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .ops import LinearParams, NormParams, init_linear, init_norm, instance_norm, linear
from .rng import Prng
from .tensor import ConfigError, ShapeError, Tensor


@dataclass
class PointformerConfig:
    channels: tuple = (32, 64, 160, 256)
    heads: tuple = (1, 2, 5, 8)
    expansion: tuple = (8, 8, 4, 4)
    blocks_per_stage: int = 2
    lift_dim: int = 64
    out_dim: int = 64

    @property
    def num_stages(self):
        return len(self.channels)

    def expanded(self, i):
        return self.channels[i] * self.expansion[i]

    def validate(self):
        for c, m in zip(self.channels, self.heads):
            if c % m:
                raise ConfigError(f"channels {c} not divisible by heads {m}")
        return self


@dataclass
class CwmhaParams:
    query: LinearParams
    key: LinearParams
    value: LinearParams
    out: LinearParams


@dataclass
class PointFfnParams:
    norm: NormParams
    expand: LinearParams
    mix: LinearParams
    project: LinearParams


@dataclass
class PointBlockParams:
    attn_norm: NormParams
    attn: CwmhaParams
    ffn: PointFfnParams


@dataclass
class PointStageParams:
    embed: LinearParams
    blocks: list = field(default_factory=list)


@dataclass
class PointDecoderParams:
    unify: list
    fuse: LinearParams


@dataclass
class PointformerParams:
    lift_a: LinearParams
    lift_b: LinearParams
    stages: list
    decoder: PointDecoderParams


def init_pointformer(prng: Prng, cfg: PointformerConfig) -> PointformerParams:
    cfg.validate()
    d = cfg.lift_dim
    stages = []
    for i in range(cfg.num_stages):
        c, ce = cfg.channels[i], cfg.expanded(i)
        sp = prng.derive("point_stage", i)
        blocks = []
        for b in range(cfg.blocks_per_stage):
            bp = sp.derive("block", b)
            blocks.append(
                PointBlockParams(
                    attn_norm=init_norm(c),
                    attn=CwmhaParams(
                        query=init_linear(bp.derive(0), c, c),
                        key=init_linear(bp.derive(1), c, c),
                        value=init_linear(bp.derive(2), c, c),
                        out=init_linear(bp.derive(3), c, c),
                    ),
                    ffn=PointFfnParams(
                        norm=init_norm(c),
                        expand=init_linear(bp.derive(4), c, ce),
                        mix=init_linear(bp.derive(5), ce, ce),
                        project=init_linear(bp.derive(6), ce, c),
                    ),
                )
            )
        stages.append(PointStageParams(embed=init_linear(sp.derive("embed"), d, c), blocks=blocks))
    dp = prng.derive("point_decoder")
    decoder = PointDecoderParams(
        unify=[init_linear(dp.derive(i), cfg.channels[i], cfg.out_dim) for i in range(cfg.num_stages)],
        fuse=init_linear(dp.derive("fuse"), cfg.num_stages * cfg.out_dim, cfg.out_dim),
    )
    return PointformerParams(
        lift_a=init_linear(prng.derive("lift", 0), 3, d),
        lift_b=init_linear(prng.derive("lift", 1), d, d),
        stages=stages,
        decoder=decoder,
    )


def lift_points(params: PointformerParams, points):
    """Two shared linear+GELU layers mapping each point to the lift width."""
    x = T.as_tensor(points)
    if x.ndim != 2 or x.shape[1] != 3:
        raise ShapeError(f"expected an N x 3 point cloud, got {x.shape}")
    return T.gelu(linear(params.lift_b, T.gelu(linear(params.lift_a, x))))


def input_feature_embed(stage: PointStageParams, lifted):
    """Pointwise linear map from the shared lift to the stage width."""
    return linear(stage.embed, lifted)


def cwmha_attention(attn: CwmhaParams, x, num_heads: int):
    """Attention over channel pairs; permutation-invariant over points.

    Per head the d x d weight matrix is softmax(q^T k / sqrt(d)) and the
    output rows are v @ A^T, so each output channel mixes value channels.
    """
    n, c = x.shape
    if c % num_heads:
        raise ConfigError(f"channels {c} not divisible by {num_heads} heads")
    d_head = c // num_heads
    scale = 1.0 / math.sqrt(d_head)
    q = linear(attn.query, x)
    k = linear(attn.key, x)
    v = linear(attn.value, x)
    outs = []
    for h in range(num_heads):
        qh = T.narrow(q, 1, h * d_head, d_head)
        kh = T.narrow(k, 1, h * d_head, d_head)
        vh = T.narrow(v, 1, h * d_head, d_head)
        weights = T.softmax(T.mul(T.matmul(T.transpose(qh, (1, 0)), kh), scale), axis=1)
        outs.append(T.matmul(vh, T.transpose(weights, (1, 0))))
    merged = outs[0] if num_heads == 1 else T.concat(outs, axis=1)
    return linear(attn.out, merged)


def ffn_forward(ffn: PointFfnParams, x):
    """Norm, two expansion MLPs, GELU, projection, residual."""
    y = linear(ffn.expand, instance_norm(ffn.norm, x))
    y = linear(ffn.mix, y)
    y = T.gelu(y)
    return T.add(linear(ffn.project, y), x)


def encoder_forward(params: PointformerParams, cfg: PointformerConfig, points):
    """Centre, lift once, then run all four stages off the shared lift."""
    pts = T.as_tensor(points)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 3:
        raise ShapeError(f"expected at least 3 points as N x 3, got {pts.shape}")
    if not np.isfinite(pts.data).all():
        raise ShapeError("point cloud contains non-finite coordinates")
    centred = Tensor(pts.data - pts.data.mean(axis=0))
    lifted = lift_points(params, centred)
    levels = []
    for i, stage in enumerate(params.stages):
        x = input_feature_embed(stage, lifted)
        for block in stage.blocks:
            attended = cwmha_attention(block.attn, instance_norm(block.attn_norm, x), cfg.heads[i])
            x = T.add(x, attended)
            x = ffn_forward(block.ffn, x)
        levels.append(x)
    return levels


def decoder_forward(params: PointDecoderParams, cfg: PointformerConfig, levels):
    """Unify level widths, concatenate and fuse to the output width."""
    if len(levels) != cfg.num_stages:
        raise ShapeError(f"expected {cfg.num_stages} levels, got {len(levels)}")
    n = levels[0].shape[0]
    for lv in levels:
        if lv.shape[0] != n:
            raise ShapeError(f"level point counts differ: {[lv.shape for lv in levels]}")
    unified = [linear(p, lv) for p, lv in zip(params.unify, levels)]
    return linear(params.fuse, T.concat(unified, axis=1))


def forward(params: PointformerParams, cfg: PointformerConfig, points):
    """Point cloud (N, 3) to per-point geometric features (N, out_dim)."""
    return decoder_forward(params.decoder, cfg, encoder_forward(params, cfg, points))
