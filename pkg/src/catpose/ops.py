"""Parameterised neural building blocks shared by both encoder branches.

Linear maps, instance normalisation, 3x3 convolution and the fan-balanced
initialiser. Everything here returns graph-recording tensors so that the
finite-difference gradient check applies uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .rng import Prng
from .tensor import ShapeError, Tensor

INSTANCE_NORM_EPS = 1e-5


@dataclass
class LinearParams:
    """Affine map; weight is (in_dim, out_dim), bias is (out_dim,)."""

    weight: Tensor
    bias: Tensor

    @property
    def in_dim(self):
        return self.weight.shape[0]

    @property
    def out_dim(self):
        return self.weight.shape[1]


@dataclass
class NormParams:
    """Learned per-channel affine applied after instance normalisation."""

    gain: Tensor
    bias: Tensor


@dataclass
class Conv3x3Params:
    kernel: Tensor  # (3, 3, c_in, c_out)
    bias: Tensor  # (c_out,)


def glorot_uniform(prng: Prng, fan_in: int, fan_out: int, shape) -> np.ndarray:
    """Uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return prng.uniform(-a, a, shape)

def init_linear(prng: Prng, in_dim: int, out_dim: int, name=None) -> LinearParams:
    w = glorot_uniform(prng, in_dim, out_dim, (in_dim, out_dim))
    return LinearParams(
        weight=T.parameter(w, name=None if name is None else f"{name}.weight"),
        bias=T.parameter(np.zeros(out_dim), name=None if name is None else f"{name}.bias"),
    )


def init_norm(channels: int, name=None) -> NormParams:
    return NormParams(
        gain=T.parameter(np.ones(channels), name=None if name is None else f"{name}.gain"),
        bias=T.parameter(np.zeros(channels), name=None if name is None else f"{name}.bias"),
    )


def init_conv3x3(prng: Prng, c_in: int, c_out: int, name=None) -> Conv3x3Params:
    k = glorot_uniform(prng, 9 * c_in, 9 * c_out, (3, 3, c_in, c_out))
    return Conv3x3Params(
        kernel=T.parameter(k, name=None if name is None else f"{name}.kernel"),
        bias=T.parameter(np.zeros(c_out), name=None if name is None else f"{name}.bias"),
    )


def linear(p: LinearParams, x) -> Tensor:
    """Apply y = x @ W + b over the trailing axis of ``x``."""
    x = T.as_tensor(x)
    if x.shape[-1] != p.in_dim:
        raise ShapeError(
            f"linear: input trailing dim {x.shape} does not match weight {p.weight.shape}"
        )
    lead = x.shape[:-1]
    flat = x if x.ndim == 2 else T.reshape(x, (-1, p.in_dim))
    y = T.add(T.matmul(flat, p.weight), p.bias)
    out_shape = lead + (p.out_dim,)
    return y if y.shape == out_shape else T.reshape(y, out_shape)


def instance_norm(p: NormParams, x, eps: float = INSTANCE_NORM_EPS) -> Tensor:
    """Normalise each channel to zero mean, unit variance over the token axis.

    ``x`` is (tokens, channels); the learned affine follows.
    """
    x = T.as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"instance_norm expects (tokens, channels), got {x.shape}")
    mu = T.mean(x, axis=0, keepdims=True)
    centered = T.sub(x, mu)
    var = T.mean(T.mul(centered, centered), axis=0, keepdims=True)
    xn = T.div(centered, T.sqrt(T.add(var, eps)))
    return T.add(T.mul(xn, p.gain), p.bias)


def conv3x3(p: Conv3x3Params, x) -> Tensor:
    """Stride-1, zero-padded 3x3 cross-correlation on an (H, W, C) grid."""
    return T.conv3x3(x, p.kernel, p.bias)


def avg_pool_tokens(x) -> Tensor:
    """Per-channel arithmetic mean over the token axis of (N, C)."""
    x = T.as_tensor(x)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"avg_pool_tokens expects a non-empty (N, C) tensor, got {x.shape}")
    return T.mean(x, axis=0)


def mlp_chain(layers, x, activate_last=False):
    """Linear layers with GELU between them (and optionally after the last)."""
    for i, p in enumerate(layers):
        x = linear(p, x)
        if activate_last or i + 1 < len(layers):
            x = T.gelu(x)
    return x
