"""Multisource aggregation: fuse appearance, geometry and the shape prior.

Appearance features are gathered per observed point through the pixel-to-
point index, concatenated with the geometric features into the instance
local representation, and pooled into a global one. The categorical shape
prior contributes local and global category representations. Two heads
consume these: one regresses a per-prior-point deformation field, the
other a row-stochastic correspondence matrix; together they produce the
canonical-space coordinates of every observed point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .ops import LinearParams, avg_pool_tokens, init_linear, linear, mlp_chain
from .rng import Prng
from .tensor import ShapeError, Tensor


@dataclass
class MsaConfig:
    """Head and funnel widths; all are configuration, not paper constants."""

    app_dim: int = 32
    geo_dim: int = 64
    global_dim: int = 256
    inst_funnel: tuple = (128,)
    cat_widths: tuple = (64, 64)
    cat_funnel: tuple = (128,)
    deform_hidden: tuple = (512, 256)
    corr_hidden: tuple = (512, 256)
    n_model: int = 1024

    @property
    def local_dim(self):
        return self.app_dim + self.geo_dim

    @property
    def deform_in(self):
        return self.cat_widths[-1] + 2 * self.global_dim

    @property
    def corr_in(self):
        return self.local_dim + 2 * self.global_dim


@dataclass
class MsaParams:
    app_unify: LinearParams
    geo_unify: LinearParams
    inst_pool: list
    cat_local: list
    cat_pool: list
    deform: list
    corr: list


def _chain(prng, widths):
    return [init_linear(prng.derive(i), a, b) for i, (a, b) in enumerate(zip(widths, widths[1:]))]


def init_msa(prng: Prng, cfg: MsaConfig) -> MsaParams:
    return MsaParams(
        app_unify=init_linear(prng.derive("app"), cfg.app_dim, cfg.app_dim),
        geo_unify=init_linear(prng.derive("geo"), cfg.geo_dim, cfg.geo_dim),
        inst_pool=_chain(prng.derive("inst_pool"),
                         (cfg.local_dim, *cfg.inst_funnel, cfg.global_dim)),
        cat_local=_chain(prng.derive("cat_local"), (3, *cfg.cat_widths)),
        cat_pool=_chain(prng.derive("cat_pool"),
                        (cfg.cat_widths[-1], *cfg.cat_funnel, cfg.global_dim)),
        deform=_chain(prng.derive("deform"), (cfg.deform_in, *cfg.deform_hidden, 3)),
        corr=_chain(prng.derive("corr"), (cfg.corr_in, *cfg.corr_hidden, cfg.n_model)),
    )


def gather_appearance(feature_map, pixel_index):
    """Pick the appearance row of each observed point's source pixel.

    ``feature_map`` is (H, W, D); ``pixel_index`` holds flat row-major
    pixel indices, one per point.
    """
    fm = T.as_tensor(feature_map)
    h, w, d = fm.shape
    idx = np.asarray(pixel_index)
    if idx.ndim != 1:
        raise ShapeError(f"pixel index must be a flat vector, got shape {idx.shape}")
    bad = (idx < 0) | (idx >= h * w)
    if bad.any():
        offender = int(idx[np.argmax(bad)])
        raise IndexError(f"pixel index {offender} outside [0, {h * w})")
    return T.gather_rows(T.reshape(fm, (h * w, d)), idx.astype(np.intp))


def instance_representations(params: MsaParams, cfg: MsaConfig, app, geo):
    """Per-point local representation plus pooled global representation."""
    app, geo = T.as_tensor(app), T.as_tensor(geo)
    if app.shape[0] != geo.shape[0]:
        raise ShapeError(f"point counts differ: appearance {app.shape} vs geometry {geo.shape}")
    local = T.concat([linear(params.app_unify, app), linear(params.geo_unify, geo)], axis=1)
    pooled = avg_pool_tokens(mlp_chain(params.inst_pool, local))
    return local, pooled


def category_representations(params: MsaParams, cfg: MsaConfig, prior):
    """Pointwise category representation of the shape prior plus its pooled summary."""
    prior = T.as_tensor(prior)
    local = mlp_chain(params.cat_local, prior)
    pooled = avg_pool_tokens(mlp_chain(params.cat_pool, local))
    return local, pooled


def _with_globals(local, cat_global, inst_global):
    n = local.shape[0]
    return T.concat(
        [local, T.repeat_rows(cat_global, n), T.repeat_rows(inst_global, n)], axis=1
    )


def deformation_head(params: MsaParams, cat_local, cat_global, inst_global):
    """Per-prior-point displacement field, (N_model, 3)."""
    feats = _with_globals(cat_local, cat_global, inst_global)
    if feats.shape[1] != params.deform[0].in_dim:
        raise ShapeError(
            f"deformation head expects width {params.deform[0].in_dim}, got {feats.shape[1]}"
        )
    return mlp_chain(params.deform, feats)


def correspondence_head(params: MsaParams, inst_local, cat_global, inst_global):
    """Row-stochastic soft assignment of observed points to model points."""
    feats = _with_globals(inst_local, cat_global, inst_global)
    if feats.shape[1] != params.corr[0].in_dim:
        raise ShapeError(
            f"correspondence head expects width {params.corr[0].in_dim}, got {feats.shape[1]}"
        )
    return T.softmax(mlp_chain(params.corr, feats), axis=1)


def reconstruct_and_project(prior, deformation, correspondence):
    """Deform the prior into the instance model, map observed points into it.

    Returns (model, coords): model = prior + deformation and
    coords = correspondence @ model, each observed row a convex
    combination of model rows.
    """
    prior = T.as_tensor(prior)
    deformation = T.as_tensor(deformation)
    correspondence = T.as_tensor(correspondence)
    if prior.shape != deformation.shape:
        raise ShapeError(f"prior {prior.shape} vs deformation {deformation.shape}")
    if correspondence.shape[1] != prior.shape[0]:
        raise ShapeError(
            f"correspondence {correspondence.shape} does not match prior {prior.shape}"
        )
    model = T.add(prior, deformation)
    return model, T.matmul(correspondence, model)


def forward(params: MsaParams, cfg: MsaConfig, feature_map, pixel_index, geo, prior):
    """Full aggregation; returns (deformation, correspondence, model, coords)."""
    app = gather_appearance(feature_map, pixel_index)
    inst_local, inst_global = instance_representations(params, cfg, app, geo)
    cat_local, cat_global = category_representations(params, cfg, prior)
    deformation = deformation_head(params, cat_local, cat_global, inst_global)
    correspondence = correspondence_head(params, inst_local, cat_global, inst_global)
    model, coords = reconstruct_and_project(prior, deformation, correspondence)
    return deformation, correspondence, model, coords
