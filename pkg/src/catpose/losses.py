"""Training losses: reconstruction, correspondence, and the two regularisers.

All four are differentiable graph operations so the whole pipeline trains
through them; the weighted total mirrors the published weighting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

SMOOTH_L1_BETA = 0.1


@dataclass
class LossWeights:
    """Weights of the four loss terms (reconstruction, correspondence,
    deformation, sparsity)."""

    reconstruction: float = 5.0
    correspondence: float = 1.0
    deformation: float = 1.0
    sparsity: float = 1e-4


def chamfer(p, q, mode="sum"):
    """Symmetric squared-nearest-neighbour distance between two point sets.

    ``sum`` adds both directional sums; ``mean`` divides each directional
    sum by its own point count. Differentiable through both clouds (the
    nearest-neighbour assignment is held fixed, as usual).
    """
    if mode not in ("sum", "mean"):
        raise ValueError(f"unknown chamfer mode {mode!r}")
    p, q = T.as_tensor(p), T.as_tensor(q)
    a, b = p.shape[0], q.shape[0]
    if a == 0 or b == 0:
        raise ShapeError("chamfer distance of an empty point set is undefined")
    d2 = ((p.data[:, None, :] - q.data[None, :, :]) ** 2).sum(axis=2)
    nearest_in_q = d2.argmin(axis=1)
    nearest_in_p = d2.argmin(axis=0)
    diff_pq = T.sub(p, T.gather_rows(q, nearest_in_q))
    diff_qp = T.sub(q, T.gather_rows(p, nearest_in_p))
    sum_pq = T.sum_(T.mul(diff_pq, diff_pq))
    sum_qp = T.sum_(T.mul(diff_qp, diff_qp))
    if mode == "mean":
        return T.add(T.mul(sum_pq, 1.0 / a), T.mul(sum_qp, 1.0 / b))
    return T.add(sum_pq, sum_qp)


def correspondence_loss(pred, gt):
    """Smooth-L1 between predicted and true canonical coordinates, averaged
    over points (each point contributes the sum of its three coordinate
    losses)."""
    pred, gt = T.as_tensor(pred), T.as_tensor(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} does not match target {gt.shape}")
    n = pred.shape[0]
    per_coord = T.smooth_l1(T.sub(pred, gt), beta=SMOOTH_L1_BETA)
    return T.mul(T.sum_(per_coord), 1.0 / n)


def deformation_reg(deformation):
    """Mean Euclidean norm of the per-point displacement (not squared)."""
    deformation = T.as_tensor(deformation)
    return T.mean(T.row_norms(deformation))


def sparsity_reg(correspondence):
    """Mean row entropy of the correspondence matrix; zero on one-hot rows."""
    a = T.as_tensor(correspondence)
    if (a.data < 0).any():
        raise ValueError("correspondence entries must be nonnegative")
    n = a.shape[0]
    return T.mul(T.sum_(T.neg_xlogx(a)), 1.0 / n)


def total_loss(reconstruction, correspondence, deformation, sparsity, weights=None):
    """Weighted sum of the four loss parts; rejects non-finite parts by name."""
    w = weights or LossWeights()
    parts = {
        "reconstruction": T.as_tensor(reconstruction),
        "correspondence": T.as_tensor(correspondence),
        "deformation": T.as_tensor(deformation),
        "sparsity": T.as_tensor(sparsity),
    }
    for name, part in parts.items():
        if not np.isfinite(part.data).all():
            raise FloatingPointError(f"loss part {name!r} is non-finite")
    return T.add(
        T.add(
            T.mul(parts["reconstruction"], w.reconstruction),
            T.mul(parts["correspondence"], w.correspondence),
        ),
        T.add(T.mul(parts["deformation"], w.deformation), T.mul(parts["sparsity"], w.sparsity)),
    )
