"""Finite-difference verification of reverse-mode gradients.

The contract for every trainable block in the library: the analytic
gradient of a scalar function must agree with central differences on a
sampled subset of parameter entries.
"""

from __future__ import annotations

import numpy as np

from .rng import Prng
from .tensor import no_grad


class GradCheckError(RuntimeError):
    """Raised when an evaluation turns non-finite; names the parameter."""


def _param_label(p, fallback):
    return p.name if p.name else fallback


def grad_check(f, params, h=1e-4, entries_per_param=3, seed=0):
    """Max relative error between analytic and central-difference gradients.

    ``f`` is a nullary callable returning a scalar Tensor built from
    ``params`` (leaf tensors). For each parameter, up to
    ``entries_per_param`` entries are sampled and perturbed by +/- h.
    """
    params = list(params)
    for p in params:
        p.grad = None
    out = f()
    if not np.isfinite(out.data).all():
        raise GradCheckError("objective is non-finite at the evaluation point")
    out.backward()
    analytic = []
    for i, p in enumerate(params):
        if p.grad is None:
            analytic.append(np.zeros_like(p.data))
        else:
            analytic.append(p.grad.copy())

    rng = Prng(seed)
    worst = 0.0
    with no_grad():
        for i, p in enumerate(params):
            n = p.data.size
            k = min(entries_per_param, n)
            idxs = rng.choice(n, size=k, replace=False) if k < n else np.arange(n)
            for j in idxs:
                orig = p.data.flat[j]
                p.data.flat[j] = orig + h
                hi = float(f().data)
                p.data.flat[j] = orig - h
                lo = float(f().data)
                p.data.flat[j] = orig
                if not (np.isfinite(hi) and np.isfinite(lo)):
                    raise GradCheckError(
                        f"non-finite evaluation while perturbing {_param_label(p, f'param[{i}]')}"
                    )
                numeric = (hi - lo) / (2.0 * h)
                ana = analytic[i].flat[j]
                rel = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-6)
                worst = max(worst, rel)
    return worst
