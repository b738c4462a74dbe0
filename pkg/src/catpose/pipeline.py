"""End-to-end pipeline: both encoder branches, aggregation, pose recovery,
training and evaluation loops.

A single parameter set serves all categories; the category only selects
the shape prior fed to the aggregation stage.
"""

from __future__ import annotations

import dataclasses
import os
import zlib
from dataclasses import dataclass

import numpy as np

from . import losses, msa, pixelformer, pointformer
from . import tensor as T
from .losses import LossWeights
from .metrics import OrientedBox, PoseRecord
from .pose import Pose, RansacConfig, RobustFitError, estimate_pose
from .profiles import Profile
from .rng import Prng
from .synth import SynthSample
from .tensor import ConfigError, Tensor, no_grad


@dataclass
class PipelineParams:
    pixel: pixelformer.PixelformerParams
    point: pointformer.PointformerParams
    fusion: msa.MsaParams


def init_pipeline(prng: Prng, profile: Profile) -> PipelineParams:
    return PipelineParams(
        pixel=pixelformer.init_pixelformer(prng.derive("pixel"), profile.pixel),
        point=pointformer.init_pointformer(prng.derive("point"), profile.point),
        fusion=msa.init_msa(prng.derive("msa"), profile.msa),
    )


def named_parameters(obj, prefix=""):
    """Flatten any nest of dataclasses/lists down to (name, Tensor) leaves."""
    out = []

    def walk(node, path):
        if isinstance(node, Tensor):
            out.append((path, node))
        elif dataclasses.is_dataclass(node):
            for f in dataclasses.fields(node):
                walk(getattr(node, f.name), f"{path}.{f.name}" if path else f.name)
        elif isinstance(node, (list, tuple)):
            for i, item in enumerate(node):
                walk(item, f"{path}.{i}")

    walk(obj, prefix)
    return out


def state_dict(params: PipelineParams):
    return {name: t.data for name, t in named_parameters(params)}


def load_state_dict(params: PipelineParams, tensors):
    named = named_parameters(params)
    names = {name for name, _ in named}
    missing = names - set(tensors)
    extra = set(tensors) - names
    if missing or extra:
        raise KeyError(
            f"weight file does not match model: missing {sorted(missing)[:3]}, "
            f"unexpected {sorted(extra)[:3]}"
        )
    for name, t in named:
        arr = np.asarray(tensors[name], dtype=np.float64)
        if arr.shape != t.data.shape:
            raise ConfigError(f"{name}: stored shape {arr.shape} != model shape {t.data.shape}")
        t.data = arr.copy()
        t.grad = None


def _check_sample(profile: Profile, sample: SynthSample, prior):
    h, w, _ = sample.image.shape
    if (h, w) != (profile.image_size, profile.image_size):
        raise ConfigError(
            f"sample image is {h}x{w} but profile {profile.name!r} expects "
            f"{profile.image_size}x{profile.image_size}"
        )
    if prior.shape[0] != profile.msa.n_model:
        raise ConfigError(
            f"prior has {prior.shape[0]} points but profile expects {profile.msa.n_model}"
        )


def forward(params: PipelineParams, profile: Profile, sample: SynthSample, prior):
    """Graph-recording forward pass; returns the dense outputs as tensors."""
    _check_sample(profile, sample, np.asarray(prior))
    feature_map = pixelformer.forward(params.pixel, profile.pixel, Tensor(sample.image))
    geometry = pointformer.forward(params.point, profile.point, Tensor(sample.observed))
    deformation, correspondence, model, coords = msa.forward(
        params.fusion, profile.msa, feature_map, sample.pixel_index, geometry, Tensor(prior)
    )
    return {
        "deformation": deformation,
        "correspondence": correspondence,
        "model": model,
        "coords": coords,
    }


def compute_loss(outputs, sample: SynthSample, weights: LossWeights | None = None):
    """Total loss tensor plus the individual parts as floats."""
    weights = weights or LossWeights()
    cd = losses.chamfer(outputs["model"], Tensor(sample.model), mode="mean")
    cor = losses.correspondence_loss(outputs["coords"], Tensor(sample.nocs))
    defo = losses.deformation_reg(outputs["deformation"])
    spar = losses.sparsity_reg(outputs["correspondence"])
    total = losses.total_loss(cd, cor, defo, spar, weights)
    parts = {
        "reconstruction": float(cd.data),
        "correspondence": float(cor.data),
        "deformation": float(defo.data),
        "sparsity": float(spar.data),
    }
    return total, parts


@dataclass
class PipelineResult:
    pose: Pose | None
    model: np.ndarray
    coords: np.ndarray
    loss_parts: dict | None
    total_loss: float | None
    pose_error: str | None = None


def run_pipeline(params: PipelineParams, profile: Profile, sample: SynthSample, prior,
                 ransac: RansacConfig | None = None,
                 weights: LossWeights | None = None) -> PipelineResult:
    """Inference: dense outputs, recovered pose, and losses against ground truth."""
    with no_grad():
        outputs = forward(params, profile, sample, prior)
        total, parts = compute_loss(outputs, sample, weights)
    pose, err = None, None
    try:
        pose = estimate_pose(outputs["coords"].data, sample.observed, ransac)
    except RobustFitError as exc:
        err = str(exc)
    return PipelineResult(
        pose=pose,
        model=outputs["model"].data,
        coords=outputs["coords"].data,
        loss_parts=parts,
        total_loss=float(total.data),
        pose_error=err,
    )


class Adam:
    """Adam with classic L2 weight decay folded into the gradient."""

    def __init__(self, tensors, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=1e-6):
        self.tensors = list(tensors)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = [np.zeros_like(t.data) for t in self.tensors]
        self._v = [np.zeros_like(t.data) for t in self.tensors]

    def zero_grad(self):
        for t in self.tensors:
            t.grad = None

    def step(self):
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for i, t in enumerate(self.tensors):
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            if self.weight_decay:
                g = g + self.weight_decay * t.data
            self._m[i] = self.beta1 * self._m[i] + (1 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1 - self.beta2) * (g * g)
            t.data = t.data - self.lr * (self._m[i] / b1c) / (np.sqrt(self._v[i] / b2c) + self.eps)


@dataclass
class TrainConfig:
    epochs: int = 12
    lr: float = 1e-3
    weight_decay: float = 1e-6
    halve_every: int | None = None  # default: epochs/5, the published cadence
    seed: int = 0
    weights: LossWeights = dataclasses.field(default_factory=LossWeights)


def toy_train(samples, priors, params: PipelineParams, profile: Profile,
              cfg: TrainConfig | None = None, log=None):
    """Overfit-scale trainer; returns the per-epoch loss curve.

    ``samples`` is a sequence of SynthSample (or callables returning one,
    so datasets can stream from disk); ``priors`` maps category to prior
    points. Deterministic for a fixed config seed.
    """
    cfg = cfg or TrainConfig()
    halve_every = cfg.halve_every or max(1, round(cfg.epochs / 5))
    emit = log if log is not None else (lambda line: None)
    w = cfg.weights
    emit(
        f"loss weights: reconstruction={w.reconstruction} correspondence={w.correspondence} "
        f"deformation={w.deformation} sparsity={w.sparsity}"
    )
    emit(f"adam lr={cfg.lr} weight_decay={cfg.weight_decay} halve_every={halve_every}")
    leaves = [t for _, t in named_parameters(params)]
    opt = Adam(leaves, lr=cfg.lr, weight_decay=cfg.weight_decay)
    order_rng = Prng(cfg.seed)
    curve = []
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr * (0.5 ** (epoch // halve_every))
        order = order_rng.derive("epoch", epoch).permutation(len(samples))
        total_sum = 0.0
        part_sums = dict.fromkeys(("reconstruction", "correspondence", "deformation", "sparsity"), 0.0)
        for idx in order:
            item = samples[idx]
            sample = item() if callable(item) else item
            try:
                outputs = forward(params, profile, sample, priors[sample.category])
                total, parts = compute_loss(outputs, sample, w)
            except FloatingPointError as exc:
                raise FloatingPointError(f"{exc} at sample index {idx}") from None
            if not np.isfinite(total.data):
                raise FloatingPointError(f"non-finite loss at sample index {idx}")
            opt.zero_grad()
            total.backward()
            opt.step()
            total_sum += float(total.data)
            for key, val in parts.items():
                part_sums[key] += val
        n = len(samples)
        record = {"epoch": epoch, "lr": opt.lr, "total": total_sum / n}
        record.update({key: val / n for key, val in part_sums.items()})
        curve.append(record)
        emit(
            f"epoch {epoch:3d} lr {opt.lr:.2e} total {record['total']:.5f} "
            f"cd {record['reconstruction']:.5f} cor {record['correspondence']:.5f}"
        )
    return curve


def _model_box(pose: Pose, model_points) -> OrientedBox:
    lo, hi = model_points.min(axis=0), model_points.max(axis=0)
    extents = np.maximum((hi - lo) / 2.0, 1e-6)
    return OrientedBox.from_pose(pose, extents, canonical_center=(lo + hi) / 2.0)


def evaluate_sample(params, profile, sample: SynthSample, prior, ransac_seed=0):
    """Run the pipeline and package the comparison against ground truth."""
    result = run_pipeline(params, profile, sample, prior,
                          ransac=RansacConfig(seed=ransac_seed))
    record = PoseRecord(
        category=sample.category,
        pred=result.pose,
        gt=sample.pose,
        pred_box=None if result.pose is None else _model_box(result.pose, result.model),
        gt_box=_model_box(sample.pose, sample.model),
        symmetry=sample.symmetry,
    )
    cd = float(losses.chamfer(result.model, sample.model, mode="mean").data)
    return record, cd, result


def evaluate_dataset(params, profile, dataset, limit=None):
    """Evaluate a stored dataset; per-sample RANSAC seeds come from the
    sample directory name, so aggregation is order-independent."""
    from .dataio import load_sample

    records, cds = [], {}
    dirs = dataset.samples if limit is None else dataset.samples[:limit]
    for directory in dirs:
        sample = load_sample(directory)
        name = os.path.basename(directory)
        record, cd, _ = evaluate_sample(
            params, profile, sample, dataset.priors[sample.category],
            ransac_seed=zlib.crc32(name.encode("utf-8")),
        )
        records.append(record)
        cds.setdefault(sample.category, []).append((name, cd))
    # aggregate in name order so the result is independent of visit order
    cd_by_cat = {
        cat: float(np.mean([cd for _, cd in sorted(vals)]))
        for cat, vals in sorted(cds.items())
    }
    return records, cd_by_cat
