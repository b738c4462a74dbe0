"""Similarity-transform recovery: closed-form alignment plus RANSAC.

Pure numpy, no autodiff: pose recovery sits behind the learned pipeline
and is never differentiated through.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DegenerateInputError(ValueError):
    """Too few or collapsed points for a similarity fit."""


class RobustFitError(RuntimeError):
    """RANSAC found no candidate meeting the inlier requirement.

    Carries the best attempt (pose, inlier mask) for diagnostics.
    """

    def __init__(self, message, best_pose=None, best_mask=None):
        super().__init__(message)
        self.best_pose = best_pose
        self.best_mask = best_mask


@dataclass
class Pose:
    """Rotation (3x3, det +1), translation (meters) and isotropic scale."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float

    def apply(self, points):
        return self.scale * (np.asarray(points) @ self.rotation.T) + self.translation

    def is_valid(self, tol=1e-9):
        r = self.rotation
        return (
            np.abs(r.T @ r - np.eye(3)).max() < tol
            and abs(np.linalg.det(r) - 1.0) < tol
            and self.scale > 0
        )


@dataclass
class RansacConfig:
    iterations: int = 128
    sample_size: int = 4
    inlier_threshold: float | None = None  # None: 0.02 x source bbox diagonal
    min_inlier_ratio: float = 0.1
    seed: int = 0

    def validate(self):
        if self.sample_size < 3:
            raise ValueError(f"sample size must be >= 3, got {self.sample_size}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.inlier_threshold is not None and self.inlier_threshold <= 0:
            raise ValueError(f"inlier threshold must be positive, got {self.inlier_threshold}")
        return self


def umeyama(src, dst) -> Pose:
    """Least-squares similarity aligning src onto dst (min sum |dst - (sR src + t)|^2).

    Cross-covariance SVD with a sign-corrected last singular direction, so
    the returned rotation is always proper even for reflected or
    rank-deficient inputs.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise DegenerateInputError(f"need matching n x 3 arrays, got {src.shape} and {dst.shape}")
    n = src.shape[0]
    if n < 3:
        raise DegenerateInputError(f"need at least 3 correspondences, got {n}")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    src_c = src - mu_s
    dst_c = dst - mu_d
    var_src = (src_c * src_c).sum() / n
    if var_src < 1e-24:
        raise DegenerateInputError("source points are coincident; similarity is undefined")
    cov = dst_c.T @ src_c / n
    u, d, vt = np.linalg.svd(cov)
    s_fix = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_fix[2] = -1.0
    rotation = u @ np.diag(s_fix) @ vt
    scale = float((d * s_fix).sum() / var_src)
    translation = mu_d - scale * rotation @ mu_s
    return Pose(rotation=rotation, translation=translation, scale=scale)


def _residuals(pose: Pose, src, dst):
    return np.linalg.norm(dst - pose.apply(src), axis=1)


def _candidate_poses(src, dst, cfg: RansacConfig):
    """Deterministic stream of (iteration, pose) minimal-sample fits."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))
    n = src.shape[0]
    for it in range(cfg.iterations):
        pick = rng.choice(n, size=cfg.sample_size, replace=False)
        try:
            yield it, umeyama(src[pick], dst[pick])
        except DegenerateInputError:
            continue


def ransac_umeyama(src, dst, cfg: RansacConfig | None = None):
    """Robust similarity fit; returns (pose, inlier_mask).

    Keeps the candidate with the most inliers (ties: lower mean squared
    inlier residual, then earlier iteration), then refits on its inliers.
    """
    cfg = (cfg or RansacConfig()).validate()
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    n = src.shape[0]
    if n < cfg.sample_size:
        raise DegenerateInputError(f"{n} points but sample size {cfg.sample_size}")
    threshold = cfg.inlier_threshold
    if threshold is None:
        diag = np.linalg.norm(src.max(axis=0) - src.min(axis=0))
        threshold = 0.02 * diag
    if threshold <= 0:
        raise DegenerateInputError("source bounding box is degenerate; supply a threshold")

    best = None  # (count, -mse, -iteration, mask)
    for it, pose in _candidate_poses(src, dst, cfg):
        res = _residuals(pose, src, dst)
        mask = res < threshold
        count = int(mask.sum())
        if count < cfg.sample_size:
            continue
        mse = float((res[mask] ** 2).mean())
        key = (count, -mse, -it)
        if best is None or key > best[0]:
            best = (key, mask, pose)

    min_inliers = max(cfg.sample_size, int(np.ceil(cfg.min_inlier_ratio * n)))
    if best is None or best[0][0] < min_inliers:
        raise RobustFitError(
            f"no candidate reached the minimum inlier count {min_inliers}",
            best_pose=None if best is None else best[2],
            best_mask=None if best is None else best[1],
        )
    mask = best[1]
    refined = umeyama(src[mask], dst[mask])
    return refined, mask


def estimate_pose(coords, observed, cfg: RansacConfig | None = None) -> Pose:
    """Align canonical-space coordinates to the observed camera-frame cloud."""
    coords = np.asarray(coords, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)
    if coords.shape != observed.shape:
        raise DegenerateInputError(
            f"coordinate rows {coords.shape} do not match observed rows {observed.shape}"
        )
    pose, _ = ransac_umeyama(coords, observed, cfg)
    return pose
