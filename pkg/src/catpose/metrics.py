"""Evaluation metrics: symmetry-aware rotation error, pose thresholds,
oriented-box IoU by exact polytope clipping, and the precision report."""

from __future__ import annotations

import io
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .pose import Pose

POSE_THRESHOLDS = ((5, 2), (5, 5), (10, 2), (10, 5), (10, 10))
IOU_THRESHOLDS = (0.5, 0.75)
REPORT_COLUMNS = ("IoU50", "IoU75", "5deg2cm", "5deg5cm", "10deg2cm", "10deg5cm", "10deg10cm")


class SymmetryTag(Enum):
    NONE = "none"
    AXIS_Y = "axis_y"


def category_symmetry(category: str, handle_present: bool = True) -> SymmetryTag:
    """bottle/bowl/can revolve around y; a mug only counts as symmetric
    when its handle is absent."""
    if category in ("bottle", "bowl", "can"):
        return SymmetryTag.AXIS_Y
    if category == "mug" and not handle_present:
        return SymmetryTag.AXIS_Y
    return SymmetryTag.NONE


def _check_rotation(r, label):
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3) or np.abs(r.T @ r - np.eye(3)).max() > 1e-6 or np.linalg.det(r) < 0:
        raise ValueError(f"{label} is not a rotation matrix")
    return r


def rotation_error(ra, rb, sym: SymmetryTag = SymmetryTag.NONE) -> float:
    """Rotation discrepancy in degrees; spin about the symmetry axis is
    ignored for axis-symmetric objects."""
    ra = _check_rotation(ra, "first argument")
    rb = _check_rotation(rb, "second argument")
    if sym == SymmetryTag.AXIS_Y:
        # angle between the transformed symmetry axes; the atan2 form is the
        # same quantity as arccos(dot) but stays accurate near zero
        ya, yb = ra[:, 1], rb[:, 1]
        return float(np.degrees(np.arctan2(np.linalg.norm(np.cross(ya, yb)), ya @ yb)))
    cosang = np.clip((np.trace(ra.T @ rb) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(cosang)))


def translation_error(ta, tb) -> float:
    return float(np.linalg.norm(np.asarray(ta) - np.asarray(tb)))


def pose_within(pred: Pose, gt: Pose, n_deg: float, m_cm: float,
                sym: SymmetryTag = SymmetryTag.NONE) -> bool:
    """The n-degree / m-centimetre correctness gate."""
    return (
        rotation_error(pred.rotation, gt.rotation, sym) <= n_deg
        and translation_error(pred.translation, gt.translation) <= m_cm / 100.0
    )


@dataclass
class OrientedBox:
    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.half_extents = np.asarray(self.half_extents, dtype=np.float64)
        self.rotation = _check_rotation(self.rotation, "box rotation")
        if (self.half_extents <= 0).any():
            raise ValueError(f"box extents must be positive, got {self.half_extents}")

    @classmethod
    def from_pose(cls, pose: Pose, half_extents, canonical_center=(0.0, 0.0, 0.0)):
        """Box of a canonical model under a similarity transform."""
        return cls(
            center=pose.apply(np.asarray(canonical_center)),
            half_extents=pose.scale * np.asarray(half_extents, dtype=np.float64),
            rotation=pose.rotation,
        )

    @property
    def volume(self):
        return float(8.0 * np.prod(self.half_extents))

    def corners(self):
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64
        )
        return self.center + (signs * self.half_extents) @ self.rotation.T

    def contains(self, pts, tol=0.0):
        local = (np.asarray(pts) - self.center) @ self.rotation
        return (np.abs(local) <= self.half_extents + tol).all(axis=-1)


_BOX_EDGES = (
    (0, 1), (2, 3), (4, 5), (6, 7),
    (0, 2), (1, 3), (4, 6), (5, 7),
    (0, 4), (1, 5), (2, 6), (3, 7),
)


def _edge_face_points(box_a: OrientedBox, box_b: OrientedBox, tol):
    """Intersections of box_a's edges with box_b's face planes, kept when
    inside both boxes."""
    pts = []
    corners = box_a.corners()
    for i, j in _BOX_EDGES:
        p, q = corners[i], corners[j]
        d = q - p
        for axis in range(3):
            u = box_b.rotation[:, axis]
            for side in (-1.0, 1.0):
                denom = u @ d
                if abs(denom) < 1e-15:
                    continue
                plane = u @ box_b.center + side * box_b.half_extents[axis]
                t = (plane - u @ p) / denom
                if -1e-12 <= t <= 1.0 + 1e-12:
                    x = p + np.clip(t, 0.0, 1.0) * d
                    if box_b.contains(x, tol) and box_a.contains(x, tol):
                        pts.append(x)
    return pts


def intersection_volume(a: OrientedBox, b: OrientedBox) -> float:
    """Exact intersection volume of two oriented boxes via vertex
    enumeration of the intersection polytope."""
    tol = 1e-9 * (np.linalg.norm(a.half_extents) + np.linalg.norm(b.half_extents))
    pts = []
    ca, cb = a.corners(), b.corners()
    pts.extend(ca[b.contains(ca, tol)])
    pts.extend(cb[a.contains(cb, tol)])
    pts.extend(_edge_face_points(a, b, tol))
    pts.extend(_edge_face_points(b, a, tol))
    if len(pts) < 4:
        return 0.0
    try:
        return float(ConvexHull(np.asarray(pts)).volume)
    except QhullError:
        return 0.0  # flat or degenerate contact


def iou3d(a: OrientedBox, b: OrientedBox) -> float:
    """Intersection-over-union of two oriented boxes, in [0, 1]."""
    inter = intersection_volume(a, b)
    union = a.volume + b.volume - inter
    return inter / union if union > 0 else 0.0


@dataclass
class PoseRecord:
    """One evaluated instance: predicted vs ground-truth pose and boxes.

    ``pred`` may be None when robust pose recovery failed; such a record
    fails every threshold instead of being dropped.
    """

    category: str
    pred: Pose | None
    gt: Pose
    pred_box: OrientedBox | None
    gt_box: OrientedBox
    symmetry: SymmetryTag = SymmetryTag.NONE


def _record_passes(rec: PoseRecord):
    if rec.pred is None or rec.pred_box is None:
        return [False] * len(REPORT_COLUMNS)
    iou = iou3d(rec.pred_box, rec.gt_box)
    row = [iou >= thr for thr in IOU_THRESHOLDS]
    row += [pose_within(rec.pred, rec.gt, n, m, rec.symmetry) for n, m in POSE_THRESHOLDS]
    return row


@dataclass
class PrecisionReport:
    categories: dict  # name -> tuple of fractions, one per REPORT_COLUMNS
    average: tuple

    def to_text(self) -> str:
        width = max([len("category"), len("average")] + [len(c) for c in self.categories])
        out = io.StringIO()
        out.write("category".ljust(width) + "  " + "  ".join(f"{c:>9}" for c in REPORT_COLUMNS) + "\n")
        for name, row in self.categories.items():
            out.write(name.ljust(width) + "  " + "  ".join(f"{v:9.4f}" for v in row) + "\n")
        out.write("average".ljust(width) + "  " + "  ".join(f"{v:9.4f}" for v in self.average) + "\n")
        return out.getvalue()

    def to_csv(self) -> str:
        lines = ["category," + ",".join(REPORT_COLUMNS)]
        for name, row in self.categories.items():
            lines.append(name + "," + ",".join(f"{v:.6f}" for v in row))
        lines.append("average," + ",".join(f"{v:.6f}" for v in self.average))
        return "\n".join(lines) + "\n"


def precision_report(records) -> PrecisionReport:
    """Fraction of instances passing each threshold, per category and
    averaged over the categories that are present."""
    records = list(records)
    if not records:
        raise ValueError("no records to report on")
    by_cat = {}
    for rec in records:
        by_cat.setdefault(rec.category, []).append(_record_passes(rec))
    table = {
        name: tuple(np.mean([row[k] for row in rows]) for k in range(len(REPORT_COLUMNS)))
        for name, rows in sorted(by_cat.items())
    }
    average = tuple(np.mean([row[k] for row in table.values()]) for k in range(len(REPORT_COLUMNS)))
    return PrecisionReport(categories=table, average=average)
