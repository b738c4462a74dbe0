"""Synthetic category shapes with exact ground truth.

Parametric stand-ins for real scans: surfaces of revolution (bottle, bowl,
can, mug body), hinged panel pairs (laptop) and a box+cylinder union
(camera proxy). Each instance is sampled on a fixed canonical grid so
instances of a category are positionwise aligned, which is what lets the
mean-shape prior be built by plain averaging. The renderer projects the
canonical points orthographically with a z-buffer, so every observed
point is an exact similarity transform of a known model row and carries
its source pixel index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .metrics import SymmetryTag, category_symmetry
from .pose import Pose
from .rng import Prng

CATEGORIES = ("bottle", "bowl", "can", "laptop", "mug", "camera_proxy")

# documented parameter ranges per category; draws are uniform unless noted
PARAM_RANGES = {
    "bottle": {"body_radius": (0.25, 0.42), "neck_frac": (0.3, 0.6),
               "shoulder_start": (0.5, 0.72), "shoulder_width": (0.08, 0.2)},
    "bowl": {"rim_radius": (0.55, 0.95), "base_frac": (0.2, 0.45), "curve": (0.5, 1.5)},
    "can": {"aspect": (0.5, 1.4)},
    "laptop": {"width": (0.8, 1.3), "depth": (0.6, 0.95), "hinge_deg": (55.0, 125.0)},
    "mug": {"aspect": (0.7, 1.15), "taper": (0.85, 1.0), "handle_frac": (0.32, 0.45)},
    "camera_proxy": {"width": (0.9, 1.3), "height": (0.55, 0.8), "depth": (0.4, 0.65),
                     "lens_radius": (0.12, 0.2), "lens_length": (0.2, 0.45)},
}

PANEL_THICKNESS = 0.02
MUG_HANDLE_POINT_FRAC = 0.125
CAMERA_LENS_POINT_FRAC = 0.2


class UnknownCategoryError(ValueError):
    pass


class InsufficientVisibilityError(RuntimeError):
    """Fewer visible points than requested; the caller should resample the pose."""

    def __init__(self, needed, got):
        super().__init__(f"only {got} visible points, need {needed}")
        self.needed = needed
        self.got = got


@dataclass
class Instance:
    """A canonical model: unit-diagonal, bbox-centred, with surface colors."""

    category: str
    points: np.ndarray  # (n_model, 3)
    colors: np.ndarray  # (n_model, 3) in [0, 1]
    handle_present: bool = True

    @property
    def symmetry(self) -> SymmetryTag:
        return category_symmetry(self.category, self.handle_present)


@dataclass
class SynthSample:
    """One rendered training/eval sample with exact ground truth."""

    image: np.ndarray          # (h, w, 3) in [0, 1]
    observed: np.ndarray       # (n, 3) camera-frame points
    pixel_index: np.ndarray    # (n,) flat row-major source pixel per point
    pose: Pose                 # ground truth
    model: np.ndarray          # (n_model, 3) canonical instance model
    nocs: np.ndarray           # (n, 3) canonical coordinates of observed points
    model_index: np.ndarray    # (n,) row of `model` each observed point came from
    category: str
    symmetry: SymmetryTag
    handle_present: bool = True


def _resolve_params(category, prng, overrides):
    if category not in PARAM_RANGES:
        raise UnknownCategoryError(f"unknown category {category!r}; known: {CATEGORIES}")
    out = {}
    for key, (lo, hi) in PARAM_RANGES[category].items():
        if overrides and key in overrides:
            v = float(overrides[key])
            if not lo <= v <= hi:
                raise ValueError(f"{category}.{key}={v} outside documented range [{lo}, {hi}]")
            out[key] = v
        else:
            out[key] = float(prng.uniform(lo, hi))
    if overrides:
        unknown = set(overrides) - set(PARAM_RANGES[category]) - {"handle"}
        if unknown:
            raise ValueError(f"unknown parameters for {category}: {sorted(unknown)}")
    return out


def _factor_grid(n):
    g = max(1, math.isqrt(n))
    while n % g:
        g -= 1
    return g, n // g


def _revolve(radius_of_t, n_points, height=1.0):
    """Fixed angle x height grid on a surface of revolution about +y.

    Height levels sit at area quantiles so points are uniform by area; the
    canonical ordering is height-major, angle-minor.
    """
    g_h, g_theta = _factor_grid(n_points)
    t_fine = np.linspace(0.0, 1.0, 2048)
    r_fine = radius_of_t(t_fine)
    dr = np.gradient(r_fine, t_fine * height)
    density = np.maximum(r_fine, 1e-9) * np.sqrt(1.0 + dr * dr)
    cum = np.concatenate([[0.0], np.cumsum((density[1:] + density[:-1]) * 0.5 * np.diff(t_fine))])
    cum /= cum[-1]
    t_levels = np.interp((np.arange(g_h) + 0.5) / g_h, cum, t_fine)
    thetas = 2.0 * np.pi * np.arange(g_theta) / g_theta
    pts = np.empty((g_h * g_theta, 3))
    for k, t in enumerate(t_levels):
        r = float(radius_of_t(np.array([t]))[0])
        y = (t - 0.5) * height
        pts[k * g_theta : (k + 1) * g_theta, 0] = r * np.cos(thetas)
        pts[k * g_theta : (k + 1) * g_theta, 1] = y
        pts[k * g_theta : (k + 1) * g_theta, 2] = r * np.sin(thetas)
    return pts


def _rect_sheet(n_points, origin, u_vec, v_vec):
    """n_points on a fixed grid over the parallelogram origin + a*u + b*v."""
    ga, gb = _factor_grid(n_points)
    a = (np.arange(ga) + 0.5) / ga
    b = (np.arange(gb) + 0.5) / gb
    aa, bb = np.meshgrid(a, b, indexing="ij")
    return (
        np.asarray(origin)[None, :]
        + aa.reshape(-1, 1) * np.asarray(u_vec)[None, :]
        + bb.reshape(-1, 1) * np.asarray(v_vec)[None, :]
    )


def _slab(n_points, origin, u_vec, v_vec, normal, thickness):
    """Two parallel sheets; side walls of thin slabs are ignored."""
    half = n_points // 2
    normal = np.asarray(normal) * (thickness / 2.0)
    top = _rect_sheet(half, np.asarray(origin) + normal, u_vec, v_vec)
    bottom = _rect_sheet(n_points - half, np.asarray(origin) - normal, u_vec, v_vec)
    return np.concatenate([top, bottom], axis=0)


def _bottle_points(p, n):
    knots_t = np.array([0.0, p["shoulder_start"], p["shoulder_start"] + p["shoulder_width"], 1.0])
    knots_r = np.array([p["body_radius"], p["body_radius"],
                        p["body_radius"] * p["neck_frac"], p["body_radius"] * p["neck_frac"]])
    return _revolve(lambda t: np.interp(t, knots_t, knots_r), n)


def _bowl_points(p, n):
    rim, base, curve = p["rim_radius"], p["base_frac"] * p["rim_radius"], p["curve"]

    def radius(t):
        return base + (rim - base) * np.power(t, curve)

    return _revolve(radius, n, height=0.6)


def _can_points(p, n):
    r = 0.5 * p["aspect"]
    return _revolve(lambda t: np.full_like(t, r), n)


def _mug_points(p, n, handle_present):
    body_r = 0.5 * p["aspect"]
    taper = p["taper"]
    n_handle = int(n * MUG_HANDLE_POINT_FRAC) if handle_present else 0
    body = _revolve(lambda t: body_r * (taper + (1 - taper) * t), n - n_handle, height=1.0)
    if not n_handle:
        return body
    hr = p["handle_frac"] * 0.5  # arc radius
    tube = 0.035
    g_arc, g_tube = _factor_grid(n_handle)
    phis = np.linspace(-0.5 * np.pi, 0.5 * np.pi, g_arc)
    psis = 2.0 * np.pi * np.arange(g_tube) / g_tube
    rows = []
    cx = body_r * taper + body_r * 0.05
    for phi in phis:
        centre = np.array([cx + hr * np.sin(phi), hr * np.cos(phi) - 0.0, 0.0])
        tang = np.array([np.cos(phi), -np.sin(phi), 0.0])
        for psi in psis:
            offset = tube * (np.cos(psi) * np.array([np.sin(phi), np.cos(phi), 0.0])
                             + np.sin(psi) * np.array([0.0, 0.0, 1.0]))
            rows.append(centre + offset)
    handle = np.asarray(rows)
    return np.concatenate([body, handle], axis=0)


def _laptop_points(p, n):
    w, d = p["width"], p["depth"]
    alpha = np.radians(p["hinge_deg"])
    half = n // 2
    base = _slab(half, (-w / 2, 0.0, 0.0), (w, 0, 0), (0, 0, d), (0, 1, 0), PANEL_THICKNESS)
    lid_dir = np.array([0.0, np.sin(alpha), -np.cos(alpha)])
    lid_normal = np.array([0.0, np.cos(alpha), np.sin(alpha)])
    lid = _slab(n - half, (-w / 2, 0.0, 0.0), (w, 0, 0), lid_dir * d, lid_normal, PANEL_THICKNESS)
    return np.concatenate([base, lid], axis=0)


def _camera_points(p, n):
    w, h, d = p["width"], p["height"], p["depth"]
    n_lens = int(n * CAMERA_LENS_POINT_FRAC)
    n_box = n - n_lens
    # fixed allocation over the six faces, remainder to the front face
    fractions = (0.22, 0.22, 0.17, 0.17, 0.11, 0.11)
    counts = [int(f * n_box) for f in fractions]
    counts[0] += n_box - sum(counts)
    x, y, z = w / 2, h / 2, d / 2
    faces = [
        _rect_sheet(counts[0], (-x, -y, z), (w, 0, 0), (0, h, 0)),    # front (+z)
        _rect_sheet(counts[1], (-x, -y, -z), (w, 0, 0), (0, h, 0)),   # back
        _rect_sheet(counts[2], (-x, y, -z), (w, 0, 0), (0, 0, d)),    # top
        _rect_sheet(counts[3], (-x, -y, -z), (w, 0, 0), (0, 0, d)),   # bottom
        _rect_sheet(counts[4], (-x, -y, -z), (0, h, 0), (0, 0, d)),   # left
        _rect_sheet(counts[5], (x, -y, -z), (0, h, 0), (0, 0, d)),    # right
    ]
    rl, ll = p["lens_radius"], p["lens_length"]
    g_len, g_theta = _factor_grid(n_lens)
    thetas = 2.0 * np.pi * np.arange(g_theta) / g_theta
    lens = np.empty((n_lens, 3))
    for k in range(g_len):
        zz = z + (k + 0.5) / g_len * ll
        sl = slice(k * g_theta, (k + 1) * g_theta)
        lens[sl, 0] = rl * np.cos(thetas)
        lens[sl, 1] = rl * np.sin(thetas)
        lens[sl, 2] = zz
    return np.concatenate([*faces, lens], axis=0)


def _normalize(points):
    lo, hi = points.min(axis=0), points.max(axis=0)
    centre = (lo + hi) / 2.0
    diag = float(np.linalg.norm(hi - lo))
    return (points - centre) / diag


def _colorize(points, prng):
    base = prng.uniform(0.2, 0.8, 3)
    mix = prng.uniform(-0.8, 0.8, (3, 3))
    return np.clip(base + points @ mix, 0.05, 0.95)


def gen_instance(category, prng: Prng, params=None, n_points=1024) -> Instance:
    """Draw one canonical instance; same seed, same instance."""
    p = _resolve_params(category, prng, params)
    handle_present = True
    if category == "bottle":
        pts = _bottle_points(p, n_points)
    elif category == "bowl":
        pts = _bowl_points(p, n_points)
    elif category == "can":
        pts = _can_points(p, n_points)
    elif category == "mug":
        if params and "handle" in params:
            handle_present = bool(params["handle"])
        else:
            handle_present = bool(prng.uniform() < 0.75)
        pts = _mug_points(p, n_points, handle_present)
    elif category == "laptop":
        pts = _laptop_points(p, n_points)
    else:
        pts = _camera_points(p, n_points)
    pts = _normalize(pts)
    return Instance(
        category=category,
        points=pts,
        colors=_colorize(pts, prng),
        handle_present=handle_present,
    )


def build_prior(category, k, prng: Prng, n_points=1024) -> np.ndarray:
    """Positionwise mean of k seeded instances, renormalised to unit diagonal."""
    if k < 1:
        raise ValueError("need at least one instance for a prior")
    acc = np.zeros((n_points, 3))
    for i in range(k):
        acc += gen_instance(category, prng.derive("prior", i), n_points=n_points).points
    return _normalize(acc / k)


@dataclass
class PoseRanges:
    translation_xy: float = 0.1
    translation_z: tuple = (0.6, 1.0)
    scale: tuple = (0.1, 0.4)  # log-uniform, object diagonal in meters


def sample_pose(prng: Prng, ranges: PoseRanges | None = None) -> Pose:
    """Uniform rotation, boxed translation, log-uniform scale."""
    ranges = ranges or PoseRanges()
    q = prng.normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    rotation = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
    tx, ty = prng.uniform(-ranges.translation_xy, ranges.translation_xy, 2)
    tz = prng.uniform(*ranges.translation_z)
    lo, hi = np.log(ranges.scale[0]), np.log(ranges.scale[1])
    scale = float(np.exp(prng.uniform(lo, hi)))
    return Pose(rotation=rotation, translation=np.array([tx, ty, tz]), scale=scale)


def render_sample(instance: Instance, pose: Pose, image_size: int, n_observed: int,
                  prng: Prng, window_margin: float = 1.15) -> SynthSample:
    """Orthographic z-buffered point render with exact pixel-point bookkeeping.

    The window zooms to the projected object (instance-crop convention).
    Observed points are the z-buffer winners, subsampled to ``n_observed``;
    each keeps its source pixel index and canonical model row.
    """
    cam = pose.apply(instance.points)
    n_model = cam.shape[0]
    xy = cam[:, :2]
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    side = float(max(hi[0] - lo[0], hi[1] - lo[1])) * window_margin
    side = max(side, 1e-6)
    centre = (lo + hi) / 2.0
    pw = side / image_size
    cols = np.clip(((cam[:, 0] - (centre[0] - side / 2)) / pw).astype(np.intp), 0, image_size - 1)
    rows = np.clip((((centre[1] + side / 2) - cam[:, 1]) / pw).astype(np.intp), 0, image_size - 1)
    pix = rows * image_size + cols

    order = np.lexsort((cam[:, 2], pix))  # by pixel, then nearest first
    first = np.diff(pix[order], prepend=-1) != 0
    winners = order[first]
    if winners.size < n_observed:
        raise InsufficientVisibilityError(n_observed, winners.size)

    image = np.zeros((image_size, image_size, 3))
    image[rows[winners], cols[winners]] = instance.colors[winners]

    keep = np.sort(prng.choice(winners.size, n_observed, replace=False))
    selected = winners[keep]
    return SynthSample(
        image=image,
        observed=cam[selected],
        pixel_index=pix[selected].astype(np.int64),
        pose=pose,
        model=instance.points,
        nocs=instance.points[selected],
        model_index=selected.astype(np.int64),
        category=instance.category,
        symmetry=instance.symmetry,
        handle_present=instance.handle_present,
    )


def make_sample(category, sample_prng: Prng, image_size, n_observed, n_model,
                max_attempts: int = 32) -> SynthSample:
    """Instance + pose + render, resampling the pose when too little is visible."""
    instance = gen_instance(category, sample_prng.derive("shape"), n_points=n_model)
    for attempt in range(max_attempts):
        pose = sample_pose(sample_prng.derive("pose", attempt))
        try:
            return render_sample(
                instance, pose, image_size, n_observed, sample_prng.derive("render", attempt)
            )
        except InsufficientVisibilityError:
            continue
    raise InsufficientVisibilityError(n_observed, -1)
