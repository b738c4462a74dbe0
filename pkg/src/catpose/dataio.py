"""Persistence: point-set text files, binary images, tagged weight files,
dataset manifests.

Formats are bit-exact and little-endian:
  - point sets: text, a "N 3" header line then N lines of 3 decimals
    (printed with %.17g so float64 values round-trip);
  - images: uint32 header (height, width, 3) then float32 pixel data;
  - weights: per tensor, uint32 name length, utf-8 name bytes, uint32
    rank, uint32 dims, float64 data; tensors concatenated until EOF.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .metrics import SymmetryTag
from .pose import Pose
from .profiles import get_profile
from .rng import Prng
from .synth import SynthSample, build_prior, make_sample


class FileFormatError(ValueError):
    """Corrupt or truncated file; carries the byte offset of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


# --- point sets -----------------------------------------------------------


def write_points(path, points):
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"expected an N x 3 array, got {points.shape}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{points.shape[0]} 3\n")
        for row in points:
            fh.write(f"{row[0]:.17g} {row[1]:.17g} {row[2]:.17g}\n")


def read_points(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    offset = 0
    lines = raw.split(b"\n")
    try:
        n_str, dim_str = lines[0].split()
        n, dim = int(n_str), int(dim_str)
    except (ValueError, IndexError):
        raise FileFormatError("malformed point-set header", 0) from None
    if dim != 3:
        raise FileFormatError(f"point dimension must be 3, got {dim}", 0)
    offset = len(lines[0]) + 1
    out = np.empty((n, 3))
    for i in range(n):
        if i + 1 >= len(lines):
            raise FileFormatError(f"expected {n} rows, file ends after {i}", offset)
        parts = lines[i + 1].split()
        if len(parts) != 3:
            raise FileFormatError(f"row {i} has {len(parts)} fields, expected 3", offset)
        try:
            out[i] = [float(p) for p in parts]
        except ValueError:
            raise FileFormatError(f"row {i} holds a non-numeric field", offset) from None
        offset += len(lines[i + 1]) + 1
    return out


# --- images ----------------------------------------------------------------


def write_image(path, image):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 image, got {image.shape}")
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<III", h, w, 3))
        fh.write(image.astype("<f4").tobytes(order="C"))


def read_image(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12:
        raise FileFormatError("image header truncated", len(raw))
    h, w, c = struct.unpack_from("<III", raw, 0)
    if c != 3:
        raise FileFormatError(f"channel count must be 3, got {c}", 8)
    need = 12 + h * w * 3 * 4
    if len(raw) < need:
        raise FileFormatError(f"image data truncated, expected {need} bytes", len(raw))
    data = np.frombuffer(raw, dtype="<f4", count=h * w * 3, offset=12)
    return data.reshape(h, w, 3).astype(np.float64)


# --- weights ----------------------------------------------------------------


def write_weights(path, tensors):
    """``tensors`` is an ordered mapping of name to ndarray."""
    with open(path, "wb") as fh:
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes(order="C"))


def read_weights(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    out = {}
    offset = 0
    total = len(raw)
    while offset < total:
        if offset + 4 > total:
            raise FileFormatError("truncated tensor name length", offset)
        (name_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        if offset + name_len > total:
            raise FileFormatError("truncated tensor name", offset)
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        if offset + 4 > total:
            raise FileFormatError(f"truncated rank of {name!r}", offset)
        (rank,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        if offset + 4 * rank > total:
            raise FileFormatError(f"truncated dims of {name!r}", offset)
        dims = struct.unpack_from(f"<{rank}I", raw, offset)
        offset += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        if offset + 8 * count > total:
            raise FileFormatError(f"truncated data of {name!r}", offset)
        out[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(dims).copy()
        offset += 8 * count
    return out


# --- samples and manifests ---------------------------------------------------


def save_sample(directory, sample: SynthSample):
    os.makedirs(directory, exist_ok=True)
    write_image(os.path.join(directory, "image.bin"), sample.image)
    write_points(os.path.join(directory, "observed.txt"), sample.observed)
    write_points(os.path.join(directory, "nocs.txt"), sample.nocs)
    write_points(os.path.join(directory, "model.txt"), sample.model)
    meta = {
        "category": sample.category,
        "symmetry": sample.symmetry.value,
        "handle_present": sample.handle_present,
        "rotation": sample.pose.rotation.tolist(),
        "translation": sample.pose.translation.tolist(),
        "scale": sample.pose.scale,
        "pixel_index": sample.pixel_index.tolist(),
        "model_index": sample.model_index.tolist(),
    }
    with open(os.path.join(directory, "meta.json"), "w", encoding="ascii") as fh:
        json.dump(meta, fh, indent=0, sort_keys=True)


def load_sample(directory) -> SynthSample:
    with open(os.path.join(directory, "meta.json"), "r", encoding="ascii") as fh:
        meta = json.load(fh)
    pose = Pose(
        rotation=np.array(meta["rotation"]),
        translation=np.array(meta["translation"]),
        scale=float(meta["scale"]),
    )
    return SynthSample(
        image=read_image(os.path.join(directory, "image.bin")),
        observed=read_points(os.path.join(directory, "observed.txt")),
        pixel_index=np.asarray(meta["pixel_index"], dtype=np.int64),
        pose=pose,
        model=read_points(os.path.join(directory, "model.txt")),
        nocs=read_points(os.path.join(directory, "nocs.txt")),
        model_index=np.asarray(meta["model_index"], dtype=np.int64),
        category=meta["category"],
        symmetry=SymmetryTag(meta["symmetry"]),
        handle_present=bool(meta["handle_present"]),
    )


@dataclass
class Dataset:
    profile_name: str
    seed: int
    priors: dict  # category -> (n_model, 3) prior points
    samples: list  # list of sample directories (absolute)
    root: str

    def load(self, index) -> SynthSample:
        return load_sample(self.samples[index])

    def __len__(self):
        return len(self.samples)


PRIOR_INSTANCES = 12


def generate_dataset(out_dir, categories, per_category, seed, profile_name="desk"):
    """Write priors, samples and a manifest; bit-reproducible per seed."""
    profile = get_profile(profile_name)
    root = Prng(seed)
    os.makedirs(os.path.join(out_dir, "priors"), exist_ok=True)
    priors = {}
    for cat in categories:
        prior = build_prior(cat, PRIOR_INSTANCES, root.derive("prior", cat),
                            n_points=profile.n_model)
        priors[cat] = prior
        write_points(os.path.join(out_dir, "priors", f"{cat}.txt"), prior)
    entries = []
    for cat in categories:
        for i in range(per_category):
            sample = make_sample(
                cat, root.derive("sample", cat, i),
                profile.image_size, profile.n_observed, profile.n_model,
            )
            rel = os.path.join("samples", f"{cat}_{i:04d}")
            save_sample(os.path.join(out_dir, rel), sample)
            entries.append({"category": cat, "dir": rel, "seed_keys": ["sample", cat, i]})
    manifest = {
        "profile": profile_name,
        "seed": seed,
        "categories": list(categories),
        "per_category": per_category,
        "prior_instances": PRIOR_INSTANCES,
        "priors": {cat: os.path.join("priors", f"{cat}.txt") for cat in categories},
        "samples": entries,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="ascii") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return path


def load_manifest(path) -> Dataset:
    with open(path, "r", encoding="ascii") as fh:
        manifest = json.load(fh)
    root = os.path.dirname(os.path.abspath(path))
    missing = [e["dir"] for e in manifest["samples"]
               if not os.path.isfile(os.path.join(root, e["dir"], "meta.json"))]
    if missing:
        raise FileNotFoundError(f"manifest references missing sample dirs: {missing[:3]}")
    priors = {
        cat: read_points(os.path.join(root, rel)) for cat, rel in manifest["priors"].items()
    }
    return Dataset(
        profile_name=manifest["profile"],
        seed=manifest["seed"],
        priors=priors,
        samples=[os.path.join(root, e["dir"]) for e in manifest["samples"]],
        root=root,
    )
