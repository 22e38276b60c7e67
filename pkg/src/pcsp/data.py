"""Dataset ingestion, normalization, synthetic shape generation and
batch assembly.

Point clouds at this layer are plain float32 ndarrays of shape [n, 3];
the training layer wraps them into tensors. File formats:

* xyz-text: one point per line, three decimal floats separated by single
  spaces; lines starting with '#' (and blank lines) are ignored.
* xyz-binary: magic "PCXY", little-endian uint32 point count, then
  count*3 little-endian float32 values.
* manifest: UTF-8 text, one record per line,
  "partial_path<TAB>complete_path<TAB>category", paths relative to the
  manifest's directory.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (BoundsError, ConfigError, EmptyInputError, ParseError)
from .pointops import fps

XYZ_MAGIC = b"PCXY"


@dataclass
class Sample:
    partial: np.ndarray
    complete: np.ndarray
    category: str


class Dataset:
    """In-memory list of (partial, complete, category) samples."""

    def __init__(self, samples):
        self.samples = list(samples)

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def categories(self):
        return sorted({s.category for s in self.samples})


def parse_cloud(path, fmt="xyz-text"):
    if fmt == "xyz-text":
        return _parse_text(path)
    if fmt == "xyz-binary":
        return _parse_binary(path)
    raise ConfigError(f"unknown cloud format {fmt!r}")


def _parse_text(path):
    pts = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            tokens = stripped.split(" ")
            if len(tokens) != 3:
                raise ParseError(
                    f"{path}: line {lineno}: expected 3 space-separated "
                    f"values, got {len(tokens)}")
            try:
                pts.append([float(t) for t in tokens])
            except ValueError:
                raise ParseError(
                    f"{path}: line {lineno}: non-numeric token in "
                    f"{stripped!r}")
    if not pts:
        raise EmptyInputError(f"{path}: no points found")
    return np.asarray(pts, dtype=np.float32)


def _parse_binary(path):
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 8:
            raise ParseError(f"{path}: truncated header at byte {len(head)}")
        if head[:4] != XYZ_MAGIC:
            raise ParseError(f"{path}: bad magic {head[:4]!r}")
        count = struct.unpack("<I", head[4:])[0]
        if count == 0:
            raise EmptyInputError(f"{path}: zero points")
        body = fh.read(12 * count)
        if len(body) != 12 * count:
            raise ParseError(
                f"{path}: truncated payload at byte {8 + len(body)}, "
                f"expected {12 * count} bytes for {count} points")
    return np.frombuffer(body, dtype="<f4").reshape(count, 3).copy()


def write_cloud(path, points, fmt="xyz-text"):
    if hasattr(points, "data") and not isinstance(points, np.ndarray):
        points = points.data
    pts = np.asarray(points, dtype=np.float32)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ConfigError(f"write_cloud expects [n, 3], got {pts.shape}")
    if fmt == "xyz-text":
        with open(path, "w", encoding="utf-8") as fh:
            for p in pts:
                fh.write(f"{np.float32(p[0])} {np.float32(p[1])} "
                         f"{np.float32(p[2])}\n")
    elif fmt == "xyz-binary":
        with open(path, "wb") as fh:
            fh.write(XYZ_MAGIC)
            fh.write(struct.pack("<I", pts.shape[0]))
            fh.write(np.ascontiguousarray(pts, dtype="<f4").tobytes())
    else:
        raise ConfigError(f"unknown cloud format {fmt!r}")


def normalize(cloud):
    """Center on the bounding-box midpoint and scale by the largest extent
    so the cloud fits [-0.5, 0.5]^3.

    Returns (cloud', center, scale); the inverse transform is
    ``cloud' * scale + center``. A degenerate cloud (all points identical)
    keeps scale 1.
    """
    pts = np.asarray(cloud, dtype=np.float32)
    if pts.shape[0] == 0:
        raise EmptyInputError("normalize: empty cloud")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    center = (lo + hi) / 2.0
    scale = float((hi - lo).max())
    if scale == 0.0:
        scale = 1.0
    return ((pts - center) / np.float32(scale), center, scale)


def synth_sample(shape, n_complete, rng):
    """Uniform surface sampling of a primitive in canonical pose: analytic
    extents inside [-0.5, 0.5]^3, symmetric about the z=0 plane, so the
    normalization convention holds exactly (a bounding-box fit of a finite
    sample would wobble the geometry by the sampling slack)."""
    if n_complete < 1:
        raise ConfigError(f"n_complete must be >= 1, got {n_complete}")
    if shape == "sphere":
        pts = _sample_sphere(n_complete, rng)
    elif shape == "box":
        pts = _sample_box(n_complete, rng)
    elif shape == "cylinder":
        pts = _sample_cylinder(n_complete, rng)
    elif shape == "torus":
        pts = _sample_torus(n_complete, rng)
    else:
        raise ConfigError(f"unknown synthetic shape {shape!r}")
    return pts.astype(np.float32)


def _sample_sphere(n, rng):
    v = rng.normal(size=(n, 3))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return 0.5 * v / norms


def _sample_box(n, rng):
    # choose a face (all six have equal area on a cube), then a point on it
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-0.5, 0.5, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 0.5, -0.5)
    for i in range(n):
        a = axis[i]
        rest = [d for d in range(3) if d != a]
        pts[i, a] = sign[i]
        pts[i, rest[0]] = uv[i, 0]
        pts[i, rest[1]] = uv[i, 1]
    return pts


def _sample_cylinder(n, rng):
    # radius 0.5, height 1, area-weighted split between wall and caps
    r, h = 0.5, 1.0
    wall = 2 * math.pi * r * h
    cap = math.pi * r * r
    p_wall = wall / (wall + 2 * cap)
    pts = np.empty((n, 3))
    which = rng.uniform(size=n)
    theta = rng.uniform(0, 2 * math.pi, size=n)
    for i in range(n):
        if which[i] < p_wall:
            z = rng.uniform(-h / 2, h / 2)
            pts[i] = (r * math.cos(theta[i]), r * math.sin(theta[i]), z)
        else:
            rad = r * math.sqrt(rng.uniform())
            z = h / 2 if rng.uniform() < 0.5 else -h / 2
            pts[i] = (rad * math.cos(theta[i]), rad * math.sin(theta[i]), z)
    return pts


def _sample_torus(n, rng):
    # rejection sampling for area-uniform coverage
    big, small = 0.35, 0.15
    pts = np.empty((n, 3))
    k = 0
    while k < n:
        theta = rng.uniform(0, 2 * math.pi)
        phi = rng.uniform(0, 2 * math.pi)
        if rng.uniform() > (big + small * math.cos(phi)) / (big + small):
            continue
        w = big + small * math.cos(phi)
        pts[k] = (w * math.cos(theta), w * math.sin(theta),
                  small * math.sin(phi))
        k += 1
    return pts


def view_crop(complete, n_partial, rng, q=40.0, max_attempts=8):
    """Geometric stand-in for a single-view scan: keep the points whose
    projection onto a random direction exceeds the q-th percentile, then
    maximin-subsample the kept points to exactly n_partial.

    The output is a subset of the input points.
    """
    pts = np.asarray(complete, dtype=np.float32)
    if pts.shape[0] == 0:
        raise EmptyInputError("view_crop: empty cloud")
    for _ in range(max_attempts):
        direction = rng.normal(size=3)
        norm = np.linalg.norm(direction)
        if norm == 0:
            continue
        direction = direction / norm
        proj = pts @ direction
        thresh = np.percentile(proj, q)
        keep = np.nonzero(proj >= thresh)[0]
        if keep.size >= n_partial:
            kept = pts[keep]
            seed = int(rng.integers(kept.shape[0]))
            sel = fps(kept, n_partial, seed_index=seed)
            return kept[sel]
    raise BoundsError(
        f"view_crop: could not retain {n_partial} points after "
        f"{max_attempts} attempts")


def make_synthetic(n_samples, shapes, n_complete, n_partial, seed):
    """Deterministic synthetic dataset: complete surface samples plus
    view-cropped partials, category labels cycling over ``shapes``."""
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    samples = []
    for i in range(n_samples):
        shape = shapes[i % len(shapes)]
        rng = np.random.default_rng(np.random.SeedSequence([seed, 7, i]))
        complete = synth_sample(shape, n_complete, rng)
        partial = view_crop(complete, n_partial, rng)
        samples.append(Sample(partial=partial, complete=complete,
                              category=shape))
    return Dataset(samples)


def load_manifest(path, fmt="xyz-text"):
    root = os.path.dirname(os.path.abspath(path))
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.rstrip("\n")
            if not stripped.strip() or stripped.lstrip().startswith("#"):
                continue
            parts = stripped.split("\t")
            if len(parts) != 3:
                raise ParseError(
                    f"{path}: line {lineno}: expected 3 tab-separated "
                    f"fields, got {len(parts)}")
            partial_path, complete_path, category = parts
            if not category:
                raise ParseError(f"{path}: line {lineno}: empty category")
            samples.append(Sample(
                partial=parse_cloud(os.path.join(root, partial_path), fmt),
                complete=parse_cloud(os.path.join(root, complete_path), fmt),
                category=category,
            ))
    if not samples:
        raise EmptyInputError(f"{path}: manifest has no records")
    return Dataset(samples)


def write_manifest(path, records):
    """records: iterable of (partial_relpath, complete_relpath, category)."""
    with open(path, "w", encoding="utf-8") as fh:
        for partial, complete, category in records:
            fh.write(f"{partial}\t{complete}\t{category}\n")


def split_dataset(dataset, val_fraction, seed):
    """Deterministic train/validation split (validation first indices of a
    seeded shuffle)."""
    n = len(dataset)
    idx = np.random.default_rng(
        np.random.SeedSequence([seed, 11])).permutation(n)
    n_val = int(round(n * val_fraction))
    val = Dataset([dataset[i] for i in idx[:n_val]])
    train = Dataset([dataset[i] for i in idx[n_val:]])
    return train, val


def batches(dataset, batch_size, rng, drop_last=True, with_indices=False):
    """Seeded shuffle, then (partial, complete, categories) batches; the
    short final batch is dropped when ``drop_last`` (training) and kept
    otherwise (evaluation). ``with_indices`` appends the dataset indices of
    the batch (used by trainers to cache per-sample derived values)."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    order = rng.permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        sel = order[start:start + batch_size]
        if drop_last and sel.size < batch_size:
            return
        samples = [dataset[int(i)] for i in sel]
        partial = np.stack([s.partial for s in samples])
        complete = np.stack([s.complete for s in samples])
        cats = [s.category for s in samples]
        if with_indices:
            yield partial, complete, cats, [int(i) for i in sel]
        else:
            yield partial, complete, cats
