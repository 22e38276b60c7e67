"""Point-set geometry kernels.

Chamfer distance and fidelity error are differentiable: nearest-neighbor
indices are computed once in raw numpy and then treated as constants while
the losses are rebuilt from taped gathers, so gradients flow through the
matched coordinates but not through the pairing itself. Farthest point
sampling is pure index computation. All nearest-neighbor searches are exact
O(n*m) with row blocking — no spatial index.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .autodiff import (Tensor, concat, const_mul, gather_points, mul, scale,
                       sqrt, sub, tmean, tsum)
from .errors import BoundsError, ConfigError, DimensionError, EmptyInputError

_BLOCK = 4096


class ChamferResult(NamedTuple):
    total: Tensor
    forward: Tensor   # s1 -> s2 directional term
    reverse: Tensor   # s2 -> s1 directional term


def _as_batch(cloud):
    """Accept [n, 3] or [b, n, 3], Tensor or ndarray; return a rank-3 Tensor."""
    t = cloud if isinstance(cloud, Tensor) else Tensor(cloud)
    if t.ndim == 2:
        t = t.reshape((1,) + t.shape)
    if t.ndim != 3 or t.shape[-1] != 3:
        raise DimensionError(f"expected a point cloud [n, 3] or [b, n, 3], "
                             f"got {cloud.shape if hasattr(cloud, 'shape') else cloud}")
    if t.shape[1] == 0:
        raise EmptyInputError("empty point cloud")
    return t


def _sqdist_matrix(a, b):
    """Dense [n, m] squared distances, built in place to keep the row-major
    layout cheap to reduce over."""
    d2 = a @ b.T
    d2 *= -2.0
    d2 += (a * a).sum(axis=1)[:, None]
    d2 += (b * b).sum(axis=1)[None, :]
    return d2


def _nearest_idx(a, b):
    """Index of the nearest row of ``b`` for every row of ``a`` (first on
    ties). Blocked exact search on raw arrays."""
    n = a.shape[0]
    idx = np.empty(n, dtype=np.int64)
    for s in range(0, n, _BLOCK):
        idx[s:s + _BLOCK] = np.argmin(_sqdist_matrix(a[s:s + _BLOCK], b),
                                      axis=1)
    return idx


def _nearest_idx_both(a, b):
    """Nearest indices a->b and b->a per batch element. Each direction
    builds its own row-major matrix: reducing along rows is so much cheaper
    than along columns that a rebuild beats reusing the transpose."""
    bsz = a.shape[0]
    fw = np.stack([_nearest_idx(a[i], b[i]) for i in range(bsz)])
    rv = np.stack([_nearest_idx(b[i], a[i]) for i in range(bsz)])
    return fw, rv


def _matched_sqdist(s1, s2, idx):
    """Squared distance from each s1 point to its matched s2 point,
    differentiable through the matched coordinates (pairing constant)."""
    matched = gather_points(s2, idx)
    diff = sub(s1, matched)
    return tsum(mul(diff, diff), axis=2)  # [b, n]


def chamfer(s1, s2, variant):
    """Chamfer distance between two clouds (batched inputs are averaged).

    variant "cd-t": sum of the two directional mean squared distances.
    variant "cd-p": half the sum of the two directional mean Euclidean
    distances.
    """
    v = str(variant).lower()
    if v not in ("cd-t", "cd-p"):
        raise ConfigError(f"unknown chamfer variant {variant!r}")
    t1, t2 = _as_batch(s1), _as_batch(s2)
    if t1.shape[0] != t2.shape[0]:
        raise DimensionError(
            f"batch sizes differ: {t1.shape} vs {t2.shape}")
    idx_fw, idx_rv = _nearest_idx_both(t1.data, t2.data)
    d2_fw = _matched_sqdist(t1, t2, idx_fw)
    d2_rv = _matched_sqdist(t2, t1, idx_rv)
    if v == "cd-t":
        fw, rv = tmean(d2_fw), tmean(d2_rv)
        total = fw + rv
    else:
        fw, rv = tmean(sqrt(d2_fw)), tmean(sqrt(d2_rv))
        total = scale(fw + rv, 0.5)
    return ChamferResult(total, fw, rv)


def fidelity_error(inp, out):
    """Mean distance from each input point to its nearest output point."""
    t1, t2 = _as_batch(inp), _as_batch(out)
    if t1.shape[0] != t2.shape[0]:
        raise DimensionError(
            f"batch sizes differ: {t1.shape} vs {t2.shape}")
    idx = np.stack([_nearest_idx(t1.data[i], t2.data[i])
                    for i in range(t1.shape[0])])
    return tmean(sqrt(_matched_sqdist(t1, t2, idx)))


def fps(cloud, k, seed_index=0):
    """Greedy maximin subsampling: indices of k points, starting at
    ``seed_index``, each next pick maximizing the minimum distance to the
    picks so far. Ties break to the lowest index; fully deterministic.

    Distances update through the expanded |p|^2 - 2 p.q + |q|^2 form (one
    fused pass instead of three); already-selected indices are masked out
    so the picks stay distinct even on degenerate clouds.
    """
    pts = cloud.data if isinstance(cloud, Tensor) else np.asarray(cloud)
    if pts.ndim != 2:
        raise DimensionError(f"fps expects a single cloud [n, 3], got "
                             f"{pts.shape}")
    n = pts.shape[0]
    if n == 0:
        raise EmptyInputError("fps: empty cloud")
    if not 1 <= k <= n:
        raise BoundsError(f"fps: k={k} out of range for a cloud of {n} points")
    if not 0 <= seed_index < n:
        raise BoundsError(f"fps: seed_index={seed_index} out of range 0..{n - 1}")
    pts2 = (pts * pts).sum(axis=1)
    sel = np.empty(k, dtype=np.int64)
    sel[0] = seed_index
    mind = pts2 - 2.0 * (pts @ pts[seed_index]) + pts2[seed_index]
    mind[seed_index] = -np.inf
    for i in range(1, k):
        nxt = int(np.argmax(mind))
        sel[i] = nxt
        d = pts2 - 2.0 * (pts @ pts[nxt]) + pts2[nxt]
        np.minimum(mind, d, out=mind)
        mind[nxt] = -np.inf
    return sel


def fps_batch(points, k, seed_index=0):
    """fps applied per batch element of [b, n, 3]; returns [b, k] indices.

    Vectorized over the batch; per-element results are identical to
    :func:`fps` (same arithmetic, same tie-breaking, same masking).
    """
    pts = points.data if isinstance(points, Tensor) else np.asarray(points)
    if pts.ndim != 3:
        raise DimensionError(f"fps_batch expects [b, n, 3], got {pts.shape}")
    bsz, n, _ = pts.shape
    if n == 0:
        raise EmptyInputError("fps_batch: empty clouds")
    if not 1 <= k <= n:
        raise BoundsError(
            f"fps_batch: k={k} out of range for clouds of {n} points")
    if not 0 <= seed_index < n:
        raise BoundsError(
            f"fps_batch: seed_index={seed_index} out of range 0..{n - 1}")
    rows = np.arange(bsz)
    pts2 = (pts * pts).sum(axis=2)            # [b, n]
    sel = np.empty((bsz, k), dtype=np.int64)
    sel[:, 0] = seed_index
    p = pts[:, seed_index]
    mind = pts2 - 2.0 * np.einsum("bnc,bc->bn", pts, p) \
        + pts2[:, seed_index][:, None]
    mind[:, seed_index] = -np.inf
    for i in range(1, k):
        nxt = np.argmax(mind, axis=1)         # first max per row on ties
        sel[:, i] = nxt
        p = pts[rows, nxt]
        d = pts2 - 2.0 * np.einsum("bnc,bc->bn", pts, p) \
            + pts2[rows, nxt][:, None]
        np.minimum(mind, d, out=mind)
        mind[rows, nxt] = -np.inf
    return sel


def mirror_xy(cloud):
    """Append the reflection through the z=0 plane: output has 2n points."""
    t = cloud if isinstance(cloud, Tensor) else Tensor(cloud)
    if t.shape[-1] != 3:
        raise DimensionError(f"mirror_xy expects 3-coordinate points, got "
                             f"{t.shape}")
    flipped = const_mul(t, np.array([1.0, 1.0, -1.0]))
    return concat([t, flipped], axis=-2)


def _grid_axis(count, extent):
    if count == 1:
        return np.array([0.0])
    return np.linspace(-extent, extent, count)


def grid_coords(ratio, extent):
    """Uniform sqrt(ratio) x sqrt(ratio) 2-D grid over [-extent, extent]^2,
    row-major. ``ratio`` must be a perfect square; ratio 1 degenerates to a
    single sample at the center."""
    s = math.isqrt(int(ratio))
    if s * s != ratio:
        raise ConfigError(f"grid ratio {ratio} is not a perfect square")
    return rect_grid_coords(ratio, extent)


def rect_grid_coords(ratio, extent):
    """Uniform r1 x r2 grid with r1*r2 == ratio and r1 the largest divisor
    <= sqrt(ratio). Coincides with grid_coords for perfect squares and
    covers ratios like 2 or 8 that arise when the fine resolution is a
    non-square multiple of the coarse size."""
    ratio = int(ratio)
    if ratio < 1:
        raise ConfigError(f"grid ratio must be positive, got {ratio}")
    r1 = 1
    for d in range(math.isqrt(ratio), 0, -1):
        if ratio % d == 0:
            r1 = d
            break
    r2 = ratio // r1
    xs = _grid_axis(r1, extent)
    ys = _grid_axis(r2, extent)
    out = np.empty((ratio, 2))
    k = 0
    for x in xs:
        for y in ys:
            out[k, 0] = x
            out[k, 1] = y
            k += 1
    return out
