"""Synthetic data: primitive surfaces, view crops, file round trips and
batching."""

import os
import tempfile

import numpy as np

from pcsp import (batches, make_synthetic, normalize, parse_cloud,
                  synth_sample, view_crop, write_cloud)

rng = np.random.default_rng(0)

print("== primitive surfaces (canonical pose, inside [-0.5, 0.5]^3) ==")
for shape in ("sphere", "box", "cylinder", "torus"):
    pts = synth_sample(shape, 400, np.random.default_rng(1))
    print(f"{shape:9s} bbox {pts.min(axis=0).round(3)} .. "
          f"{pts.max(axis=0).round(3)}")

print("\n== view crops keep a subset of the surface ==")
complete = synth_sample("sphere", 1024, np.random.default_rng(2))
partial = view_crop(complete, 256, np.random.default_rng(3))
print("complete:", complete.shape, " partial:", partial.shape)
direction_spread = partial.max(axis=0) - partial.min(axis=0)
print("partial extent per axis:", direction_spread.round(3))

print("\n== normalization and its inverse ==")
raw = rng.normal(size=(200, 3)).astype(np.float32) * 4 + 10
normed, center, scale = normalize(raw)
print("normalized bbox:", normed.min().round(3), "..", normed.max().round(3))
back = normed * scale + center
print("inverse recovers input:", np.abs(back - raw).max() < 1e-4)

print("\n== file formats round-trip at 32-bit ==")
with tempfile.TemporaryDirectory() as work:
    text_path = os.path.join(work, "cloud.xyz")
    bin_path = os.path.join(work, "cloud.pcb")
    write_cloud(text_path, partial, "xyz-text")
    write_cloud(bin_path, partial, "xyz-binary")
    print("text round trip:",
          np.array_equal(parse_cloud(text_path, "xyz-text"), partial))
    print("binary round trip:",
          np.array_equal(parse_cloud(bin_path, "xyz-binary"), partial))
    print("binary size bytes:", os.path.getsize(bin_path),
          "(= 8 + 12 * n)")

print("\n== dataset assembly ==")
ds = make_synthetic(10, ["sphere", "box"], 256, 64, seed=4)
for p, c, cats in batches(ds, 4, np.random.default_rng(5), drop_last=False):
    print("batch", p.shape, c.shape, cats)
