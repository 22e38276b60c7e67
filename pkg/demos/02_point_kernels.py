"""Point-set kernels: both chamfer conventions, fidelity error, farthest
point sampling, mirroring, and the refinement grids."""

import numpy as np

from pcsp import (chamfer, fidelity_error, fps, grid_coords, mirror_xy,
                  rect_grid_coords, tensor)

print("== chamfer distance, two table conventions ==")
a = tensor([[0.0, 0.0, 0.0]])
b = tensor([[3.0, 4.0, 0.0]])
print("cd-t (squared):   ", chamfer(a, b, "cd-t").total.item())   # 50
print("cd-p (euclidean): ", chamfer(a, b, "cd-p").total.item())   # 5

rng = np.random.default_rng(0)
s1 = tensor(rng.normal(size=(128, 3)))
s2 = tensor(rng.normal(size=(96, 3)))
r = chamfer(s1, s2, "cd-t")
print(f"random clouds: total={r.total.item():.4f} "
      f"forward={r.forward.item():.4f} reverse={r.reverse.item():.4f}")

print("\n== fidelity error (input preservation, one-directional) ==")
partial = s1.data[:32]
print("fidelity(partial, full) =",
      fidelity_error(tensor(partial), s1).item())  # subset -> 0

print("\n== farthest point sampling ==")
line = np.array([[0.0, 0, 0], [10.0, 0, 0], [5.0, 0, 0], [2.0, 0, 0]])
print("maximin picks on a line, k=3:", fps(line, 3, seed_index=0))
cloud = rng.normal(size=(500, 3))
sel = fps(cloud, 16)
print("16 of 500 points, all distinct:", len(set(sel.tolist())) == 16)

print("\n== mirroring about the z=0 plane ==")
pts = tensor([[0.2, 0.1, 0.3], [0.0, -0.4, -0.1]])
print(mirror_xy(pts).data)

print("\n== refinement grids ==")
print("ratio 4 (2x2):\n", grid_coords(4, 0.05))
print("ratio 2 (rectangular 1x2):\n", rect_grid_coords(2, 0.05))
print("ratio 8 (rectangular 2x4):\n", rect_grid_coords(8, 0.05))
