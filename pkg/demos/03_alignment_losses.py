"""Feature-alignment losses: L2 feature matching, the kernel two-sample
statistic, the adversarial pair with its gradient penalty, and the
least-squares variant."""

import numpy as np

from pcsp import (CriticBatch, KernelSpec, LatentPair, feat_match,
                  gan_d_loss, gan_g_loss, lsgan_losses, mmd2, rq_kernel,
                  tensor)
from pcsp.autodiff import matmul, precision

rng = np.random.default_rng(0)
spec = KernelSpec()
print("kernel scales:", spec.alphas)

print("\n== feature matching ==")
fx = LatentPair(tensor([[3.0, 4.0]]), tensor([[1.0, 0.0, 0.0]]))
fy = LatentPair(tensor([[0.0, 0.0]]), tensor([[1.0, 0.0, 0.0]]))
print("single sample, f1 offset (3,4):", feat_match(fx, fy).item())  # 5

print("\n== rational quadratic kernel ==")
v = tensor([1.0, 1.0])
print("k(v, v) = number of scales:", rq_kernel(v, v, spec).item())
print("k decays with distance:",
      [round(rq_kernel(tensor([0.0, 0.0]), tensor([d, 0.0]), spec).item(), 3)
       for d in (0.0, 1.0, 2.0, 4.0)])

print("\n== two-sample statistic ==")
with precision("float64"):
    A = tensor(rng.normal(size=(64, 8)))
    B_same = tensor(rng.normal(size=(64, 8)))
    B_far = tensor(rng.normal(size=(64, 8)) + 2.0)
    print("same distribution:   ", mmd2(A, B_same, spec, "unbiased").item())
    print("shifted distribution:", mmd2(A, B_far, spec, "unbiased").item())
    print("identical sets (biased, exact zero):",
          mmd2(A, A, spec, "biased").item())

print("\n== adversarial pair with a hand-built linear critic ==")
w = np.zeros((6, 1))
w[0, 0] = 3.0  # norm 3 -> penalty (3-1)^2 = 4
W = tensor(w)
batch = CriticBatch(real=tensor(rng.normal(size=(4, 1))),
                    fake=tensor(rng.normal(size=(4, 1))),
                    interp_inputs=tensor(rng.normal(size=(4, 6))))
d = gan_d_loss(batch, spec, lambda x: matmul(x, W), gp_weight=1.0)
g = gan_g_loss(batch, spec)
print(f"g loss {g.item():+.4f}  d loss {d.item():+.4f}  "
      f"d+g (gradient penalty) = {d.item() + g.item():.4f}")

print("\n== least-squares variant ==")
g, d = lsgan_losses(tensor(np.ones((4, 1))), tensor(np.zeros((4, 1))))
print("perfect critic: d =", d.item(), " g =", g.item())
