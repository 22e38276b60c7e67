"""Tour of the tensor engine: taped operations, reverse-mode gradients,
finite-difference spot checks, and a gradient-of-gradient example."""

import numpy as np

from pcsp import backward, grad, precision, tensor
from pcsp.autodiff import matmul, max_points, relu, tsum

print("== building a small graph ==")
x = tensor([[1.0, -2.0], [3.0, 0.5]])
w = tensor([[0.5, 1.0], [-1.0, 2.0]])
y = relu(matmul(x, w))
loss = tsum(y * y)
print("forward value:", loss.item())

grads = backward(loss)
print("dL/dx:\n", grads.wrt(x).data)
print("dL/dw:\n", grads.wrt(w).data)

print("\n== checking against central finite differences (float64) ==")
with precision("float64"):
    rng = np.random.default_rng(0)
    a0 = rng.normal(size=(3, 4))
    b0 = rng.normal(size=(4, 2))
    a, b = tensor(a0), tensor(b0)
    g = backward(tsum(matmul(a, b))).wrt(a).data

    h = 1e-5
    fd = np.zeros_like(a0)
    for i in range(3):
        for j in range(4):
            ap, am = a0.copy(), a0.copy()
            ap[i, j] += h
            am[i, j] -= h
            fd[i, j] = ((ap @ b0).sum() - (am @ b0).sum()) / (2 * h)
    print("max |analytic - finite difference|:", np.abs(g - fd).max())

print("\n== permutation-invariant pooling ==")
pts = tensor(rng.normal(size=(1, 6, 3)))
pooled = max_points(pts)
perm = np.random.default_rng(1).permutation(6)
pooled_shuffled = max_points(tensor(pts.data[:, perm, :]))
print("pooled equal under permutation:",
      np.array_equal(pooled.data, pooled_shuffled.data))

print("\n== gradients of gradients ==")
with precision("float64"):
    t = tensor([2.0])
    cubic = tsum(t * t * t)
    first = grad(cubic, t)          # 3 t^2 -> 12
    second = grad(tsum(first), t)   # 6 t   -> 12
    print("d/dt t^3 at 2:", first.data[0], " d2/dt2:", second.data[0])
