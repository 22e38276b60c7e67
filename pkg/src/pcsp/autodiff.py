"""numpy-backed dense tensors with a reverse-mode differentiation tape.

Every operation returns a fresh ``Tensor`` holding the result array, the
input tensors and a backward rule. Tensors carry a monotonically increasing
``tape_id``; an operation's inputs always predate its output, so walking
ids in descending order is a valid reverse-topological schedule and
``backward`` evaluates each recorded node's rule exactly once.

Backward rules are themselves written in terms of taped operations, so the
gradients they produce are differentiable in turn. This is what makes the
critic gradient penalty possible: ``grad`` of an embedding w.r.t. its input
is an ordinary tensor that later participates in a second backward pass.

Two precision modes exist: float32 (training default) and float64 (used by
the finite-difference verification suite, where float32 noise would drown
the signal). Tensor data is never mutated after construction; read-only
sharing across threads is safe.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

from .errors import ContractError, DimensionError, EmptyInputError

_DTYPES = {"float32": np.float32, "float64": np.float64}
_dtype_stack = [np.float32]
_ids = itertools.count(1)


@contextmanager
def precision(mode):
    """Temporarily switch the default dtype ("float32" or "float64")."""
    if mode not in _DTYPES:
        raise ContractError(f"unknown precision mode {mode!r}")
    _dtype_stack.append(_DTYPES[mode])
    try:
        yield
    finally:
        _dtype_stack.pop()


def default_dtype():
    return _dtype_stack[-1]


class Tensor:
    """Dense array plus its position on the recording tape."""

    __slots__ = ("data", "tape_id", "op", "parents", "backward_fn", "name")

    def __init__(self, data, op="leaf", parents=(), backward_fn=None,
                 name=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is not None:
            data = np.asarray(data, dtype=dtype)
        elif not (isinstance(data, np.ndarray)
                  and data.dtype in (np.float32, np.float64)):
            data = np.asarray(data, dtype=default_dtype())
        self.data = data
        self.tape_id = next(_ids)
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(()))

    def detach(self):
        """Leaf tensor sharing this tensor's values; gradients stop here."""
        return Tensor(self.data, name=self.name)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        return tmean(self, axis=axis)

    def reshape(self, shape):
        return reshape(self, shape)

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_const(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_const(self, -float(other))

    def __rsub__(self, other):
        return add_const(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return pow_const(self, float(p))

    def __repr__(self):
        return (f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, "
                f"op={self.op!r}, tape_id={self.tape_id})")


def tensor(data, dtype=None, name=None):
    """Create a leaf tensor."""
    return Tensor(data, dtype=dtype, name=name)


def zeros_like(t):
    return Tensor(np.zeros_like(t.data))


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# shape plumbing used by backward rules

def _sum_to(t, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    shape = tuple(shape)
    if t.data.shape == shape:
        return t
    src_shape = t.data.shape
    arr = t.data
    extra = arr.ndim - len(shape)
    if extra:
        arr = arr.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (have, want) in enumerate(zip(arr.shape, shape))
                 if want == 1 and have != 1)
    if axes:
        arr = arr.sum(axis=axes, keepdims=True)
    arr = arr.reshape(shape)

    def bwd(g):
        return (broadcast_to(g, src_shape),)

    return Tensor(arr, "sum_to", (t,), bwd)


def broadcast_to(t, shape):
    shape = tuple(shape)
    if t.data.shape == shape:
        return t
    try:
        # read-only zero-stride view; tensors are never mutated so no copy
        arr = np.broadcast_to(t.data, shape)
    except ValueError:
        raise DimensionError(
            f"cannot broadcast shape {t.data.shape} to {shape}")
    src = t.data.shape

    def bwd(g):
        return (_sum_to(g, src),)

    return Tensor(arr, "broadcast", (t,), bwd)


# ---------------------------------------------------------------------------
# arithmetic

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise DimensionError(
            f"add: shapes {a.data.shape} and {b.data.shape} do not broadcast")

    def bwd(g):
        return (_sum_to(g, a.data.shape), _sum_to(g, b.data.shape))

    return Tensor(data, "add", (a, b), bwd)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise DimensionError(
            f"sub: shapes {a.data.shape} and {b.data.shape} do not broadcast")

    def bwd(g):
        return (_sum_to(g, a.data.shape), _sum_to(neg(g), b.data.shape))

    return Tensor(data, "sub", (a, b), bwd)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise DimensionError(
            f"mul: shapes {a.data.shape} and {b.data.shape} do not broadcast")

    def bwd(g):
        return (_sum_to(mul(g, b), a.data.shape),
                _sum_to(mul(g, a), b.data.shape))

    return Tensor(data, "mul", (a, b), bwd)


def neg(a):
    def bwd(g):
        return (neg(g),)

    return Tensor(-a.data, "neg", (a,), bwd)


def scale(a, c):
    """Multiply by a python scalar constant."""
    c = float(c)

    def bwd(g):
        return (scale(g, c),)

    return Tensor(a.data * c, "scale", (a,), bwd)


def add_const(a, c):
    c = float(c)

    def bwd(g):
        return (g,)

    return Tensor(a.data + c, "add_const", (a,), bwd)


def const_mul(a, arr):
    """Multiply by a constant array (same or broadcastable shape)."""
    arr = np.asarray(arr, dtype=a.data.dtype)
    data = a.data * arr

    def bwd(g):
        return (const_mul(g, arr),)

    return Tensor(data, "const_mul", (a,), bwd)


def pow_const(a, p):
    """Elementwise a**p for a scalar constant p (positive base for
    non-integer p)."""
    p = float(p)
    data = a.data ** p

    def bwd(g):
        return (mul(g, scale(pow_const(a, p - 1.0), p)),)

    return Tensor(data, "pow", (a,), bwd)


def sqrt(a):
    data = np.sqrt(a.data)

    def bwd(g):
        # clamp keeps the rule finite at the kink; callers verifying
        # gradients stay away from exact zeros anyway
        safe = clip_min(a, 1e-12)
        return (scale(mul(g, pow_const(safe, -0.5)), 0.5),)

    return Tensor(data, "sqrt", (a,), bwd)


def relu(a):
    mask = (a.data > 0).astype(a.data.dtype)

    def bwd(g):
        return (const_mul(g, mask),)

    return Tensor(np.maximum(a.data, 0), "relu", (a,), bwd)


def clip_min(a, c):
    c = float(c)
    mask = (a.data > c).astype(a.data.dtype)

    def bwd(g):
        return (const_mul(g, mask),)

    return Tensor(np.maximum(a.data, c), "clip_min", (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul expects rank >= 2 operands, got {a.data.shape} "
            f"and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul: inner extents disagree for shapes {a.data.shape} "
            f"and {b.data.shape}")
    try:
        data = a.data @ b.data
    except ValueError:
        raise DimensionError(
            f"matmul: batch extents do not broadcast for shapes "
            f"{a.data.shape} and {b.data.shape}")

    def bwd(g):
        ga = _sum_to(matmul(g, swap_last(b)), a.data.shape)
        gb = _sum_to(matmul(swap_last(a), g), b.data.shape)
        return (ga, gb)

    return Tensor(data, "matmul", (a, b), bwd)


def swap_last(a):
    data = np.swapaxes(a.data, -1, -2)

    def bwd(g):
        return (swap_last(g),)

    return Tensor(data, "swap_last", (a,), bwd)


# ---------------------------------------------------------------------------
# reductions

def tsum(a, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)
    src = a.data.shape
    if axis is None:
        kshape = (1,) * len(src)
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(src) for ax in axes)
        kshape = tuple(1 if i in axes else s for i, s in enumerate(src))

    def bwd(g):
        gg = g if g.data.shape == kshape else reshape(g, kshape)
        return (broadcast_to(gg, src),)

    return Tensor(data, "sum", (a,), bwd)


def tmean(a, axis=None):
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = 1
        for ax in axes:
            count *= a.data.shape[ax]
    return scale(tsum(a, axis=axis), 1.0 / count)


def max_points(a):
    """Per-feature maximum over the point axis of a [b, n, d] tensor.

    Saves the argmax (first index on ties); backward routes each output
    gradient to exactly one input slot.
    """
    if a.ndim != 3:
        raise DimensionError(f"max_points expects [b, n, d], got {a.shape}")
    bsz, n, d = a.data.shape
    if n == 0:
        raise EmptyInputError("max_points: empty point axis")
    idx = np.argmax(a.data, axis=1)  # [b, d], first max on ties
    data = np.take_along_axis(a.data, idx[:, None, :], axis=1)[:, 0, :]

    def bwd(g):
        return (_scatter_max(g, idx, n),)

    return Tensor(data, "max_points", (a,), bwd)


def _scatter_max(g, idx, n):
    """Inverse routing of max_points: [b, d] gradient into [b, n, d]."""
    bsz, d = g.data.shape
    bi = np.arange(bsz)[:, None]
    di = np.arange(d)[None, :]
    out = np.zeros((bsz, n, d), dtype=g.data.dtype)
    out[bi, idx, di] = g.data

    def bwd(gg):
        return (_gather_max(gg, idx),)

    return Tensor(out, "scatter_max", (g,), bwd)


def _gather_max(t, idx):
    bsz, n, d = t.data.shape
    bi = np.arange(bsz)[:, None]
    di = np.arange(d)[None, :]
    data = t.data[bi, idx, di]

    def bwd(gg):
        return (_scatter_max(gg, idx, n),)

    return Tensor(data, "gather_max", (t,), bwd)


# ---------------------------------------------------------------------------
# layout transforms

def reshape(a, shape):
    shape = tuple(shape)
    want = 1
    for s in shape:
        want *= s
    if want != a.size and -1 not in shape:
        raise DimensionError(
            f"reshape: cannot view {a.data.shape} ({a.size} values) "
            f"as {shape}")
    data = a.data.reshape(shape)
    src = a.data.shape

    def bwd(g):
        return (reshape(g, src),)

    return Tensor(data, "reshape", (a,), bwd)


def concat(tensors, axis):
    tensors = [_wrap(t) for t in tensors]
    shapes = [t.data.shape for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {shapes}")
    ax = axis % data.ndim
    sizes = [s[ax] for s in shapes]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(_slice_axis(g, ax, int(offsets[i]), int(offsets[i + 1]))
                     for i in range(len(tensors)))

    return Tensor(data, "concat", tuple(tensors), bwd)


def _slice_axis(t, axis, start, stop):
    sl = [slice(None)] * t.ndim
    sl[axis] = slice(start, stop)
    data = t.data[tuple(sl)]
    total = t.data.shape[axis]

    def bwd(g):
        return (_pad_axis(g, axis, start, total),)

    return Tensor(data, "slice", (t,), bwd)


def _pad_axis(t, axis, start, total):
    shape = list(t.data.shape)
    width = shape[axis]
    shape[axis] = total
    out = np.zeros(shape, dtype=t.data.dtype)
    sl = [slice(None)] * t.ndim
    sl[axis] = slice(start, start + width)
    out[tuple(sl)] = t.data

    def bwd(g):
        return (_slice_axis(g, axis, start, start + width),)

    return Tensor(out, "pad", (t,), bwd)


def repeat_axis(a, r, axis):
    """Repeat each slice along ``axis`` r times (element-major order)."""
    data = np.repeat(a.data, r, axis=axis)
    src = a.data.shape
    ax = axis % a.ndim

    def bwd(g):
        grouped = src[:ax] + (src[ax], r) + src[ax + 1:]
        return (tsum(reshape(g, grouped), axis=ax + 1),)

    return Tensor(data, "repeat", (a,), bwd)


def gather_points(x, idx):
    """Select rows idx[b, n] from x[b, m, c]; duplicates allowed.

    Backward scatter-adds, so a row selected twice accumulates both
    gradient contributions.
    """
    if x.ndim != 3 or idx.ndim != 2:
        raise DimensionError(
            f"gather_points expects x[b,m,c] and idx[b,n], got {x.shape} "
            f"and {idx.shape}")
    idx = np.asarray(idx)
    bsz = x.data.shape[0]
    m = x.data.shape[1]
    bi = np.arange(bsz)[:, None]
    data = x.data[bi, idx]

    def bwd(g):
        return (_scatter_points(g, idx, m),)

    return Tensor(data, "gather_points", (x,), bwd)


def _scatter_points(g, idx, m):
    bsz, n, c = g.data.shape
    bi = np.arange(bsz)[:, None]
    out = np.zeros((bsz, m, c), dtype=g.data.dtype)
    np.add.at(out, (bi, idx), g.data)

    def bwd(gg):
        return (gather_points(gg, idx),)

    return Tensor(out, "scatter_points", (g,), bwd)


# ---------------------------------------------------------------------------
# backward pass

def trace(loss):
    """Recorded operations reachable from ``loss``, in creation order."""
    seen = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t.tape_id in seen:
            continue
        seen[t.tape_id] = t
        stack.extend(t.parents)
    return [seen[i] for i in sorted(seen)]


class Grads:
    """Gradient lookup produced by :func:`backward`."""

    def __init__(self, by_id):
        self._by_id = by_id

    def wrt(self, t):
        """Gradient tensor for ``t`` (zeros if it does not reach the loss)."""
        g = self._by_id.get(t.tape_id)
        return g if g is not None else zeros_like(t)

    def for_params(self, params):
        """Map parameter name -> gradient, zero-filled for unreachable ones.

        ``params`` is anything with ``items()`` yielding (name, Tensor).
        """
        return {name: self.wrt(t) for name, t in params.items()}


def backward(loss):
    """Reverse pass from a scalar loss over its recorded graph.

    Gradients are themselves taped tensors, so the result supports further
    differentiation. Each reachable node's rule runs exactly once.
    """
    if loss.size != 1:
        raise ContractError(
            f"backward expects a scalar loss, got shape {loss.shape}")
    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t.tape_id in nodes:
            continue
        nodes[t.tape_id] = t
        stack.extend(t.parents)
    grads = {loss.tape_id: Tensor(np.ones_like(loss.data))}
    for tid in sorted(nodes, reverse=True):
        g = grads.get(tid)
        t = nodes[tid]
        if g is None or t.backward_fn is None:
            continue
        for parent, pg in zip(t.parents, t.backward_fn(g)):
            if pg is None:
                continue
            prev = grads.get(parent.tape_id)
            grads[parent.tape_id] = pg if prev is None else add(prev, pg)
    return Grads(grads)


def grad(out, wrt):
    """Gradient of scalar ``out`` w.r.t. a single tensor, as a taped tensor."""
    return backward(out).wrt(wrt)
