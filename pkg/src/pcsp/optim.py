"""Named parameter storage and the Adam update."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import ContractError, DimensionError


class _Entry:
    __slots__ = ("tensor", "m", "v", "step")

    def __init__(self, tensor):
        self.tensor = tensor
        self.m = np.zeros_like(tensor.data)
        self.v = np.zeros_like(tensor.data)
        self.step = 0


class ParamStore:
    """Insertion-ordered map name -> (parameter, Adam moments, step count).

    Parameters are immutable tensors; an optimizer step replaces the entry's
    tensor rather than mutating array data, so graphs recorded against the
    old value stay valid.
    """

    def __init__(self):
        self._entries = {}

    def add(self, name, value, dtype=None):
        if name in self._entries:
            raise ContractError(f"parameter {name!r} already registered")
        t = value if isinstance(value, Tensor) else Tensor(value, dtype=dtype)
        t.name = name
        self._entries[name] = _Entry(t)
        return t

    def __getitem__(self, name):
        return self._entries[name].tensor

    def __contains__(self, name):
        return name in self._entries

    def __len__(self):
        return len(self._entries)

    def names(self):
        return list(self._entries)

    def items(self):
        for name, e in self._entries.items():
            yield name, e.tensor

    def entry(self, name):
        return self._entries[name]

    def set_value(self, name, array):
        """Replace a parameter's value, keeping optimizer state."""
        e = self._entries[name]
        if tuple(array.shape) != e.tensor.shape:
            raise DimensionError(
                f"set_value {name!r}: shape {array.shape} != "
                f"{e.tensor.shape}")
        e.tensor = Tensor(np.array(array, dtype=e.tensor.dtype), name=name)

    def state_arrays(self):
        """Flat array view of parameters and optimizer state (checkpoints)."""
        out = {}
        for name, e in self._entries.items():
            out[f"param.{name}"] = e.tensor.data
            out[f"adam.m.{name}"] = e.m
            out[f"adam.v.{name}"] = e.v
        return out

    def step_counts(self):
        return {name: e.step for name, e in self._entries.items()}

    def load_state(self, arrays, steps):
        for name, e in self._entries.items():
            for key, slot in ((f"param.{name}", "tensor"),
                              (f"adam.m.{name}", "m"),
                              (f"adam.v.{name}", "v")):
                if key not in arrays:
                    raise ContractError(f"checkpoint missing array {key!r}")
                arr = np.asarray(arrays[key], dtype=e.tensor.dtype)
                if arr.shape != e.tensor.shape:
                    raise DimensionError(
                        f"checkpoint array {key!r} has shape {arr.shape}, "
                        f"expected {e.tensor.shape}")
                if slot == "tensor":
                    e.tensor = Tensor(arr, name=name)
                else:
                    setattr(e, slot, arr)
            e.step = int(steps.get(name, 0))


def adam_step(store, grads, lr, betas=(0.9, 0.999), eps=1e-8):
    """One Adam update with bias correction.

    ``grads`` maps parameter names to gradient tensors/arrays. Every step
    counter advances by exactly one; an entry with no gradient in ``grads``
    is left untouched apart from its counter (zero update, by design — this
    is how frozen sections stay bit-identical).
    """
    b1, b2 = betas
    for name in grads:
        if name not in store._entries:
            raise ContractError(f"gradient for unknown parameter {name!r}")
    for name, e in store._entries.items():
        e.step += 1
        g = grads.get(name)
        if g is None:
            continue
        g = g.data if isinstance(g, Tensor) else np.asarray(g)
        if g.shape != e.tensor.shape:
            raise DimensionError(
                f"gradient for {name!r} has shape {g.shape}, expected "
                f"{e.tensor.shape}")
        g = g.astype(e.tensor.dtype, copy=False)
        e.m = b1 * e.m + (1.0 - b1) * g
        e.v = b2 * e.v + (1.0 - b2) * (g * g)
        mhat = e.m / (1.0 - b1 ** e.step)
        vhat = e.v / (1.0 - b2 ** e.step)
        new = e.tensor.data - lr * mhat / (np.sqrt(vhat) + eps)
        e.tensor = Tensor(new, name=name)
    return store
