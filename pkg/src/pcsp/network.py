"""Encoder, coarse-to-fine decoder and critic forward passes.

All widths come from ``NetConfig`` so the same code runs at full scale and
at desk scale. Shared MLPs are matmuls over the feature axis applied
identically per point (weights shared across points).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .autodiff import (Tensor, broadcast_to, concat, default_dtype,
                       gather_points, matmul, max_points, relu, repeat_axis,
                       reshape)
from .errors import ConfigError, DimensionError, EmptyInputError
from .optim import ParamStore
from .pointops import fps_batch, mirror_xy, rect_grid_coords

SECTIONS = ("encoder", "decoder", "critic")


@dataclass
class NetConfig:
    d1: int = 256
    d2: int = 1024
    coarse_count: int = 1024
    mirror_sample: int = 512
    fine_count: int = 16384
    encoder_mlp1: Optional[tuple] = None   # defaults to (128, d1)
    encoder_mlp2: Optional[tuple] = None   # defaults to (512, d2)
    coarse_fc: Optional[tuple] = None      # defaults to (1024, 1024, 3*coarse)
    fine_mlp: tuple = (512, 512, 3)
    critic_widths: tuple = (256, 64)
    grid_extent: float = 0.05

    def __post_init__(self):
        if self.encoder_mlp1 is None:
            self.encoder_mlp1 = (128, self.d1)
        if self.encoder_mlp2 is None:
            self.encoder_mlp2 = (512, self.d2)
        if self.coarse_fc is None:
            self.coarse_fc = (1024, 1024, 3 * self.coarse_count)
        self.encoder_mlp1 = tuple(self.encoder_mlp1)
        self.encoder_mlp2 = tuple(self.encoder_mlp2)
        self.coarse_fc = tuple(self.coarse_fc)
        self.fine_mlp = tuple(self.fine_mlp)
        self.critic_widths = tuple(self.critic_widths)
        self.validate()

    def validate(self):
        if min(self.d1, self.d2, self.coarse_count, self.mirror_sample,
               self.fine_count) < 1:
            raise ConfigError("all dimensional settings must be positive")
        if self.fine_count % self.coarse_count != 0:
            raise ConfigError(
                f"fine_count={self.fine_count} is not a multiple of "
                f"coarse_count={self.coarse_count}")
        if self.encoder_mlp1[-1] != self.d1:
            raise ConfigError(
                f"encoder_mlp1 must end at d1={self.d1}, got "
                f"{self.encoder_mlp1}")
        if self.encoder_mlp2[-1] != self.d2:
            raise ConfigError(
                f"encoder_mlp2 must end at d2={self.d2}, got "
                f"{self.encoder_mlp2}")
        if self.coarse_fc[-1] != 3 * self.coarse_count:
            raise ConfigError(
                f"coarse_fc must end at 3*coarse_count="
                f"{3 * self.coarse_count}, got {self.coarse_fc}")
        if self.fine_mlp[-1] != 3:
            raise ConfigError(f"fine_mlp must end at 3, got {self.fine_mlp}")

    @property
    def upsample_ratio(self):
        return self.fine_count // self.coarse_count

    def with_fine_count(self, n):
        return replace(self, fine_count=int(n))

    def to_dict(self):
        return {
            "d1": self.d1, "d2": self.d2,
            "coarse_count": self.coarse_count,
            "mirror_sample": self.mirror_sample,
            "fine_count": self.fine_count,
            "encoder_mlp1": list(self.encoder_mlp1),
            "encoder_mlp2": list(self.encoder_mlp2),
            "coarse_fc": list(self.coarse_fc),
            "fine_mlp": list(self.fine_mlp),
            "critic_widths": list(self.critic_widths),
            "grid_extent": self.grid_extent,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("encoder_mlp1", "encoder_mlp2", "coarse_fc", "fine_mlp",
                    "critic_widths"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


class LatentPair(NamedTuple):
    f1: Tensor
    f2: Tensor


@dataclass
class ModelParams:
    store: ParamStore
    sections: tuple
    frozen: frozenset = field(default_factory=frozenset)

    def items(self):
        return self.store.items()

    def trainable_names(self):
        return [name for name in self.store.names()
                if name.split(".")[0] not in self.frozen]


def _layer_shapes(prefix, d_in, widths):
    shapes = {}
    for i, w in enumerate(widths):
        shapes[f"{prefix}.{i}.w"] = (d_in, w)
        shapes[f"{prefix}.{i}.b"] = (w,)
        d_in = w
    return shapes


def param_shapes(cfg, sections=SECTIONS):
    """Every parameter's shape, derivable from the config alone."""
    shapes = {}
    if "encoder" in sections:
        shapes.update(_layer_shapes("encoder.mlp1", 3, cfg.encoder_mlp1))
        shapes.update(_layer_shapes("encoder.mlp2", 2 * cfg.d1,
                                    cfg.encoder_mlp2))
    if "decoder" in sections:
        shapes.update(_layer_shapes("decoder.fc", cfg.d2, cfg.coarse_fc))
        shapes.update(_layer_shapes("decoder.fine", 3 + 2 + cfg.d2,
                                    cfg.fine_mlp))
    if "critic" in sections:
        shapes.update(_layer_shapes("critic", cfg.d1 + cfg.d2,
                                    cfg.critic_widths))
    return shapes


def init_params(cfg, rng, sections=SECTIONS, bias=0.0):
    """Uniform fan-in-scaled weights, constant biases (0 by default)."""
    store = ParamStore()
    for name, shape in param_shapes(cfg, sections).items():
        if name.endswith(".w"):
            bound = math.sqrt(6.0 / shape[0])
            arr = rng.uniform(-bound, bound, size=shape)
        else:
            arr = np.full(shape, float(bias))
        store.add(name, arr.astype(default_dtype()))
    return ModelParams(store=store, sections=tuple(sections))


def zero_params(cfg, sections=SECTIONS):
    store = ParamStore()
    for name, shape in param_shapes(cfg, sections).items():
        store.add(name, np.zeros(shape, dtype=default_dtype()))
    return ModelParams(store=store, sections=tuple(sections))


def _check_section(params, cfg, section):
    want = param_shapes(cfg, (section,))
    for name, shape in want.items():
        if name not in params.store:
            raise ConfigError(f"missing parameter {name!r} for this config")
        have = params.store[name].shape
        if have != shape:
            raise ConfigError(
                f"parameter {name!r} has shape {have}, config expects "
                f"{shape}")


def _run_mlp(params, prefix, n_layers, h):
    for i in range(n_layers):
        h = matmul(h, params.store[f"{prefix}.{i}.w"]) \
            + params.store[f"{prefix}.{i}.b"]
        if i < n_layers - 1:
            h = relu(h)
    return h


def encode(params, cfg, x):
    """Two-step per-point feature extraction with max pooling after each
    step. Returns the (f1, f2) latent pair; exactly permutation-invariant
    in the input points."""
    t = x if isinstance(x, Tensor) else Tensor(x)
    if t.ndim != 3 or t.shape[-1] != 3:
        raise DimensionError(f"encode expects [b, n, 3], got {t.shape}")
    if t.shape[1] == 0:
        raise EmptyInputError("encode: empty point cloud")
    _check_section(params, cfg, "encoder")
    bsz, n, _ = t.shape
    h1 = _run_mlp(params, "encoder.mlp1", len(cfg.encoder_mlp1), t)
    f1 = max_points(h1)                                       # [b, d1]
    f1_tiled = broadcast_to(reshape(f1, (bsz, 1, cfg.d1)), (bsz, n, cfg.d1))
    h2 = _run_mlp(params, "encoder.mlp2", len(cfg.encoder_mlp2),
                  concat([f1_tiled, h1], axis=2))
    f2 = max_points(h2)                                       # [b, d2]
    return LatentPair(f1, f2)


def decode_coarse(params, cfg, f2):
    """Fully-connected stack on the global feature, reshaped to the coarse
    cloud."""
    if f2.ndim != 2 or f2.shape[1] != cfg.d2:
        raise ConfigError(f"decode_coarse expects f2 of width {cfg.d2}, "
                          f"got shape {f2.shape}")
    _check_section(params, cfg, "decoder")
    flat = _run_mlp(params, "decoder.fc", len(cfg.coarse_fc), f2)
    return reshape(flat, (f2.shape[0], cfg.coarse_count, 3))


def fine_seed_centers(cfg, coarse, partial_input):
    """Seed centers for the refinement stage: mirror the partial input,
    maximin-subsample it, merge with the coarse cloud, and maximin-subsample
    the union back to the coarse size."""
    mirrored = mirror_xy(partial_input)
    midx = fps_batch(mirrored.data, cfg.mirror_sample)
    msel = gather_points(mirrored, midx)
    combined = concat([coarse, msel], axis=1)
    sidx = fps_batch(combined.data, cfg.coarse_count)
    return gather_points(combined, sidx)


def decode_fine(params, cfg, f2, coarse, partial_input):
    """Refinement stage: each seed center is repeated fine_count/coarse_count
    times, carries its 2-D grid offset and the repeated global feature, and
    a shared MLP maps that feature to a residual added back onto the
    center."""
    if f2.ndim != 2 or f2.shape[1] != cfg.d2:
        raise ConfigError(f"decode_fine expects f2 of width {cfg.d2}, got "
                          f"shape {f2.shape}")
    if coarse.shape[1] != cfg.coarse_count:
        raise ConfigError(
            f"coarse cloud has {coarse.shape[1]} points, config expects "
            f"{cfg.coarse_count}")
    if cfg.fine_count % cfg.coarse_count != 0:
        raise ConfigError(
            f"fine_count={cfg.fine_count} is not a multiple of "
            f"coarse_count={cfg.coarse_count}")
    _check_section(params, cfg, "decoder")
    part = partial_input if isinstance(partial_input, Tensor) \
        else Tensor(partial_input)
    if part.shape[1] == 0:
        raise EmptyInputError("decode_fine: empty partial input")
    bsz = f2.shape[0]
    r = cfg.upsample_ratio
    n = cfg.fine_count

    seeds = fine_seed_centers(cfg, coarse, part)
    centers = repeat_axis(seeds, r, axis=1)                   # [b, N, 3]
    grid = rect_grid_coords(r, cfg.grid_extent)
    grid_full = np.tile(grid, (cfg.coarse_count, 1)).astype(f2.dtype)
    grid_b = Tensor(np.broadcast_to(grid_full, (bsz, n, 2)).copy())
    f2_b = broadcast_to(reshape(f2, (bsz, 1, cfg.d2)), (bsz, n, cfg.d2))
    f3 = concat([centers, grid_b, f2_b], axis=2)              # [b, N, 5+d2]
    residual = _run_mlp(params, "decoder.fine", len(cfg.fine_mlp), f3)
    return centers + residual


def critic_embed(params, cfg, feat):
    """MLP mapping concatenated latent features [b, d1+d2] to the critic
    embedding."""
    if feat.ndim != 2 or feat.shape[1] != cfg.d1 + cfg.d2:
        raise ConfigError(
            f"critic_embed expects width {cfg.d1 + cfg.d2}, got shape "
            f"{feat.shape}")
    _check_section(params, cfg, "critic")
    return _run_mlp(params, "critic", len(cfg.critic_widths), feat)


def autoencoder_forward(params, cfg, y):
    """Encode a complete cloud and decode it back; the complete cloud also
    plays the partial-input role in the refinement stage."""
    t = y if isinstance(y, Tensor) else Tensor(y)
    latents = encode(params, cfg, t)
    coarse = decode_coarse(params, cfg, latents.f2)
    fine = decode_fine(params, cfg, latents.f2, coarse, t)
    return latents, coarse, fine


def completion_forward(params, cfg, partial):
    """Full completion pass on a partial cloud."""
    t = partial if isinstance(partial, Tensor) else Tensor(partial)
    latents = encode(params, cfg, t)
    coarse = decode_coarse(params, cfg, latents.f2)
    fine = decode_fine(params, cfg, latents.f2, coarse, t)
    return latents, coarse, fine
