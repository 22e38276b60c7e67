"""Two-stage training orchestration, schedules, checkpointing, evaluation.

Stage one trains the auto-encoder on complete clouds; stage two reloads
its decoder, trains a fresh encoder on partial inputs, and keeps a frozen
copy of the pretrained encoder around to produce target features from the
complete clouds. Adversarial ablations alternate critic and generator
updates.

Determinism: every random draw comes from a generator derived from
(seed, stream, index) so any run is exactly reproducible from its config
and a checkpoint resume continues bit-identically in a fixed precision
mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import checkpoint as ckpt
from .autodiff import Tensor, backward, concat
from .data import batches
from .errors import ConfigError, NumericError
from .losses import (CriticBatch, KernelSpec, LossWeights, feat_match,
                     gan_d_loss, gan_g_loss, interpolate_features,
                     lsgan_losses, reconstruction, total_loss)
from .network import (LatentPair, ModelParams, NetConfig,
                      autoencoder_forward, completion_forward, critic_embed,
                      decode_coarse, decode_fine, encode, init_params,
                      param_shapes)
from .optim import adam_step
from .pointops import chamfer, fidelity_error

ABLATIONS = ("baseline", "l2", "ls", "mmd", "l2+mmd")
_GAN_ABLATIONS = ("ls", "mmd", "l2+mmd")


@dataclass
class TrainConfig:
    net: NetConfig = field(default_factory=NetConfig)
    lr0: float = 1e-4
    lr_decay: float = 0.7
    lr_decay_epochs: int = 20
    batch_size: int = 32
    weights: LossWeights = field(default_factory=LossWeights)
    lambda_f_start: float = 0.01
    lambda_f_end: float = 1.0
    lambda_f_ramp_iters: int = 50000
    d_steps_per_g: int = 1
    epochs: int = 100
    max_iters: Optional[int] = None
    seed: int = 0
    ablation: str = "baseline"
    cd_variant: str = "cd-t"
    kernel: KernelSpec = field(default_factory=KernelSpec)
    gp_weight: float = 1.0
    estimator: str = "biased"
    freeze_decoder: bool = False
    val_fraction: float = 0.1

    def validate(self):
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError(
                f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if self.lr_decay_epochs < 1:
            raise ConfigError("lr_decay_epochs must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ConfigError(
                f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.ablation in _GAN_ABLATIONS and self.batch_size < 2:
            raise ConfigError(
                f"batch_size={self.batch_size} is too small: adversarial "
                f"ablation {self.ablation!r} needs batch_size >= 2")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.cd_variant.lower() not in ("cd-t", "cd-p"):
            raise ConfigError(
                f"cd_variant must be cd-t or cd-p, got {self.cd_variant!r}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.ablation == "ls" and self.net.critic_widths[-1] != 1:
            raise ConfigError(
                "ls ablation scores with the critic output, so "
                f"critic_widths must end at 1, got {self.net.critic_widths}")
        self.net.validate()

    def to_dict(self):
        d = {k: getattr(self, k) for k in (
            "lr0", "lr_decay", "lr_decay_epochs", "batch_size",
            "lambda_f_start", "lambda_f_end", "lambda_f_ramp_iters",
            "d_steps_per_g", "epochs", "max_iters", "seed", "ablation",
            "cd_variant", "gp_weight", "estimator", "freeze_decoder",
            "val_fraction")}
        d["net"] = self.net.to_dict()
        d["weights"] = {
            "lambda_re": self.weights.lambda_re,
            "lambda_gan": self.weights.lambda_gan,
            "lambda_fe": self.weights.lambda_fe,
            "lambda_f": self.weights.lambda_f,
        }
        d["kernel_alphas"] = list(self.kernel.alphas)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        net = NetConfig.from_dict(d.pop("net"))
        weights = LossWeights(**d.pop("weights"))
        kernel = KernelSpec(alphas=tuple(d.pop("kernel_alphas")))
        return cls(net=net, weights=weights, kernel=kernel, **d)


@dataclass
class Checkpoint:
    kind: str                      # "autoencoder" | "completion"
    net: NetConfig
    params: ModelParams
    critic: Optional[ModelParams]
    iteration: int
    epoch: int
    seed: int
    train_config: Optional[dict] = None


def lr_at(cfg, epoch):
    """Step-decayed learning rate: lr0 * decay ** floor(epoch / period)."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr0 * cfg.lr_decay ** (epoch // cfg.lr_decay_epochs)


def lambda_f_at(cfg, iteration):
    """Linear ramp of the fine-loss weight, clamped at its end value."""
    if iteration < 0:
        raise ConfigError(f"iteration must be >= 0, got {iteration}")
    if iteration >= cfg.lambda_f_ramp_iters:
        return cfg.lambda_f_end
    frac = iteration / cfg.lambda_f_ramp_iters
    return cfg.lambda_f_start + frac * (cfg.lambda_f_end - cfg.lambda_f_start)


def _rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def _fmt(x):
    return f"{float(x):.8e}"


def _check_finite(loss, what, iteration):
    if not np.isfinite(loss.data).all():
        raise NumericError(f"non-finite {what} at iteration {iteration}")


def _assert_params_finite(params, iteration):
    for name, t in params.items():
        if not np.isfinite(t.data).all():
            raise NumericError(
                f"parameter {name!r} became non-finite at iteration "
                f"{iteration}")


def save_checkpoint(path, cp):
    arrays = dict(cp.params.store.state_arrays())
    steps = {"gen": cp.params.store.step_counts()}
    if cp.critic is not None:
        for k, v in cp.critic.store.state_arrays().items():
            arrays[f"critic::{k}"] = v
        steps["critic"] = cp.critic.store.step_counts()
    meta = {
        "kind": cp.kind,
        "net": cp.net.to_dict(),
        "iteration": cp.iteration,
        "epoch": cp.epoch,
        "seed": cp.seed,
        "sections": list(cp.params.sections),
        "frozen": sorted(cp.params.frozen),
        "steps": steps,
        "train_config": cp.train_config,
        "has_critic": cp.critic is not None,
    }
    ckpt.save_container(path, meta, arrays)


def load_checkpoint(path):
    meta, arrays = ckpt.load_container(path)
    net = NetConfig.from_dict(meta["net"])
    sections = tuple(meta["sections"])
    params = init_params(net, _rng(0, 999), sections=sections)
    params = replace(params, frozen=frozenset(meta["frozen"]))
    gen_arrays = {k: v for k, v in arrays.items()
                  if not k.startswith("critic::")}
    params.store.load_state(gen_arrays, meta["steps"]["gen"])
    critic = None
    if meta.get("has_critic"):
        critic = init_params(net, _rng(0, 998), sections=("critic",))
        critic_arrays = {k[len("critic::"):]: v for k, v in arrays.items()
                         if k.startswith("critic::")}
        critic.store.load_state(critic_arrays, meta["steps"]["critic"])
    return Checkpoint(kind=meta["kind"], net=net, params=params,
                      critic=critic, iteration=meta["iteration"],
                      epoch=meta["epoch"], seed=meta["seed"],
                      train_config=meta.get("train_config"))


def _log(log_file, line):
    if log_file is not None:
        log_file.write(line + "\n")


def train_autoencoder(cfg, dataset, log_file=None, resume=None):
    """Stage one: fit the encoder/decoder to reconstruct complete clouds.

    Returns a checkpoint whose encoder and decoder stage two reloads.
    """
    cfg.validate()
    if len(dataset) == 0:
        raise ConfigError("train_autoencoder: empty dataset")
    if len(dataset) < cfg.batch_size:
        raise ConfigError(
            f"batch_size={cfg.batch_size} exceeds dataset size "
            f"{len(dataset)}")
    if resume is not None:
        if resume.net.to_dict() != cfg.net.to_dict():
            raise ConfigError("resume checkpoint is config-incompatible")
        params = resume.params
        start_iter = resume.iteration
    else:
        params = init_params(cfg.net, _rng(cfg.seed, 1),
                             sections=("encoder", "decoder"))
        start_iter = 0

    steps_per_epoch = max(len(dataset) // cfg.batch_size, 1)
    total_iters = cfg.max_iters if cfg.max_iters is not None \
        else cfg.epochs * steps_per_epoch
    it = start_iter
    epoch = it // steps_per_epoch
    while it < total_iters:
        lr = lr_at(cfg, epoch)
        offset = it % steps_per_epoch
        for bi, (_, complete, _) in enumerate(
                batches(dataset, cfg.batch_size, _rng(cfg.seed, 2, epoch))):
            if bi < offset:
                continue
            if it >= total_iters:
                break
            y = Tensor(complete)
            lam = lambda_f_at(cfg, it)
            _, coarse, fine = autoencoder_forward(params, cfg.net, y)
            loss = reconstruction(coarse, fine, y, lam, cfg.cd_variant)
            _check_finite(loss, "reconstruction loss", it)
            grads = backward(loss).for_params(params.store)
            adam_step(params.store, grads, lr)
            _assert_params_finite(params, it)
            _log(log_file,
                 f"iter={it} lr={_fmt(lr)} lambda_f={_fmt(lam)} "
                 f"recon={_fmt(loss.item())}")
            it += 1
        epoch = it // steps_per_epoch
    return Checkpoint(kind="autoencoder", net=cfg.net, params=params,
                      critic=None, iteration=it, epoch=epoch, seed=cfg.seed,
                      train_config=cfg.to_dict())


def _needs_critic(ablation):
    return ablation in _GAN_ABLATIONS


def _needs_feat(ablation):
    return ablation in ("l2", "l2+mmd")


def train_completion(cfg, dataset, ae_checkpoint, log_file=None, resume=None):
    """Stage two: completion training with the configured ablation.

    Per batch: target features come from the frozen pretrained encoder on
    the complete clouds; adversarial ablations run ``d_steps_per_g`` critic
    updates, then one generator update on the combined objective. The
    decoder starts from the stage-one weights (optionally frozen); the
    completion encoder trains from scratch.
    """
    cfg.validate()
    if len(dataset) == 0:
        raise ConfigError("train_completion: empty dataset")
    if len(dataset) < cfg.batch_size:
        raise ConfigError(
            f"batch_size={cfg.batch_size} exceeds dataset size "
            f"{len(dataset)}")
    if ae_checkpoint.net.to_dict() != cfg.net.to_dict():
        raise ConfigError(
            "auto-encoder checkpoint is config-incompatible with this run")
    frozen_encoder = ae_checkpoint.params

    if resume is not None:
        gen = resume.params
        critic = resume.critic
        start_iter = resume.iteration
    else:
        gen = init_params(cfg.net, _rng(cfg.seed, 3),
                          sections=("encoder", "decoder"))
        for name in param_shapes(cfg.net, ("decoder",)):
            gen.store.set_value(name, frozen_encoder.store[name].data)
        if cfg.freeze_decoder:
            gen = replace(gen, frozen=frozenset({"decoder"}))
        critic = init_params(cfg.net, _rng(cfg.seed, 4),
                             sections=("critic",)) \
            if _needs_critic(cfg.ablation) else None
        start_iter = 0

    steps_per_epoch = max(len(dataset) // cfg.batch_size, 1)
    total_iters = cfg.max_iters if cfg.max_iters is not None \
        else cfg.epochs * steps_per_epoch
    it = start_iter
    epoch = it // steps_per_epoch
    target_cache = {}
    while it < total_iters:
        lr = lr_at(cfg, epoch)
        offset = it % steps_per_epoch
        for bi, (partial, complete, _, sel) in enumerate(
                batches(dataset, cfg.batch_size, _rng(cfg.seed, 5, epoch),
                        with_indices=True)):
            if bi < offset:
                continue
            if it >= total_iters:
                break
            part_t = Tensor(partial)
            comp_t = Tensor(complete)
            lam = lambda_f_at(cfg, it)

            # frozen-encoder targets; constants for every loss below. The
            # frozen encoder never changes, so per-sample results are cached
            # (per-sample outputs are independent of batch composition).
            missing = [i for i, idx in enumerate(sel)
                       if idx not in target_cache]
            if missing:
                fy_new = encode(frozen_encoder, cfg.net,
                                Tensor(complete[missing]))
                for j, i in enumerate(missing):
                    target_cache[sel[i]] = (fy_new.f1.data[j],
                                            fy_new.f2.data[j])
            f1y = Tensor(np.stack([target_cache[idx][0] for idx in sel]))
            f2y = Tensor(np.stack([target_cache[idx][1] for idx in sel]))
            fy = LatentPair(f1y, f2y)
            target_feat = concat([f1y, f2y], axis=1)

            d_val = 0.0
            if critic is not None:
                for d_step in range(cfg.d_steps_per_g):
                    d_val = _critic_update(cfg, critic, gen, part_t,
                                           target_feat, lr, it, d_step)

            fx = encode(gen, cfg.net, part_t)
            coarse = decode_coarse(gen, cfg.net, fx.f2)
            fine = decode_fine(gen, cfg.net, fx.f2, coarse, part_t)
            recon = reconstruction(coarse, fine, comp_t, lam, cfg.cd_variant)

            feat = feat_match(fx, fy) if _needs_feat(cfg.ablation) else 0.0
            gan_g = 0.0
            if critic is not None:
                fake_feat = concat([fx.f1, fx.f2], axis=1)
                real_emb = critic_embed(critic, cfg.net, target_feat)
                fake_emb = critic_embed(critic, cfg.net, fake_feat)
                if cfg.ablation == "ls":
                    gan_g = lsgan_losses(real_emb.detach(), fake_emb)[0]
                else:
                    gan_g = gan_g_loss(
                        CriticBatch(real=real_emb, fake=fake_emb),
                        cfg.kernel, cfg.estimator)

            loss = total_loss(recon, gan_g, feat, cfg.weights)
            _check_finite(loss, "completion loss", it)
            grads = backward(loss).for_params(gen.store)
            for name in list(grads):
                if name.split(".")[0] in gen.frozen:
                    del grads[name]
            adam_step(gen.store, grads, lr)
            _assert_params_finite(gen, it)

            def _f(x):
                return x.item() if isinstance(x, Tensor) else float(x)
            _log(log_file,
                 f"iter={it} lr={_fmt(lr)} lambda_f={_fmt(lam)} "
                 f"recon={_fmt(recon.item())} feat={_fmt(_f(feat))} "
                 f"gan_g={_fmt(_f(gan_g))} gan_d={_fmt(_f(d_val))} "
                 f"total={_fmt(loss.item())}")
            it += 1
        epoch = it // steps_per_epoch
    return Checkpoint(kind="completion", net=cfg.net, params=gen,
                      critic=critic, iteration=it, epoch=epoch,
                      seed=cfg.seed, train_config=cfg.to_dict())


def _critic_update(cfg, critic, gen, part_t, target_feat, lr, iteration,
                   d_step):
    """One critic step; generator features are detached constants here."""
    fx = encode(gen, cfg.net, part_t)
    fake_feat = concat([fx.f1.detach(), fx.f2.detach()], axis=1).detach()
    real_emb = critic_embed(critic, cfg.net, target_feat)
    fake_emb = critic_embed(critic, cfg.net, fake_feat)
    if cfg.ablation == "ls":
        _, d_loss = lsgan_losses(real_emb, fake_emb)
    else:
        theta_raw = _rng(cfg.seed, 6, iteration, d_step).uniform(
            size=(target_feat.shape[0], 1))
        eps = 1e-6
        theta = eps + (1.0 - 2.0 * eps) * theta_raw
        xhat = interpolate_features(target_feat, fake_feat, theta)
        batch = CriticBatch(real=real_emb, fake=fake_emb, interp_inputs=xhat)
        d_loss = gan_d_loss(batch, cfg.kernel,
                            lambda t: critic_embed(critic, cfg.net, t),
                            cfg.gp_weight, cfg.estimator)
    _check_finite(d_loss, "critic loss", iteration)
    grads = backward(d_loss).for_params(critic.store)
    adam_step(critic.store, grads, lr)
    return d_loss.item()


class MetricTable:
    """Per-sample metric values with per-category and overall aggregation."""

    def __init__(self):
        self.samples = []   # (category, resolution, variant, value)

    def add(self, category, resolution, variant, value):
        self.samples.append((category, int(resolution), variant,
                             float(value)))

    def resolutions(self):
        return sorted({s[1] for s in self.samples})

    def variants(self):
        return sorted({s[2] for s in self.samples})

    def categories(self):
        return sorted({s[0] for s in self.samples})

    def category_mean(self, category, resolution, variant):
        vals = [v for c, r, vr, v in self.samples
                if c == category and r == resolution and vr == variant]
        return float(np.mean(np.asarray(vals, dtype=np.float64)))

    def average(self, resolution, variant):
        """Mean of per-category means (equal category weight)."""
        cats = self.categories()
        return float(np.mean([self.category_mean(c, resolution, variant)
                              for c in cats]))

    def rows(self):
        """Aggregated (category, resolution, variant, value) rows, 'Avg'
        first within each (resolution, variant) group."""
        out = []
        for variant in self.variants():
            for res in self.resolutions():
                out.append(("Avg", res, variant,
                            self.average(res, variant)))
                for c in self.categories():
                    out.append((c, res, variant,
                                self.category_mean(c, res, variant)))
        return out


def evaluate(cp, dataset, variant, resolutions=None, batch_size=8):
    """Run completion on every sample and aggregate the named metric.

    variant: "cd-t" / "cd-p" (against ground truth) or "fidelity"
    (input-to-output, no ground truth needed). Values are raw (unscaled);
    table rendering applies the 10^3 factor.
    """
    v = str(variant).lower()
    if v not in ("cd-t", "cd-p", "fidelity"):
        raise ConfigError(f"unknown evaluation variant {variant!r}")
    net = cp.net
    if resolutions is None:
        resolutions = [net.fine_count]
    for res in resolutions:
        if res < 1 or res % net.coarse_count != 0:
            raise ConfigError(
                f"resolution {res} is not a positive multiple of "
                f"coarse_count={net.coarse_count}")
    table = MetricTable()
    for res in resolutions:
        run_cfg = net.with_fine_count(res)
        for start in range(0, len(dataset), batch_size):
            chunk = dataset.samples[start:start + batch_size]
            partial = Tensor(np.stack([s.partial for s in chunk]))
            _, _, fine = completion_forward(cp.params, run_cfg, partial)
            for i, s in enumerate(chunk):
                pred = Tensor(fine.data[i])
                if v == "fidelity":
                    val = fidelity_error(Tensor(s.partial), pred).item()
                else:
                    val = chamfer(pred, Tensor(s.complete), v).total.item()
                table.add(s.category, res, v, val)
    return table


def validation_cd(cp, dataset, variant="cd-t", resolution=None,
                  batch_size=8):
    """Mean chamfer of fine and coarse outputs over a dataset; convenience
    for convergence checks. Returns (fine_cd, coarse_cd)."""
    net = cp.net if resolution is None else cp.net.with_fine_count(resolution)
    fine_vals, coarse_vals = [], []
    for start in range(0, len(dataset), batch_size):
        chunk = dataset.samples[start:start + batch_size]
        partial = Tensor(np.stack([s.partial for s in chunk]))
        _, coarse, fine = completion_forward(cp.params, net, partial)
        for i, s in enumerate(chunk):
            gt = Tensor(s.complete)
            fine_vals.append(
                chamfer(Tensor(fine.data[i]), gt, variant).total.item())
            coarse_vals.append(
                chamfer(Tensor(coarse.data[i]), gt, variant).total.item())
    return float(np.mean(fine_vals)), float(np.mean(coarse_vals))
