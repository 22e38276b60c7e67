"""Training objectives: feature matching, reconstruction, and the
adversarial losses (kernel two-sample statistic with a learned critic
embedding, plus the least-squares variant used as an ablation)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import (Tensor, add_const, backward, clip_min, matmul, mul,
                       pow_const, reshape, scale, sqrt, sub, swap_last,
                       tmean, tsum)
from .errors import ConfigError, ContractError, DimensionError
from .pointops import chamfer


@dataclass
class LossWeights:
    """Weights of the three completion-loss components plus the scheduled
    coarse/fine balance used inside the reconstruction term."""
    lambda_re: float = 200.0
    lambda_gan: float = 1.0
    lambda_fe: float = 1000.0
    lambda_f: float = 0.01

    def __post_init__(self):
        for name in ("lambda_re", "lambda_gan", "lambda_fe", "lambda_f"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0.01 <= self.lambda_f <= 1.0:
            raise ConfigError(
                f"lambda_f={self.lambda_f} outside its ramp bounds "
                f"[0.01, 1.0]")


@dataclass
class KernelSpec:
    """Rational quadratic kernel mixture: sum over alphas of
    (1 + d^2 / (2*alpha)) ** (-alpha)."""
    alphas: tuple = (0.2, 0.5, 1.0, 2.0, 5.0)

    def __post_init__(self):
        if len(self.alphas) == 0:
            raise ConfigError("kernel needs at least one alpha scale")
        if any(a <= 0 for a in self.alphas):
            raise ConfigError(f"kernel alphas must be positive: {self.alphas}")


@dataclass
class CriticBatch:
    """Critic embeddings of complete-cloud features (real) and partial-cloud
    features (fake), plus the per-sample feature interpolates the gradient
    penalty is evaluated at."""
    real: Tensor
    fake: Tensor
    interp_inputs: Optional[Tensor] = None

    def __post_init__(self):
        if self.real.ndim != 2 or self.fake.ndim != 2:
            raise DimensionError(
                f"critic embeddings must be [b, e], got {self.real.shape} "
                f"and {self.fake.shape}")
        if self.real.shape != self.fake.shape:
            raise DimensionError(
                f"real/fake embedding shapes differ: {self.real.shape} vs "
                f"{self.fake.shape}")
        if self.real.shape[0] < 2:
            raise ContractError("critic batches need at least 2 samples")


def interpolate_features(real_feat, fake_feat, theta):
    """x_hat = theta*fake + (1-theta)*real with per-sample theta in (0, 1).

    Returned as a detached leaf: the penalty differentiates the critic at
    x_hat, not the features that produced it.
    """
    theta = np.asarray(theta, dtype=real_feat.dtype).reshape(-1, 1)
    if np.any(theta <= 0) or np.any(theta >= 1):
        raise ContractError("interpolation theta must lie strictly in (0, 1)")
    r = real_feat.data if isinstance(real_feat, Tensor) else real_feat
    f = fake_feat.data if isinstance(fake_feat, Tensor) else fake_feat
    return Tensor(theta * f + (1.0 - theta) * r)


def feat_match(fx, fy):
    """Mean over the batch of the per-sample Euclidean distances between
    corresponding feature vectors, summed over both feature levels."""
    if fx.f1.shape != fy.f1.shape or fx.f2.shape != fy.f2.shape:
        raise ConfigError(
            f"feature widths disagree: {fx.f1.shape}/{fx.f2.shape} vs "
            f"{fy.f1.shape}/{fy.f2.shape}")
    d1 = sub(fx.f1, fy.f1)
    d2 = sub(fx.f2, fy.f2)
    n1 = sqrt(tsum(mul(d1, d1), axis=1))
    n2 = sqrt(tsum(mul(d2, d2), axis=1))
    return tmean(n1 + n2)


def _rq_from_sqdist(d2, spec):
    k = None
    for alpha in spec.alphas:
        term = pow_const(add_const(scale(d2, 1.0 / (2.0 * alpha)), 1.0),
                         -alpha)
        k = term if k is None else k + term
    return k


def rq_kernel(a, b, spec):
    """Rational quadratic kernel between two vectors."""
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"kernel inputs differ in shape: {a.shape} vs "
                             f"{b.shape}")
    d = sub(a, b)
    return _rq_from_sqdist(tsum(mul(d, d)), spec)


def _rq_matrix(A, B, spec):
    """Pairwise kernel matrix [m, n] between rows of A and B."""
    m, n = A.shape[0], B.shape[0]
    sa = reshape(tsum(mul(A, A), axis=1), (m, 1))
    sb = reshape(tsum(mul(B, B), axis=1), (1, n))
    cross = matmul(A, swap_last(B))
    d2 = clip_min(sa + sb + scale(cross, -2.0), 0.0)
    return _rq_from_sqdist(d2, spec)


def mmd2(A, B, spec, estimator="biased"):
    """Squared kernel two-sample statistic between row sets A[m, e] and
    B[n, e]: E[k(a,a')] + E[k(b,b')] - 2 E[k(a,b)].

    "biased" keeps the within-set diagonals; "unbiased" excludes them
    (U-statistic) and needs at least two rows per set. The cross term is
    always the full m*n mean.
    """
    A = A if isinstance(A, Tensor) else Tensor(A)
    B = B if isinstance(B, Tensor) else Tensor(B)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise DimensionError(f"mmd2 expects [m, e] and [n, e], got "
                             f"{A.shape} and {B.shape}")
    m, n = A.shape[0], B.shape[0]
    if estimator not in ("biased", "unbiased"):
        raise ConfigError(f"unknown estimator {estimator!r}")
    if estimator == "unbiased" and (m < 2 or n < 2):
        raise ContractError(
            f"unbiased estimator needs >= 2 samples per set, got {m} and {n}")
    kaa = _rq_matrix(A, A, spec)
    kbb = _rq_matrix(B, B, spec)
    kab = _rq_matrix(A, B, spec)
    if estimator == "biased":
        within = tmean(kaa) + tmean(kbb)
    else:
        eye_m = np.eye(m, dtype=A.dtype)
        eye_n = np.eye(n, dtype=B.dtype)
        off_a = scale(tsum(kaa) - tsum(mul(kaa, Tensor(eye_m))),
                      1.0 / (m * (m - 1)))
        off_b = scale(tsum(kbb) - tsum(mul(kbb, Tensor(eye_n))),
                      1.0 / (n * (n - 1)))
        within = off_a + off_b
    return within + scale(tmean(kab), -2.0)


def gan_g_loss(batch, spec, estimator="biased"):
    """Generator objective: the kernel discrepancy between real and fake
    critic embeddings. Real embeddings are constants here — only the fake
    side feeds gradients back to the generator."""
    return mmd2(batch.real.detach(), batch.fake, spec, estimator)


def gan_d_loss(batch, spec, critic_fn, gp_weight=1.0, estimator="biased"):
    """Critic objective: negated generator loss plus the gradient penalty
    pushing the critic's input-gradient norm toward 1 at the feature
    interpolates.

    ``critic_fn`` maps a [b, d] tensor to [b, e] embeddings through taped
    operations; the input-gradient of the summed embedding is obtained by a
    dedicated backward pass, which is itself differentiable so the penalty
    trains the critic.
    """
    if batch.interp_inputs is None:
        raise ContractError("gan_d_loss needs interp_inputs on the batch")
    base = scale(mmd2(batch.real, batch.fake, spec, estimator), -1.0)
    emb = critic_fn(batch.interp_inputs)
    g = backward(tsum(emb)).wrt(batch.interp_inputs)
    gnorm = sqrt(tsum(mul(g, g), axis=1))
    pen = tmean(mul(add_const(gnorm, -1.0), add_const(gnorm, -1.0)))
    return base + scale(pen, float(gp_weight))


def lsgan_losses(real_scores, fake_scores):
    """Least-squares adversarial pair: D pushes real scores to 1 and fake
    to 0; G pushes fake scores to 1. Returns (g_loss, d_loss)."""
    if real_scores.shape != fake_scores.shape:
        raise DimensionError(
            f"score shapes differ: {real_scores.shape} vs "
            f"{fake_scores.shape}")
    rm1 = add_const(real_scores, -1.0)
    fm1 = add_const(fake_scores, -1.0)
    d = scale(tmean(mul(rm1, rm1)), 0.5) + scale(
        tmean(mul(fake_scores, fake_scores)), 0.5)
    g = scale(tmean(mul(fm1, fm1)), 0.5)
    return g, d


def reconstruction(coarse, fine, y, lambda_f, variant):
    """Chamfer distance of the coarse output to the target plus lambda_f
    times the fine output's, both under the named variant."""
    return (chamfer(coarse, y, variant).total
            + scale(chamfer(fine, y, variant).total, float(lambda_f)))


def total_loss(recon, gan_g, feat, w):
    """Weighted sum of the three completion-loss components."""
    def _wrap(x):
        return x if isinstance(x, Tensor) else Tensor(np.asarray(float(x)))
    return (scale(_wrap(recon), w.lambda_re)
            + scale(_wrap(gan_g), w.lambda_gan)
            + scale(_wrap(feat), w.lambda_fe))
