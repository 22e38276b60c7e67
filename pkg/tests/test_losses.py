import numpy as np
import pytest

from pcsp.autodiff import backward, matmul, precision, tensor
from pcsp.errors import ConfigError, ContractError, DimensionError
from pcsp.losses import (CriticBatch, KernelSpec, LossWeights, feat_match,
                         gan_d_loss, gan_g_loss, interpolate_features,
                         lsgan_losses, mmd2, reconstruction, rq_kernel,
                         total_loss)
from pcsp.network import LatentPair
from pcsp.pointops import chamfer

from helpers import finite_diff, rel_err


def _pair(f1, f2):
    return LatentPair(tensor(f1), tensor(f2))


def _rq_scalar(a, b, alphas):
    d2 = float(((a - b) ** 2).sum())
    return sum((1.0 + d2 / (2 * al)) ** (-al) for al in alphas)


def _naive_mmd2(A, B, alphas, estimator):
    m, n = len(A), len(B)
    kaa = np.array([[_rq_scalar(A[i], A[j], alphas) for j in range(m)]
                    for i in range(m)])
    kbb = np.array([[_rq_scalar(B[i], B[j], alphas) for j in range(n)]
                    for i in range(n)])
    kab = np.array([[_rq_scalar(A[i], B[j], alphas) for j in range(n)]
                    for i in range(m)])
    if estimator == "biased":
        return kaa.mean() + kbb.mean() - 2 * kab.mean()
    off_a = (kaa.sum() - np.trace(kaa)) / (m * (m - 1))
    off_b = (kbb.sum() - np.trace(kbb)) / (n * (n - 1))
    return off_a + off_b - 2 * kab.mean()


# --- feature matching ------------------------------------------------------

def test_feat_match_identical_is_zero():
    rng = np.random.default_rng(0)
    f1 = rng.normal(size=(3, 4))
    f2 = rng.normal(size=(3, 8))
    assert feat_match(_pair(f1, f2), _pair(f1, f2)).item() == 0.0


def test_feat_match_single_sample_analytic():
    fx = _pair([[3.0, 4.0]], [[1.0, 1.0, 1.0]])
    fy = _pair([[0.0, 0.0]], [[1.0, 1.0, 1.0]])
    assert abs(feat_match(fx, fy).item() - 5.0) < 1e-12


def test_feat_match_matches_loop_oracle():
    with precision("float64"):
        rng = np.random.default_rng(1)
        for _ in range(100):
            b = int(rng.integers(1, 5))
            f1x, f1y = rng.normal(size=(2, b, 6))
            f2x, f2y = rng.normal(size=(2, b, 9))
            want = np.mean([np.linalg.norm(f1x[i] - f1y[i])
                            + np.linalg.norm(f2x[i] - f2y[i])
                            for i in range(b)])
            got = feat_match(_pair(f1x, f2x), _pair(f1y, f2y)).item()
            assert abs(got - want) < 1e-12


def test_feat_match_width_mismatch_rejected():
    with pytest.raises(ConfigError):
        feat_match(_pair(np.zeros((2, 3)), np.zeros((2, 4))),
                   _pair(np.zeros((2, 3)), np.zeros((2, 5))))


# --- rational quadratic kernel ---------------------------------------------

def test_rq_kernel_identical_inputs():
    spec = KernelSpec()
    a = tensor([1.0, -2.0, 0.5])
    assert abs(rq_kernel(a, a, spec).item() - len(spec.alphas)) < 1e-12


def test_rq_kernel_single_alpha_analytic():
    spec = KernelSpec(alphas=(1.0,))
    a = tensor([1.0, 1.0])
    b = tensor([0.0, 0.0])  # squared distance 2
    assert abs(rq_kernel(a, b, spec).item() - 0.5) < 1e-12


def test_rq_kernel_symmetry():
    rng = np.random.default_rng(2)
    spec = KernelSpec()
    for _ in range(50):
        a = rng.normal(size=7)
        b = rng.normal(size=7)
        ab = rq_kernel(tensor(a), tensor(b), spec).item()
        ba = rq_kernel(tensor(b), tensor(a), spec).item()
        assert abs(ab - ba) < 1e-12


def test_rq_kernel_bounded_and_monotone():
    spec = KernelSpec()
    a = np.zeros(3)
    prev = len(spec.alphas) + 1.0
    for dist in np.linspace(0, 5, 11):
        b = np.array([dist, 0.0, 0.0])
        k = rq_kernel(tensor(a), tensor(b), spec).item()
        assert 0 < k <= len(spec.alphas) + 1e-12
        assert k <= prev + 1e-12
        prev = k


def test_kernel_spec_validation():
    with pytest.raises(ConfigError):
        KernelSpec(alphas=())
    with pytest.raises(ConfigError):
        KernelSpec(alphas=(1.0, -2.0))


# --- mmd2 -------------------------------------------------------------------

def test_mmd2_self_biased_is_zero():
    rng = np.random.default_rng(3)
    A = tensor(rng.normal(size=(6, 4)))
    assert abs(mmd2(A, A, KernelSpec(), "biased").item()) < 1e-12


def test_mmd2_one_sample_biased_analytic():
    with precision("float64"):
        spec = KernelSpec(alphas=(1.0, 2.0))
        a = np.array([[1.0, 0.0]])
        b = np.array([[0.0, 1.0]])
        want = (_rq_scalar(a[0], a[0], spec.alphas)
                + _rq_scalar(b[0], b[0], spec.alphas)
                - 2 * _rq_scalar(a[0], b[0], spec.alphas))
        got = mmd2(tensor(a), tensor(b), spec, "biased").item()
        assert abs(got - want) < 1e-12


def test_mmd2_matches_double_loop_oracle():
    with precision("float64"):
        rng = np.random.default_rng(4)
        spec = KernelSpec()
        for _ in range(100):
            m, n = rng.integers(2, 9, size=2)
            A = rng.normal(size=(int(m), 3))
            B = rng.normal(size=(int(n), 3))
            for estimator in ("biased", "unbiased"):
                got = mmd2(tensor(A), tensor(B), spec, estimator).item()
                want = _naive_mmd2(A, B, spec.alphas, estimator)
                assert abs(got - want) < 1e-12


def test_mmd2_biased_nonnegative():
    rng = np.random.default_rng(5)
    spec = KernelSpec()
    for _ in range(20):
        A = rng.normal(size=(5, 3))
        B = rng.normal(size=(4, 3))
        assert mmd2(tensor(A), tensor(B), spec, "biased").item() >= -1e-12


def test_mmd2_unbiased_needs_two_samples():
    spec = KernelSpec()
    with pytest.raises(ContractError):
        mmd2(tensor(np.zeros((1, 3))), tensor(np.ones((4, 3))), spec,
             "unbiased")


# --- adversarial losses -----------------------------------------------------

def test_gan_g_zero_for_identical_embeddings():
    rng = np.random.default_rng(6)
    emb = tensor(rng.normal(size=(4, 5)))
    batch = CriticBatch(real=emb, fake=emb)
    assert abs(gan_g_loss(batch, KernelSpec()).item()) < 1e-12


def test_gan_g_equals_mmd2():
    rng = np.random.default_rng(7)
    spec = KernelSpec()
    for estimator in ("biased", "unbiased"):
        real = tensor(rng.normal(size=(5, 4)))
        fake = tensor(rng.normal(size=(5, 4)))
        got = gan_g_loss(CriticBatch(real=real, fake=fake), spec,
                         estimator).item()
        want = mmd2(real, fake, spec, estimator).item()
        assert abs(got - want) < 1e-12


def test_gan_g_gradient_matches_finite_differences():
    with precision("float64"):
        rng = np.random.default_rng(8)
        spec = KernelSpec()
        real0 = rng.normal(size=(4, 3))
        fake0 = rng.normal(size=(4, 3))
        fake = tensor(fake0)
        loss = gan_g_loss(CriticBatch(real=tensor(real0), fake=fake), spec)
        g = backward(loss).wrt(fake).data
        f = finite_diff(
            lambda x: _naive_mmd2(real0, x, spec.alphas, "biased"), fake0)
        assert rel_err(g, f) < 1e-4


def test_gan_g_real_side_is_constant():
    rng = np.random.default_rng(9)
    real = tensor(rng.normal(size=(4, 3)))
    fake = tensor(rng.normal(size=(4, 3)))
    loss = gan_g_loss(CriticBatch(real=real, fake=fake), KernelSpec())
    g = backward(loss).wrt(real).data
    assert np.array_equal(g, np.zeros_like(real.data))


def test_gradient_penalty_linear_critic_unit_norm():
    with precision("float64"):
        rng = np.random.default_rng(10)
        w = np.zeros((6, 1))
        w[0, 0] = 1.0  # unit norm
        W = tensor(w)
        batch = CriticBatch(real=tensor(rng.normal(size=(4, 1))),
                            fake=tensor(rng.normal(size=(4, 1))),
                            interp_inputs=tensor(rng.normal(size=(4, 6))))
        d = gan_d_loss(batch, KernelSpec(), lambda x: matmul(x, W), 1.0)
        g = gan_g_loss(batch, KernelSpec())
        assert abs(d.item() + g.item()) < 1e-9  # penalty term is zero


def test_gradient_penalty_linear_critic_norm_three():
    with precision("float64"):
        rng = np.random.default_rng(11)
        w = np.zeros((6, 1))
        w[1, 0] = 3.0
        W = tensor(w)
        batch = CriticBatch(real=tensor(rng.normal(size=(4, 1))),
                            fake=tensor(rng.normal(size=(4, 1))),
                            interp_inputs=tensor(rng.normal(size=(4, 6))))
        d = gan_d_loss(batch, KernelSpec(), lambda x: matmul(x, W), 1.0)
        g = gan_g_loss(batch, KernelSpec())
        assert abs(d.item() + g.item() - 4.0) < 1e-9  # (3 - 1)^2 per sample


def test_gan_d_plus_g_equals_penalty_on_random_batches():
    with precision("float64"):
        rng = np.random.default_rng(12)
        spec = KernelSpec()
        for _ in range(10):
            W = tensor(rng.normal(size=(5, 2)))
            xhat0 = rng.normal(size=(4, 5))
            batch = CriticBatch(real=tensor(rng.normal(size=(4, 2))),
                                fake=tensor(rng.normal(size=(4, 2))),
                                interp_inputs=tensor(xhat0))
            d = gan_d_loss(batch, spec, lambda x: matmul(x, W), 1.0).item()
            g = gan_g_loss(batch, spec).item()
            # input-gradient of the summed embedding is the column sum of W
            gvec = W.data.sum(axis=1)
            pen = (np.linalg.norm(gvec) - 1.0) ** 2
            assert abs(d + g - pen) < 1e-10


def test_gan_d_missing_interpolates_rejected():
    rng = np.random.default_rng(13)
    batch = CriticBatch(real=tensor(rng.normal(size=(3, 2))),
                        fake=tensor(rng.normal(size=(3, 2))))
    with pytest.raises(ContractError):
        gan_d_loss(batch, KernelSpec(), lambda x: x, 1.0)


def test_critic_batch_needs_two_samples():
    with pytest.raises(ContractError):
        CriticBatch(real=tensor(np.zeros((1, 2))),
                    fake=tensor(np.zeros((1, 2))))


def test_interpolate_theta_bounds():
    r = np.zeros((3, 4))
    f = np.ones((3, 4))
    with pytest.raises(ContractError):
        interpolate_features(tensor(r), tensor(f), np.array([0.0, 0.5, 0.5]))
    x = interpolate_features(tensor(r), tensor(f),
                             np.array([0.25, 0.5, 0.75]))
    assert np.allclose(x.data[:, 0], [0.25, 0.5, 0.75])


# --- least-squares variant ---------------------------------------------------

def test_lsgan_perfect_critic():
    g, d = lsgan_losses(tensor(np.ones((4, 1))), tensor(np.zeros((4, 1))))
    assert d.item() == 0.0
    assert g.item() == 0.5


def test_lsgan_fooled_critic():
    g, d = lsgan_losses(tensor(np.zeros((4, 1))), tensor(np.ones((4, 1))))
    assert d.item() == 1.0
    assert g.item() == 0.0


def test_lsgan_matches_loop_oracle():
    with precision("float64"):
        rng = np.random.default_rng(14)
        for _ in range(100):
            b = int(rng.integers(1, 9))
            real = rng.normal(size=(b, 1))
            fake = rng.normal(size=(b, 1))
            g, d = lsgan_losses(tensor(real), tensor(fake))
            want_d = 0.5 * np.mean([(r - 1) ** 2 for r in real.ravel()]) \
                + 0.5 * np.mean([f ** 2 for f in fake.ravel()])
            want_g = 0.5 * np.mean([(f - 1) ** 2 for f in fake.ravel()])
            assert abs(d.item() - want_d) < 1e-12
            assert abs(g.item() - want_g) < 1e-12


def test_lsgan_shape_mismatch_rejected():
    with pytest.raises(DimensionError):
        lsgan_losses(tensor(np.zeros((3, 1))), tensor(np.zeros((4, 1))))


# --- reconstruction and total -----------------------------------------------

def test_reconstruction_zero_when_everything_matches():
    rng = np.random.default_rng(15)
    y = tensor(rng.normal(size=(10, 3)))
    assert reconstruction(y, y, y, 0.5, "cd-t").item() == 0.0


def test_reconstruction_weighted_combination():
    # CD(coarse, y) = 2 and CD(fine, y) = 4 combine to 2 + 0.5*4 = 4
    y = tensor([[0.0, 0.0, 0.0]])
    coarse = tensor([[1.0, 1.0, 0.0]])   # cd-t: 2*|d|^2 = 4? no: d^2=2 each way -> 4
    fine = tensor([[2.0, 0.0, 0.0]])     # d^2 = 4 each way -> 8
    got = reconstruction(coarse, fine, y, 0.5, "cd-t").item()
    want = (chamfer(coarse, y, "cd-t").total.item()
            + 0.5 * chamfer(fine, y, "cd-t").total.item())
    assert abs(got - want) < 1e-12
    assert abs(got - 8.0) < 1e-12


def test_reconstruction_gradient_matches_finite_differences():
    with precision("float64"):
        rng = np.random.default_rng(16)
        y0 = rng.normal(size=(6, 3))
        c0 = rng.normal(size=(4, 3))
        f0 = rng.normal(size=(8, 3))

        def naive(fine_pts):
            d_c = np.linalg.norm(c0[:, None] - y0[None], axis=2)
            d_f = np.linalg.norm(fine_pts[:, None] - y0[None], axis=2)
            cd_c = (d_c.min(1) ** 2).mean() + (d_c.min(0) ** 2).mean()
            cd_f = (d_f.min(1) ** 2).mean() + (d_f.min(0) ** 2).mean()
            return cd_c + 0.7 * cd_f

        fine = tensor(f0)
        loss = reconstruction(tensor(c0), fine, tensor(y0), 0.7, "cd-t")
        g = backward(loss).wrt(fine).data
        f = finite_diff(naive, f0)
        assert rel_err(g, f) < 1e-4


def test_total_loss_zero_components():
    w = LossWeights()
    assert total_loss(0.0, 0.0, 0.0, w).item() == 0.0


def test_total_loss_reference_weights():
    w = LossWeights(lambda_re=200.0, lambda_gan=1.0, lambda_fe=1000.0)
    assert total_loss(1.0, 1.0, 1.0, w).item() == 1201.0


def test_total_loss_linearity():
    w = LossWeights(lambda_re=3.0, lambda_gan=5.0, lambda_fe=7.0)
    one = total_loss(1.0, 2.0, 3.0, w).item()
    two = total_loss(2.0, 4.0, 6.0, w).item()
    assert abs(two - 2 * one) < 1e-12


def test_loss_weights_validation():
    with pytest.raises(ConfigError):
        LossWeights(lambda_re=-1.0)
    with pytest.raises(ConfigError):
        LossWeights(lambda_f=2.0)
