import io

import numpy as np
import pytest

from pcsp.data import Dataset, make_synthetic
from pcsp.errors import ConfigError
from pcsp.network import NetConfig
from pcsp.training import (TrainConfig, evaluate, lambda_f_at,
                           load_checkpoint, lr_at, save_checkpoint,
                           train_autoencoder, train_completion,
                           validation_cd)


def tiny_net():
    return NetConfig(d1=8, d2=16, coarse_count=32, mirror_sample=16,
                     fine_count=128, encoder_mlp1=(16, 8),
                     encoder_mlp2=(16, 16), coarse_fc=(32, 96),
                     fine_mlp=(16, 3), critic_widths=(16, 8))


def tiny_cfg(**kw):
    base = dict(net=tiny_net(), batch_size=4, lr0=1e-3, seed=0,
                ablation="baseline", cd_variant="cd-t", epochs=1)
    base.update(kw)
    return TrainConfig(**base)


def tiny_dataset(n=12, seed=0):
    return make_synthetic(n, ["sphere", "box"], 96, 32, seed=seed)


# --- schedules ---------------------------------------------------------------

def test_lr_schedule_reference_values():
    cfg = TrainConfig(net=tiny_net())
    assert lr_at(cfg, 0) == pytest.approx(1e-4, abs=0)
    assert lr_at(cfg, 20) == pytest.approx(7e-5, rel=1e-12)
    assert lr_at(cfg, 40) == pytest.approx(4.9e-5, rel=1e-12)


def test_lr_schedule_non_increasing():
    cfg = TrainConfig(net=tiny_net())
    values = [lr_at(cfg, e) for e in range(100)]
    assert all(b <= a for a, b in zip(values, values[1:]))


def test_lambda_f_ramp_reference_values():
    cfg = TrainConfig(net=tiny_net())
    assert lambda_f_at(cfg, 0) == pytest.approx(0.01, abs=0)
    assert lambda_f_at(cfg, 50000) == 1.0
    assert lambda_f_at(cfg, 80000) == 1.0
    assert lambda_f_at(cfg, 25000) == pytest.approx(0.505, rel=1e-12)


def test_lambda_f_non_decreasing():
    cfg = TrainConfig(net=tiny_net())
    values = [lambda_f_at(cfg, i) for i in range(0, 60000, 500)]
    assert all(b >= a for a, b in zip(values, values[1:]))


# --- config validation ---------------------------------------------------------

def test_gan_ablation_needs_batch_of_two():
    with pytest.raises(ConfigError) as e:
        tiny_cfg(ablation="mmd", batch_size=1).validate()
    assert "batch_size" in str(e.value)


def test_unknown_ablation_rejected():
    with pytest.raises(ConfigError):
        tiny_cfg(ablation="extra").validate()


def test_ls_ablation_needs_scalar_critic():
    with pytest.raises(ConfigError):
        tiny_cfg(ablation="ls").validate()
    net = tiny_net()
    net.critic_widths = (16, 1)
    tiny_cfg(net=net, ablation="ls").validate()


# --- auto-encoder training ------------------------------------------------------

def single_shape_dataset():
    ds = make_synthetic(1, ["sphere"], 96, 32, seed=3)
    return Dataset([ds[0]])


def test_autoencoder_overfits_single_shape():
    ds = single_shape_dataset()
    cfg = tiny_cfg(batch_size=1, max_iters=500, lr0=2e-3, seed=1)
    log = io.StringIO()
    cp = train_autoencoder(cfg, ds, log_file=log)
    lines = log.getvalue().splitlines()
    first = float(lines[0].split("recon=")[1])
    last = float(lines[-1].split("recon=")[1])
    assert cp.iteration == 500
    assert last < 0.25 * first


def test_autoencoder_resume_matches_uninterrupted_run(tmp_path):
    ds = tiny_dataset()
    cfg = tiny_cfg(max_iters=6, seed=2)
    full = train_autoencoder(cfg, ds)

    cfg_half = tiny_cfg(max_iters=3, seed=2)
    half = train_autoencoder(cfg_half, ds)
    path = tmp_path / "half.pcsp"
    save_checkpoint(path, half)
    resumed = train_autoencoder(cfg, ds, resume=load_checkpoint(path))

    for name, t in full.params.items():
        assert np.array_equal(t.data, resumed.params.store[name].data), name


def test_autoencoder_empty_dataset_rejected():
    with pytest.raises(ConfigError):
        train_autoencoder(tiny_cfg(), Dataset([]))


def test_autoencoder_incompatible_resume_rejected(tmp_path):
    ds = tiny_dataset()
    cp = train_autoencoder(tiny_cfg(max_iters=1), ds)
    other = tiny_net()
    other.d1 = 4
    other.encoder_mlp1 = (16, 4)
    with pytest.raises(ConfigError):
        train_autoencoder(tiny_cfg(net=other, max_iters=2), ds, resume=cp)


# --- completion training ---------------------------------------------------------

@pytest.fixture(scope="module")
def ae_checkpoint():
    return train_autoencoder(tiny_cfg(max_iters=120, lr0=2e-3),
                             tiny_dataset())


def test_completion_baseline_reduces_validation_cd(ae_checkpoint):
    ds = tiny_dataset()
    cfg = tiny_cfg(max_iters=300, lr0=2e-3, ablation="baseline")
    cp0 = train_completion(tiny_cfg(max_iters=0), ds, ae_checkpoint)
    before, _ = validation_cd(cp0, ds)
    cp = train_completion(cfg, ds, ae_checkpoint)
    after, _ = validation_cd(cp, ds)
    assert after <= 0.6 * before


def test_completion_l2_reduces_feature_loss(ae_checkpoint):
    ds = tiny_dataset()
    log = io.StringIO()
    cfg = tiny_cfg(max_iters=300, lr0=2e-3, ablation="l2")
    train_completion(cfg, ds, ae_checkpoint, log_file=log)
    lines = log.getvalue().splitlines()
    first = float(lines[0].split("feat=")[1].split()[0])
    last = float(lines[-1].split("feat=")[1].split()[0])
    assert last <= 0.5 * first


def test_frozen_encoder_is_bit_identical(ae_checkpoint):
    ds = tiny_dataset()
    before = {name: t.data.copy() for name, t in ae_checkpoint.params.items()}
    cfg = tiny_cfg(max_iters=100, ablation="l2+mmd")
    train_completion(cfg, ds, ae_checkpoint)
    for name, t in ae_checkpoint.params.items():
        assert np.array_equal(t.data, before[name]), name


def test_freeze_decoder_flag(ae_checkpoint):
    ds = tiny_dataset()
    cfg = tiny_cfg(max_iters=40, freeze_decoder=True)
    cp = train_completion(cfg, ds, ae_checkpoint)
    for name, t in ae_checkpoint.params.items():
        if name.startswith("decoder."):
            assert np.array_equal(t.data, cp.params.store[name].data), name
    # encoder did train
    changed = any(
        not np.array_equal(cp.params.store[n].data, v.data)
        for n, v in ae_checkpoint.params.items() if n.startswith("encoder."))
    assert changed


def test_critic_and_generator_do_not_cross_update(ae_checkpoint):
    ds = tiny_dataset()
    cfg = tiny_cfg(max_iters=5, ablation="mmd")
    cp = train_completion(cfg, ds, ae_checkpoint)
    assert cp.critic is not None
    gen_names = set(cp.params.store.names())
    critic_names = set(cp.critic.store.names())
    assert not gen_names & critic_names
    assert all(n.startswith("critic.") for n in critic_names)


def test_completion_determinism_bitwise(ae_checkpoint):
    ds = tiny_dataset()
    logs = []
    for _ in range(2):
        log = io.StringIO()
        train_completion(tiny_cfg(max_iters=30, ablation="l2+mmd"),
                         ds, ae_checkpoint, log_file=log)
        logs.append(log.getvalue())
    assert logs[0] == logs[1]


def test_completion_resume_matches_uninterrupted(tmp_path, ae_checkpoint):
    ds = tiny_dataset()
    full_log = io.StringIO()
    full = train_completion(tiny_cfg(max_iters=8, ablation="l2+mmd"),
                            ds, ae_checkpoint, log_file=full_log)

    half = train_completion(tiny_cfg(max_iters=4, ablation="l2+mmd"),
                            ds, ae_checkpoint)
    path = tmp_path / "half.pcsp"
    save_checkpoint(path, half)
    resumed_log = io.StringIO()
    resumed = train_completion(tiny_cfg(max_iters=8, ablation="l2+mmd"),
                               ds, ae_checkpoint,
                               resume=load_checkpoint(path),
                               log_file=resumed_log)
    for name, t in full.params.items():
        assert np.array_equal(t.data, resumed.params.store[name].data), name
    for name, t in full.critic.items():
        assert np.array_equal(t.data, resumed.critic.store[name].data), name
    assert full_log.getvalue().splitlines()[4:] \
        == resumed_log.getvalue().splitlines()


def test_completion_incompatible_ae_rejected():
    ds = tiny_dataset()
    other = NetConfig(d1=4, d2=16, coarse_count=32, mirror_sample=16,
                      fine_count=128, encoder_mlp1=(16, 4),
                      encoder_mlp2=(16, 16), coarse_fc=(32, 96),
                      fine_mlp=(16, 3), critic_widths=(16, 8))
    ae = train_autoencoder(tiny_cfg(net=other, max_iters=1), ds)
    with pytest.raises(ConfigError):
        train_completion(tiny_cfg(max_iters=1), ds, ae)


# --- evaluation -------------------------------------------------------------------

def test_evaluate_zero_for_perfect_predictions(ae_checkpoint):
    # identical predicted and ground-truth clouds give an all-zero table;
    # emulate by scoring complete clouds against themselves
    from pcsp.training import MetricTable
    table = MetricTable()
    ds = tiny_dataset(6)
    from pcsp.pointops import chamfer
    from pcsp.autodiff import Tensor
    for s in ds.samples:
        val = chamfer(Tensor(s.complete), Tensor(s.complete), "cd-t")
        table.add(s.category, 128, "cd-t", val.total.item())
    for row in table.rows():
        assert row[3] == 0.0


def test_evaluate_average_matches_loop_oracle(ae_checkpoint):
    ds = tiny_dataset(10)
    table = evaluate(ae_checkpoint, ds, "cd-t")
    for cat in table.categories():
        vals = [v for c, r, vr, v in table.samples if c == cat]
        want = float(np.mean(vals))
        got = table.category_mean(cat, 128, "cd-t")
        assert abs(got - want) < 1e-9
    per_cat = [table.category_mean(c, 128, "cd-t")
               for c in table.categories()]
    assert abs(table.average(128, "cd-t") - float(np.mean(per_cat))) < 1e-9


def test_evaluate_fidelity_zero_on_identical_clouds():
    from pcsp.autodiff import Tensor
    from pcsp.pointops import fidelity_error
    rng = np.random.default_rng(0)
    cloud = rng.normal(size=(32, 3)).astype(np.float32)
    assert fidelity_error(Tensor(cloud), Tensor(cloud)).item() == 0.0


def test_evaluate_multi_resolution(ae_checkpoint):
    ds = tiny_dataset(4)
    table = evaluate(ae_checkpoint, ds, "cd-t", resolutions=[64, 128])
    assert table.resolutions() == [64, 128]


def test_evaluate_bad_resolution_rejected(ae_checkpoint):
    with pytest.raises(ConfigError):
        evaluate(ae_checkpoint, tiny_dataset(4), "cd-t", resolutions=[100])


def test_evaluate_unknown_variant_rejected(ae_checkpoint):
    with pytest.raises(ConfigError):
        evaluate(ae_checkpoint, tiny_dataset(4), "cd", resolutions=[128])
