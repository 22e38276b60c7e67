"""End-to-end miniature run of the two-stage pipeline: pretrain the
auto-encoder on complete clouds, train the completion network with feature
alignment, evaluate, and complete a single cloud.

Runs a deliberately small configuration (about a minute on two cores);
scale the widths or iteration counts up for anything serious.
"""

import io

from pcsp import (NetConfig, Tensor, TrainConfig, completion_forward,
                  evaluate, make_synthetic, split_dataset,
                  train_autoencoder, train_completion, validation_cd)

net = NetConfig(d1=16, d2=32, coarse_count=128, mirror_sample=64,
                fine_count=512, encoder_mlp1=(16, 16), encoder_mlp2=(32, 32),
                coarse_fc=(64, 384), fine_mlp=(32, 32, 3),
                critic_widths=(32, 16))

dataset = make_synthetic(60, ["sphere", "box"], 512, 128, seed=0)
train, val = split_dataset(dataset, 0.1, seed=0)
print(f"dataset: {len(train)} train / {len(val)} validation samples")

print("\n== stage one: auto-encoder pretraining ==")
ae_cfg = TrainConfig(net=net, batch_size=8, lr0=1e-3, max_iters=400, seed=0,
                     cd_variant="cd-t")
log = io.StringIO()
ae = train_autoencoder(ae_cfg, train, log_file=log)
lines = log.getvalue().splitlines()
print("first:", lines[0])
print("last: ", lines[-1])

print("\n== stage two: completion training (full feature alignment) ==")
cfg = TrainConfig(net=net, batch_size=8, lr0=1e-3, max_iters=600, seed=0,
                  ablation="l2+mmd", cd_variant="cd-t")
untrained = train_completion(
    TrainConfig(net=net, batch_size=8, lr0=1e-3, max_iters=0, seed=0,
                ablation="l2+mmd", cd_variant="cd-t"), train, ae)
before, _ = validation_cd(untrained, val)
cp = train_completion(cfg, train, ae, log_file=io.StringIO())
after, coarse = validation_cd(cp, val)
print(f"validation cd-t: untrained {before:.4f} -> trained {after:.4f} "
      f"(coarse stage {coarse:.4f})")

print("\n== evaluation table ==")
table = evaluate(cp, val, "cd-t")
for category, res, variant, value in table.rows():
    print(f"  {category:8s} N={res}  {variant}  {value * 1e3:8.3f}  (x1e-3)")

print("\n== completing one cloud ==")
sample = val[0]
_, _, fine = completion_forward(cp.params, net,
                                Tensor(sample.partial[None, :, :]))
print(f"partial {sample.partial.shape} -> completed {fine.data[0].shape}, "
      f"category {sample.category}")
