"""Command-line entry point: data synthesis, two-stage training,
evaluation tables and single-cloud completion.

Exit codes: 0 success, 1 usage/config error, 2 data or parse error,
3 numeric failure (non-finite loss). A plain key=value config file can
seed any training option; explicit flags override it. PCSP_SEED serves as
a fallback seed when neither flag nor file provides one.
"""

from __future__ import annotations

import argparse
import os
import sys

from .autodiff import Tensor
from .data import (load_manifest, make_synthetic, normalize, parse_cloud,
                   write_cloud, write_manifest)
from .errors import (BoundsError, ConfigError, ContractError, DimensionError,
                     EmptyInputError, NumericError, ParseError, PcspError,
                     UsageError)
from .losses import LossWeights
from .network import NetConfig, completion_forward
from .pointops import chamfer, fidelity_error
from .training import (MetricTable, TrainConfig, evaluate, load_checkpoint,
                       save_checkpoint, train_autoencoder, train_completion)

_ABLATION_FLAGS = {"baseline": "baseline", "l2": "l2", "ls": "ls",
                   "mmd": "mmd", "l2+mmd": "l2+mmd"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# config-file handling

_INT_KEYS = {"seed", "epochs", "max_iters", "batch_size", "lr_decay_epochs",
             "d_steps_per_g", "lambda_f_ramp_iters", "net.d1", "net.d2",
             "net.coarse_count", "net.mirror_sample", "net.fine_count"}
_FLOAT_KEYS = {"lr0", "lr_decay", "lambda_f_start", "lambda_f_end",
               "gp_weight", "val_fraction", "net.grid_extent",
               "weights.lambda_re", "weights.lambda_gan",
               "weights.lambda_fe", "weights.lambda_f"}
_STR_KEYS = {"ablation", "cd_variant", "estimator"}
_BOOL_KEYS = {"freeze_decoder"}
_LIST_KEYS = {"net.encoder_mlp1", "net.encoder_mlp2", "net.coarse_fc",
              "net.fine_mlp", "net.critic_widths", "kernel.alphas"}
_KNOWN_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | _BOOL_KEYS | _LIST_KEYS


def parse_config_file(path):
    """Plain key=value lines; '#' starts a comment; unknown keys rejected."""
    values = {}
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise ParseError(f"cannot read config file {path}: {e}")
    with fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise UsageError(
                    f"{path}: line {lineno}: expected key=value, got "
                    f"{stripped!r}")
            key, _, raw = stripped.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key not in _KNOWN_KEYS:
                raise UsageError(f"{path}: line {lineno}: unknown key "
                                 f"{key!r}")
            values[key] = _coerce(key, raw, f"{path}: line {lineno}")
    return values


def _coerce(key, raw, where):
    try:
        if key in _INT_KEYS:
            return None if raw.lower() == "none" else int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _BOOL_KEYS:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if key in _LIST_KEYS:
            parts = [p for p in raw.split(",") if p]
            if key == "kernel.alphas":
                return tuple(float(p) for p in parts)
            return tuple(int(p) for p in parts)
        return raw
    except ValueError:
        raise UsageError(f"{where}: bad value {raw!r} for key {key!r}")


def build_train_config(file_values, flag_values):
    """Merge config-file values with flag overrides into a TrainConfig."""
    merged = dict(file_values)
    for key, val in flag_values.items():
        if val is not None:
            merged[key] = val
    if "seed" not in merged:
        env = os.environ.get("PCSP_SEED")
        if env is not None:
            try:
                merged["seed"] = int(env)
            except ValueError:
                raise UsageError(f"PCSP_SEED={env!r} is not an integer")

    net_kwargs, weight_kwargs, kernel_alphas, top = {}, {}, None, {}
    for key, val in merged.items():
        if key.startswith("net."):
            net_kwargs[key[4:]] = val
        elif key.startswith("weights."):
            weight_kwargs[key[8:]] = val
        elif key == "kernel.alphas":
            kernel_alphas = val
        else:
            top[key] = val
    cfg = TrainConfig(net=NetConfig(**net_kwargs),
                      weights=LossWeights(**weight_kwargs), **top)
    if kernel_alphas is not None:
        cfg.kernel.alphas = tuple(kernel_alphas)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# table rendering

def emit_table(table, csv_path):
    """Aligned text table (values x10^3, 3 decimals) plus a CSV twin whose
    value column holds exactly the printed strings."""
    rows = table.rows()
    if not rows:
        raise EmptyInputError("emit_table: no results")
    lines = []
    csv_lines = ["category,resolution,variant,value"]
    cats = table.categories()
    header = ["resolution", "variant", "Avg"] + cats
    by_group = {}
    for category, res, variant, value in rows:
        by_group.setdefault((res, variant), {})[category] = value
    text_rows = [header]
    for (res, variant), vals in sorted(by_group.items()):
        row = [str(res), variant, f"{vals['Avg'] * 1e3:.3f}"]
        csv_lines.append(f"Avg,{res},{variant},{vals['Avg'] * 1e3:.3f}")
        for c in cats:
            row.append(f"{vals[c] * 1e3:.3f}")
            csv_lines.append(f"{c},{res},{variant},{vals[c] * 1e3:.3f}")
        text_rows.append(row)
    widths = [max(len(r[i]) for r in text_rows)
              for i in range(len(header))]
    for r in text_rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)))
    text = "\n".join(lines)
    if csv_path:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(csv_lines) + "\n")
    return text


# ---------------------------------------------------------------------------
# subcommands

def _add_train_flags(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-iters", type=int, dest="max_iters")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float, dest="lr0")
    p.add_argument("--cd-variant", choices=["cd-t", "cd-p"],
                   dest="cd_variant")


def _train_cfg_from_args(args, extra=None):
    file_values = parse_config_file(args.config) if args.config else {}
    flag_values = {k: getattr(args, k, None)
                   for k in ("seed", "epochs", "max_iters", "batch_size",
                             "lr0", "cd_variant")}
    if extra:
        flag_values.update(extra)
    return build_train_config(file_values, flag_values)


def cmd_synth_data(args):
    shapes = [s for s in args.shapes.split(",") if s]
    ds = make_synthetic(args.count, shapes, args.n_complete, args.n_partial,
                        args.seed if args.seed is not None else 0)
    os.makedirs(args.out_dir, exist_ok=True)
    fmt = args.format
    ext = "xyz" if fmt == "xyz-text" else "pcb"
    records = []
    counters = {}
    for s in ds.samples:
        i = counters.get(s.category, 0)
        counters[s.category] = i + 1
        pname = f"{s.category}_{i:04d}_partial.{ext}"
        cname = f"{s.category}_{i:04d}_complete.{ext}"
        write_cloud(os.path.join(args.out_dir, pname), s.partial, fmt)
        write_cloud(os.path.join(args.out_dir, cname), s.complete, fmt)
        records.append((pname, cname, s.category))
    write_manifest(os.path.join(args.out_dir, "manifest.tsv"), records)
    print(f"wrote {len(records)} samples to {args.out_dir}")
    return 0


def cmd_train_ae(args):
    cfg = _train_cfg_from_args(args)
    dataset = load_manifest(args.manifest, args.format)
    log = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        cp = train_autoencoder(cfg, dataset, log_file=log)
    finally:
        if log:
            log.close()
    save_checkpoint(args.out, cp)
    print(f"auto-encoder checkpoint written to {args.out} "
          f"({cp.iteration} iterations)")
    return 0


def cmd_train(args):
    cfg = _train_cfg_from_args(args, extra={"ablation": args.ablation})
    dataset = load_manifest(args.manifest, args.format)
    ae = load_checkpoint(args.ae_checkpoint)
    log = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        cp = train_completion(cfg, dataset, ae, log_file=log)
    finally:
        if log:
            log.close()
    save_checkpoint(args.out, cp)
    print(f"completion checkpoint written to {args.out} "
          f"({cp.iteration} iterations, ablation {cfg.ablation})")
    return 0


def cmd_eval(args):
    cp = load_checkpoint(args.checkpoint)
    dataset = load_manifest(args.manifest, args.format)
    resolutions = [int(r) for r in args.resolution.split(",")] \
        if args.resolution else None
    table = evaluate(cp, dataset, args.variant, resolutions)
    print(emit_table(table, args.csv))
    print(f"csv written to {args.csv}")
    return 0


def cmd_complete(args):
    cloud = parse_cloud(args.input, args.format)
    cp = load_checkpoint(args.checkpoint)
    net = cp.net if args.resolution is None \
        else cp.net.with_fine_count(args.resolution)
    if net.fine_count % net.coarse_count != 0:
        raise ConfigError(
            f"--resolution {args.resolution} is not a multiple of the "
            f"checkpoint's coarse_count={net.coarse_count}")
    normalized, center, scale = normalize(cloud)
    _, _, fine = completion_forward(cp.params, net,
                                    Tensor(normalized[None, :, :]))
    pred = fine.data[0] * scale + center
    write_cloud(args.out, pred, args.format)
    print(f"wrote {pred.shape[0]} points to {args.out}")
    return 0


def cmd_metrics(args):
    dataset = load_manifest(args.manifest, args.format)
    with open(args.manifest, "r", encoding="utf-8") as fh:
        rel_paths = [line.split("\t")[0] for line in fh
                     if line.strip() and not line.lstrip().startswith("#")]
    table = MetricTable()
    v = args.variant
    for s, rel in zip(dataset.samples, rel_paths):
        pred_path = os.path.join(args.pred_dir, os.path.basename(rel))
        if not os.path.exists(pred_path):
            raise ParseError(f"missing prediction file {pred_path}")
        pred = Tensor(parse_cloud(pred_path, args.format))
        if v == "fidelity":
            val = fidelity_error(Tensor(s.partial), pred).item()
        else:
            val = chamfer(pred, Tensor(s.complete), v).total.item()
        table.add(s.category, pred.shape[0], v, val)
    print(emit_table(table, args.csv))
    return 0


def build_parser():
    parser = _Parser(prog="pcsp",
                     description="point-cloud completion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--shapes", default="sphere,box")
    p.add_argument("--n-complete", type=int, default=1024)
    p.add_argument("--n-partial", type=int, default=256)
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=["xyz-text", "xyz-binary"],
                   default="xyz-text")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train-ae", help="stage one: auto-encoder pretraining")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="per-step scalar log path")
    p.add_argument("--format", choices=["xyz-text", "xyz-binary"],
                   default="xyz-text")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_ae)

    p = sub.add_parser("train", help="stage two: completion training")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ae-checkpoint", required=True, dest="ae_checkpoint")
    p.add_argument("--ablation", required=True,
                   choices=list(_ABLATION_FLAGS))
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="per-step scalar log path")
    p.add_argument("--format", choices=["xyz-text", "xyz-binary"],
                   default="xyz-text")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metric table over a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--variant", required=True,
                   choices=["cd-t", "cd-p", "fidelity"])
    p.add_argument("--resolution", help="comma-separated output sizes")
    p.add_argument("--csv", default="eval_metrics.csv")
    p.add_argument("--format", choices=["xyz-text", "xyz-binary"],
                   default="xyz-text")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("complete", help="complete a single cloud")
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int)
    p.add_argument("--format", choices=["xyz-text", "xyz-binary"],
                   default="xyz-text")
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("metrics",
                       help="score a prediction directory against a manifest")
    p.add_argument("--pred-dir", required=True, dest="pred_dir")
    p.add_argument("--manifest", required=True)
    p.add_argument("--variant", required=True,
                   choices=["cd-t", "cd-p", "fidelity"])
    p.add_argument("--csv", default="metrics.csv")
    p.add_argument("--format", choices=["xyz-text", "xyz-binary"],
                   default="xyz-text")
    p.set_defaults(func=cmd_metrics)
    return parser


def run(argv):
    """Parse and dispatch; raises package errors instead of exiting."""
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


def main(argv=None):
    try:
        return run(sys.argv[1:] if argv is None else argv)
    except (UsageError, ConfigError, ContractError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ParseError, EmptyInputError, DimensionError, BoundsError,
            OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except PcspError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
