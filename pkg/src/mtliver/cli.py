"""Command-line front end: dataset generation, training, cross-validation
experiments and checkpoint evaluation, bound into one reproducible tool.

Exit codes are a stable scripting contract: 0 success, 2 usage, 3 I/O,
4 numerical failure, 5 checkpoint/model compatibility.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from .errors import (CompatibilityError, ConfigError, ContractError,
                     FormatError, NumericalError, ShapeError)
from .losses import LossWeights
from .metrics import binarize
from .model import ModelConfig, MultiTaskModel
from .phantom import PhantomConfig, generate_dataset, kfold_split, load_dataset
from .training import (TrainConfig, cross_validate, evaluate, load_checkpoint,
                       render_table_csv, run_ablation, run_synergy,
                       save_checkpoint, spectral_inputs, train_on)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_COMPAT = 5

ABLATION_COLUMNS = ("variant", "dsc_mean", "dsc_std", "iou_mean", "iou_std",
                    "mae_mean", "mae_std")
SYNERGY_COLUMNS = ("variant", "dsc_mean", "dsc_std", "mae_mean", "mae_std",
                   "accuracy")

_TRAIN_KEYS = {f.name for f in dataclass_fields(TrainConfig)}
_MODEL_KEYS = {f.name for f in dataclass_fields(ModelConfig)}
_WEIGHT_KEYS = {f.name for f in dataclass_fields(LossWeights)}
_PHANTOM_KEYS = {f.name for f in dataclass_fields(PhantomConfig)}


# -- configuration plumbing ---------------------------------------------------

def _env_seed():
    raw = os.environ.get("MTI_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"MTI_SEED must be an integer, got {raw!r}")


def _read_config_file(path):
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    _reject_unknown(data, _TRAIN_KEYS | {"phantom"}, "config")
    _reject_unknown(data.get("model", {}), _MODEL_KEYS, "config key 'model'")
    _reject_unknown(data.get("loss_weights", {}), _WEIGHT_KEYS,
                    "config key 'loss_weights'")
    _reject_unknown(data.get("phantom", {}), _PHANTOM_KEYS,
                    "config key 'phantom'")
    return data


def _reject_unknown(mapping, allowed, where):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {where} key {unknown[0]!r}")


def resolve_config(args, flag_overrides=None, model_overrides=None):
    """Defaults < MTI_SEED < config file < command-line flags."""
    merged = {}
    env_seed = _env_seed()
    if env_seed is not None:
        merged["seed"] = env_seed
    phantom = {}
    if getattr(args, "config", None):
        file_cfg = _read_config_file(args.config)
        phantom = dict(file_cfg.pop("phantom", {}))
        merged.update(file_cfg)
    for key, value in (flag_overrides or {}).items():
        if value is not None:
            merged[key] = value
    if model_overrides:
        model = dict(merged.get("model", {}))
        model.update(model_overrides)
        merged["model"] = model
    config = TrainConfig.from_dict(merged)
    return config, phantom


def _model_flag_overrides(args):
    overrides = {}
    for flag, key in (("no_mdief", "use_mdief"), ("no_spe", "use_spe"),
                      ("no_spa", "use_spa"), ("no_tim", "use_tim"),
                      ("no_tdd", "use_tdd")):
        if getattr(args, flag, False):
            overrides[key] = False
    if getattr(args, "tasks", None):
        overrides["tasks"] = tuple(t for t in args.tasks.split(",") if t)
    return overrides


def _write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


# -- commands -----------------------------------------------------------------

def cmd_generate(args):
    size = args.size
    if size < 16 or size > 256 or size & (size - 1):
        print("error: --size must be a power of two in [16, 256]",
              file=sys.stderr)
        return EXIT_USAGE
    if args.per_class < 5:
        print("error: --per-class must be at least 5", file=sys.stderr)
        return EXIT_USAGE
    if args.noise < 0:
        print("error: --noise must be non-negative", file=sys.stderr)
        return EXIT_USAGE
    seed = args.seed if args.seed is not None else (_env_seed() or 0)
    config = PhantomConfig(h=size, w=size, noise_sigma=args.noise)
    generate_dataset(args.per_class, config, seed, args.out)
    print(f"seed: {seed}")
    print(f"wrote {2 * args.per_class} samples ({args.per_class} per class, "
          f"{size}x{size}, sigma={args.noise}, seed={seed}) to {args.out}")
    return EXIT_OK


def cmd_train(args):
    config, _ = resolve_config(
        args,
        flag_overrides={"epochs": args.epochs, "lr": args.lr,
                        "seed": args.seed},
        model_overrides=_model_flag_overrides(args))
    manifest, samples = load_dataset(args.data)
    print(f"seed: {config.seed}")
    print(json.dumps({"config": config.to_dict()}))

    # single 80/20 class-stratified split: fold 0 of a 5-way partition
    train_idx, test_idx = kfold_split(manifest, 5, config.seed)[0]
    train_samples = [samples[i] for i in train_idx]
    test_samples = [samples[i] for i in test_idx]
    probe = MultiTaskModel(config.model, seed=0)
    spe_train = spectral_inputs(train_samples, probe)
    spe_test = spectral_inputs(test_samples, probe)

    model, disc, opt_g, opt_d, traces = train_on(train_samples, spe_train,
                                                 config, fold=0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_prefix = out / "checkpoint"
    save_checkpoint(ckpt_prefix, model, disc, opt_g, opt_d, config)
    # report the metrics of the 32-bit snapshot on disk, so re-evaluating
    # the checkpoint reproduces them exactly
    reloaded, _, _, _, _ = load_checkpoint(ckpt_prefix)
    metrics = evaluate(reloaded, test_samples, spe_test)
    report = {
        "config": config.to_dict(),
        "seed": config.seed,
        "dataset": str(args.data),
        "checkpoint": str(ckpt_prefix),
        "train_files": [manifest.samples[i]["file"] for i in train_idx],
        "test_files": [manifest.samples[i]["file"] for i in test_idx],
        "loss_traces": traces,
        "test_metrics": metrics,
    }
    _write_json(out / "report.json", report)
    print(f"checkpoint: {ckpt_prefix}")
    print(f"report: {out / 'report.json'}")
    return EXIT_OK


def cmd_crossval(args):
    flag_overrides = {"epochs": args.epochs, "lr": args.lr,
                      "seed": args.seed, "k": args.folds}
    config, _ = resolve_config(args, flag_overrides=flag_overrides)
    manifest, samples = load_dataset(args.data)
    print(f"seed: {config.seed}")
    print(json.dumps({"config": config.to_dict()}))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.ablation:
        result = run_ablation(manifest, samples, config, jobs=args.jobs)
        (out / "ablation.csv").write_text(
            render_table_csv(result["table"], ABLATION_COLUMNS))
        payload = {"config": config.to_dict(), "table": result["table"],
                   "reports": {name: rep for name, rep in result["reports"].items()}}
        _write_json(out / "report.json", payload)
        print(f"table: {out / 'ablation.csv'}")
    elif args.synergy:
        result = run_synergy(manifest, samples, config, jobs=args.jobs)
        (out / "synergy.csv").write_text(
            render_table_csv(result["table"], SYNERGY_COLUMNS))
        payload = {"config": config.to_dict(), "table": result["table"],
                   "reports": {name: rep for name, rep in result["reports"].items()}}
        _write_json(out / "report.json", payload)
        print(f"table: {out / 'synergy.csv'}")
    else:
        report = cross_validate(manifest, samples, config, jobs=args.jobs)
        _write_json(out / "report.json", report)
        agg = report["aggregate"]
        print(" ".join(f"{k}={v:.4f}" for k, v in sorted(agg.items())
                       if isinstance(v, float)))
    print(f"report: {out / 'report.json'}")
    return EXIT_OK


def cmd_eval(args):
    prefix = Path(args.model)
    if prefix.suffix in (".json", ".bin"):
        prefix = prefix.with_suffix("")
    model, _, _, _, train_config = load_checkpoint(prefix)
    manifest, samples = load_dataset(args.data)
    if manifest.h != model.config.h or manifest.w != model.config.w:
        raise CompatibilityError(
            f"dataset resolution {manifest.h}x{manifest.w} does not match "
            f"the checkpoint model ({model.config.h}x{model.config.w})")
    seed = train_config.seed if train_config else (_env_seed() or 0)
    print(f"seed: {seed}")
    spe = spectral_inputs(samples, model)
    metrics = evaluate(model, samples, spe)
    report = {
        "checkpoint": str(prefix),
        "dataset": str(args.data),
        "config": train_config.to_dict() if train_config else None,
        "metrics": metrics,
        "files": [entry["file"] for entry in manifest.samples],
    }
    _write_json(args.report, report)
    if args.dump_masks:
        mask_dir = Path(args.dump_masks)
        mask_dir.mkdir(parents=True, exist_ok=True)
        model.eval_mode()
        for entry, sample, sp in zip(manifest.samples, samples, spe):
            out = model.forward(sample.phases, sp)
            mask = binarize(out.seg_prob)
            name = Path(entry["file"]).stem + ".pgm"
            _write_p5(mask_dir / name, mask)
        print(f"masks: {mask_dir}")
    print(" ".join(f"{k}={v:.4f}" for k, v in sorted(metrics.items())
                   if isinstance(v, float)))
    print(f"report: {args.report}")
    return EXIT_OK


def _write_p5(path, mask):
    h, w = mask.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + (mask.astype(np.uint8) * 255).tobytes())


# -- argument parsing ---------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="mtliver",
        description="Multi-task liver phantom toolkit: generate synthetic "
                    "dynamic-contrast datasets, train and evaluate the "
                    "segmentation/regression/classification network.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic phantom dataset")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--per-class", type=int, default=5,
                   help="samples per tumor class (default 5)")
    g.add_argument("--size", type=int, default=32,
                   help="image extent, power of two in [16,256] (default 32)")
    g.add_argument("--noise", type=float, default=8.0,
                   help="additive Gaussian noise sigma (default 8)")
    g.add_argument("--seed", type=int, default=None, help="generation seed")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train on one 80/20 stratified split")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--config", help="JSON config file")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--no-mdief", action="store_true",
                   help="replace entropy fusion by a plain sum")
    t.add_argument("--no-spe", action="store_true",
                   help="disable the spectral branch")
    t.add_argument("--no-spa", action="store_true",
                   help="disable the spatial branch")
    t.add_argument("--no-tim", action="store_true",
                   help="disable the mask-to-enhancement consistency term")
    t.add_argument("--no-tdd", action="store_true",
                   help="disable the sequence discriminator")
    t.add_argument("--tasks", help="comma-separated task set, e.g. seg,reg,cls")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("crossval", help="k-fold cross-validation experiments")
    c.add_argument("--data", required=True, help="dataset directory")
    c.add_argument("--out", required=True, help="output directory")
    c.add_argument("--config", help="JSON config file")
    c.add_argument("--folds", type=int, default=None, help="fold count")
    c.add_argument("--epochs", type=int, default=None)
    c.add_argument("--lr", type=float, default=None)
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--jobs", type=int, default=1,
                   help="parallel fold workers (default 1, deterministic)")
    group = c.add_mutually_exclusive_group()
    group.add_argument("--ablation", action="store_true",
                       help="run the six architectural variants")
    group.add_argument("--synergy", action="store_true",
                       help="run the four task-combination variants")
    c.set_defaults(func=cmd_crossval)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--model", required=True, help="checkpoint path prefix")
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--report", required=True, help="output report file")
    e.add_argument("--dump-masks", default=None,
                   help="directory for per-sample P5 mask images")
    e.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, ContractError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CompatibilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
