"""Adversarial multi-task training loop, k-fold cross-validation driver,
ablation/synergy experiment runners and checkpoint persistence."""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import (CompatibilityError, ConfigError, ContractError,
                     FormatError, NumericalError)
from .losses import LossWeights, adversarial_losses, cls_loss, reg_loss, seg_loss, tim_loss, total_generator_loss
from .metrics import binarize, classify_metrics, dsc, iou, mae_metric
from .model import INTENSITY_SCALE, ModelConfig, MultiTaskModel, SequenceDiscriminator
from .nn import Adam
from .phantom import kfold_split
from .tensor import Tensor

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-4
    batch_size: int = 1
    seed: int = 0
    k: int = 5
    disc_lr: float = None  # defaults to lr
    lr_decay: str = "none"  # "none" (constant) or "cosine" (anneal to 0)
    augment: bool = True  # random flips of training samples (labels invariant)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.lr_decay not in ("none", "cosine"):
            raise ConfigError(f"unknown lr_decay {self.lr_decay!r}")

    def to_dict(self):
        return {
            "epochs": self.epochs, "lr": self.lr, "batch_size": self.batch_size,
            "seed": self.seed, "k": self.k, "disc_lr": self.disc_lr,
            "lr_decay": self.lr_decay, "augment": self.augment,
            "loss_weights": vars(self.loss_weights).copy(),
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "loss_weights" in d:
            d["loss_weights"] = LossWeights(**d["loss_weights"])
        if "model" in d:
            d["model"] = ModelConfig.from_dict(d["model"])
        return cls(**d)


@dataclass
class FoldReport:
    fold: int
    loss_traces: dict
    metrics: dict
    seconds: float

    def to_dict(self):
        return {"fold": self.fold, "loss_traces": self.loss_traces,
                "metrics": self.metrics, "seconds": self.seconds}


def enabled_terms(model_cfg):
    terms = ["seg"]
    if "reg" in model_cfg.tasks:
        terms.append("reg")
    if "cls" in model_cfg.tasks:
        terms.append("cls")
    if model_cfg.tim_enabled:
        terms.append("tim")
    if model_cfg.tdd_enabled:
        terms.append("adv")
    return terms


def spectral_inputs(samples, model):
    """Precompute the high-pass branch inputs (pure data preprocessing)."""
    if not model.config.use_spe:
        return [None] * len(samples)
    out = []
    for s in samples:
        norm = s.phases / INTENSITY_SCALE
        out.append(np.stack([model.spectral_input(norm[p]) for p in range(4)]))
    return out


def _check_finite(value, name, where):
    if not np.isfinite(value):
        raise NumericalError(f"{name} loss became non-finite {where}")


def train_step(batch, model, disc, opt_g, opt_d, config):
    """One optimization step: discriminator first (on detached generator
    outputs), then the generator on the weighted multi-task objective.

    `batch` is a list of (sample, spectral_input) pairs.  Returns the scalar
    value of every enabled loss term (plus `adv_d` when adversarial training
    is on).
    """
    cfg = config.model
    terms = enabled_terms(cfg)
    model.train_mode()
    per_sample = []
    fakes = []
    reals = []
    for sample, spe in batch:
        out = model.forward(sample.phases, spe)
        parts = {"seg": seg_loss(out.seg_prob, sample.mask.astype(np.float64))}
        if "reg" in terms:
            parts["reg"] = reg_loss(out.reg, sample.enhancement)
        if "cls" in terms:
            parts["cls"] = cls_loss(out.cls_prob, sample.label)
        if "tim" in terms:
            parts["tim"] = tim_loss(out.derived_enhancement, sample.enhancement)
        if "adv" in terms:
            fake = T.concat([out.reg * (1.0 / INTENSITY_SCALE), out.cls_prob])
            one_hot = np.zeros(2)
            one_hot[sample.label] = 1.0
            real = np.concatenate([sample.enhancement / INTENSITY_SCALE, one_hot])
            fakes.append(fake)
            reals.append(real)
        per_sample.append(parts)

    values = {}
    if "adv" in terms:
        d_losses = []
        for fake, real in zip(fakes, reals):
            d_real = disc(Tensor(real))
            d_fake = disc(fake.detach())
            l_d, _ = adversarial_losses(d_real, d_fake)
            d_losses.append(l_d)
        d_total = T.tmean(T.concat([T.reshape(d, (1,)) for d in d_losses])) \
            if len(d_losses) > 1 else d_losses[0]
        _check_finite(d_total.item(), "discriminator", "during the discriminator step")
        opt_d.zero_grad()
        T.backward(d_total)
        opt_d.step()
        values["adv_d"] = d_total.item()

    g_losses = []
    for i, parts in enumerate(per_sample):
        if "adv" in terms:
            d_fake = disc(fakes[i])
            _, l_g = adversarial_losses(d_fake, d_fake)
            parts["adv"] = l_g
        g_losses.append(total_generator_loss(parts, config.loss_weights, set(terms)))
        for name, t in parts.items():
            values.setdefault(name, 0.0)
            values[name] += t.item() / len(per_sample)
    g_total = T.tmean(T.concat([T.reshape(g, (1,)) for g in g_losses])) \
        if len(g_losses) > 1 else g_losses[0]
    for name in terms:
        _check_finite(values[name], name, "during the generator step")
    opt_g.zero_grad()
    T.backward(g_total)
    opt_g.step()
    values["total"] = g_total.item()
    return values


def evaluate(model, samples, spe_inputs):
    """Test-time metrics over a sample list; tasks absent from the
    configuration produce no corresponding entries."""
    cfg = model.config
    model.eval_mode()
    dscs, ious, maes = [], [], []
    probs, labels = [], []
    for sample, spe in zip(samples, spe_inputs):
        out = model.forward(sample.phases, spe)
        pred = binarize(out.seg_prob)
        dscs.append(dsc(pred, sample.mask))
        ious.append(iou(pred, sample.mask))
        if "reg" in cfg.tasks:
            maes.append(mae_metric(out.reg.data, sample.enhancement))
        if "cls" in cfg.tasks:
            probs.append(out.cls_prob.data.copy())
            labels.append(sample.label)
    metrics = {
        "dsc_mean": float(np.mean(dscs)), "dsc_std": float(np.std(dscs)),
        "iou_mean": float(np.mean(ious)), "iou_std": float(np.std(ious)),
    }
    if maes:
        metrics["mae_mean"] = float(np.mean(maes))
        metrics["mae_std"] = float(np.std(maes))
    if probs:
        acc, cm = classify_metrics(probs, labels)
        metrics["accuracy"] = acc
        metrics["confusion"] = cm.to_lists()
    return metrics


def build_networks(config, fold=0):
    """Model (+ discriminator and optimizers) seeded deterministically."""
    seed_seq = np.random.SeedSequence([config.seed, fold])
    seeds = seed_seq.generate_state(2)
    model = MultiTaskModel(config.model, seed=int(seeds[0]))
    opt_g = Adam(model.params, lr=config.lr)
    disc = None
    opt_d = None
    if config.model.tdd_enabled:
        disc = SequenceDiscriminator(config.model, seed=int(seeds[1]))
        opt_d = Adam(disc.params, lr=config.disc_lr or config.lr)
    return model, disc, opt_g, opt_d


def _flip_pair(sample, spe, flip_y, flip_x):
    """Flip a sample (and its precomputed spectral input) spatially.

    The mask flips with the images; the enhancement targets and class label
    are flip-invariant, and the high-pass preprocessing commutes with flips,
    so flipping the cached spectral planes is exact.
    """
    axes = tuple(a for a, f in ((1, flip_y), (2, flip_x)) if f)
    if not axes:
        return sample, spe
    flipped = replace(
        sample,
        phases=np.flip(sample.phases, axes).copy(),
        mask=np.flip(sample.mask, tuple(a - 1 for a in axes)).copy())
    if spe is not None:
        spe = np.flip(spe, axes).copy()
    return flipped, spe


def train_on(samples, spe_inputs, config, fold=0, step_hook=None):
    """Train a fresh model for config.epochs over the given samples.

    Returns (model, disc, opt_g, opt_d, loss_traces) with per-epoch mean
    traces for every enabled term.
    """
    model, disc, opt_g, opt_d = build_networks(config, fold)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, fold, 1]))
    trace_names = enabled_terms(config.model) + ["total"]
    if config.model.tdd_enabled:
        trace_names.append("adv_d")
    traces = {name: [] for name in trace_names}
    n = len(samples)
    base_lr_g = opt_g.state.lr
    base_lr_d = opt_d.state.lr if opt_d is not None else None
    for _epoch in range(config.epochs):
        if config.lr_decay == "cosine":
            scale = 0.5 * (1.0 + math.cos(math.pi * _epoch / config.epochs))
            opt_g.state.lr = base_lr_g * scale
            if opt_d is not None:
                opt_d.state.lr = base_lr_d * scale
        order = rng.permutation(n)
        sums = {name: 0.0 for name in trace_names}
        steps = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            if config.augment:
                # gentle augmentation: each axis flips with probability 1/4,
                # so over half of the presentations are unaltered
                batch = [_flip_pair(samples[i], spe_inputs[i],
                                    float(rng.uniform()) < 0.25,
                                    float(rng.uniform()) < 0.25)
                         for i in idx]
            else:
                batch = [(samples[i], spe_inputs[i]) for i in idx]
            values = train_step(batch, model, disc, opt_g, opt_d, config)
            if step_hook is not None:
                step_hook(values)
            for name in trace_names:
                sums[name] += values.get(name, 0.0)
            steps += 1
        for name in trace_names:
            traces[name].append(sums[name] / steps)
    return model, disc, opt_g, opt_d, traces


def run_fold(samples, spe_inputs, partition, config, fold):
    train_idx, test_idx = partition
    if set(train_idx) & set(test_idx):
        raise ContractError("train and test indices overlap")
    t0 = time.time()
    model, disc, opt_g, opt_d, traces = train_on(
        [samples[i] for i in train_idx], [spe_inputs[i] for i in train_idx],
        config, fold=fold)
    metrics = evaluate(model, [samples[i] for i in test_idx],
                       [spe_inputs[i] for i in test_idx])
    return FoldReport(fold=fold, loss_traces=traces, metrics=metrics,
                      seconds=time.time() - t0)


def _fold_worker(args):
    samples, spe_inputs, partition, config, fold = args
    return run_fold(samples, spe_inputs, partition, config, fold)


def aggregate_metrics(fold_reports):
    """Mean +/- population std over folds of each fold-level metric."""
    fold_keys = {"dsc": "dsc_mean", "iou": "iou_mean", "mae": "mae_mean",
                 "accuracy": "accuracy"}
    agg = {}
    for out_name, key in fold_keys.items():
        if key not in fold_reports[0].metrics:
            continue
        values = [fr.metrics[key] for fr in fold_reports]
        agg[f"{out_name}_mean"] = float(np.mean(values))
        agg[f"{out_name}_std"] = float(np.std(values))
    if "confusion" in fold_reports[0].metrics:
        total = np.zeros((2, 2), dtype=np.int64)
        for fr in fold_reports:
            total += np.asarray(fr.metrics["confusion"])
        agg["confusion"] = total.tolist()
    return agg


def cross_validate(manifest, samples, config, jobs=1):
    """k-fold cross-validation; deterministic given (seed, config, dataset)."""
    partitions = kfold_split(manifest, config.k, config.seed)
    probe = MultiTaskModel(config.model, seed=0)
    spe = spectral_inputs(samples, probe)
    args = [(samples, spe, partitions[f], config, f) for f in range(config.k)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_fold_worker, args))
    else:
        reports = [_fold_worker(a) for a in args]
    reports.sort(key=lambda fr: fr.fold)
    return {
        "config": config.to_dict(),
        "folds": [fr.to_dict() for fr in reports],
        "aggregate": aggregate_metrics(reports),
    }


ABLATION_VARIANTS = (
    ("No MdIEF", {"use_mdief": False}),
    ("No Spe", {"use_spe": False}),
    ("No Spa", {"use_spa": False}),
    ("No TIM", {"use_tim": False}),
    ("No TDD", {"use_tdd": False}),
    ("Full", {}),
)

SYNERGY_VARIANTS = (
    ("Seg-only", ("seg",)),
    ("Seg+Reg", ("seg", "reg")),
    ("Seg+Cls", ("seg", "cls")),
    ("Full", ("seg", "reg", "cls")),
)


def _variant_config(base, **model_overrides):
    d = base.to_dict()
    d["model"].update(model_overrides)
    return TrainConfig.from_dict(d)


def run_ablation(manifest, samples, base_config, jobs=1):
    """Cross-validate the six architectural variants under identical seeds."""
    rows = []
    results = {}
    for name, overrides in ABLATION_VARIANTS:
        config = _variant_config(base_config, **overrides)
        report = cross_validate(manifest, samples, config, jobs=jobs)
        agg = report["aggregate"]
        results[name] = report
        rows.append({
            "variant": name,
            "dsc_mean": agg["dsc_mean"], "dsc_std": agg["dsc_std"],
            "iou_mean": agg["iou_mean"], "iou_std": agg["iou_std"],
            "mae_mean": agg.get("mae_mean"), "mae_std": agg.get("mae_std"),
        })
    return {"table": rows, "reports": results}


def run_synergy(manifest, samples, base_config, jobs=1):
    """Cross-validate the four task-combination rows; metrics whose task is
    off are reported as None (rendered as "--")."""
    rows = []
    results = {}
    for name, tasks in SYNERGY_VARIANTS:
        config = _variant_config(base_config, tasks=tasks)
        report = cross_validate(manifest, samples, config, jobs=jobs)
        agg = report["aggregate"]
        results[name] = report
        rows.append({
            "variant": name,
            "dsc_mean": agg["dsc_mean"], "dsc_std": agg["dsc_std"],
            "mae_mean": agg.get("mae_mean"), "mae_std": agg.get("mae_std"),
            "accuracy": agg.get("accuracy_mean"),
        })
    return {"table": rows, "reports": results}


def render_table_csv(rows, columns):
    """CSV text for an experiment table; missing values become "--"."""
    lines = [",".join(columns)]
    for row in rows:
        cells = []
        for col in columns:
            v = row.get(col)
            if v is None:
                cells.append("--")
            elif isinstance(v, float):
                cells.append(f"{v:.4f}")
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


# -- checkpointing ------------------------------------------------------------


def _state_entries(model, disc, opt_g, opt_d):
    entries = []
    for name, p in model.params.items():
        entries.append((f"model.{name}", p.data, "param"))
    for name, buf in model.buffers():
        entries.append((f"model.{name}", buf, "buffer"))
    if disc is not None:
        for name, p in disc.params.items():
            entries.append((f"disc.{name}", p.data, "param"))
    if opt_g is not None:
        for name in model.params.names():
            entries.append((f"opt_g.m.{name}", opt_g.state.m[name], "opt"))
            entries.append((f"opt_g.v.{name}", opt_g.state.v[name], "opt"))
    if opt_d is not None and disc is not None:
        for name in disc.params.names():
            entries.append((f"opt_d.m.{name}", opt_d.state.m[name], "opt"))
            entries.append((f"opt_d.v.{name}", opt_d.state.v[name], "opt"))
    return entries


def save_checkpoint(path_prefix, model, disc=None, opt_g=None, opt_d=None,
                    train_config=None):
    """Write <prefix>.json (manifest) and <prefix>.bin (float32 blob)."""
    prefix = Path(path_prefix)
    entries = _state_entries(model, disc, opt_g, opt_d)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "has_disc": disc is not None,
        "has_opt_g": opt_g is not None,
        "has_opt_d": opt_d is not None,
        "opt_g_t": opt_g.state.t if opt_g else None,
        "opt_d_t": opt_d.state.t if opt_d else None,
        "train_config": train_config.to_dict() if train_config else None,
        "entries": [{"name": n, "shape": list(a.shape), "kind": k}
                    for n, a, k in entries],
    }
    blob = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes()
                    for _, a, _ in entries)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    prefix.with_suffix(".bin").write_bytes(blob)


def load_checkpoint(path_prefix):
    """Rebuild model/discriminator/optimizers from a checkpoint pair."""
    prefix = Path(path_prefix)
    json_path = prefix.with_suffix(".json")
    bin_path = prefix.with_suffix(".bin")
    if not json_path.exists() or not bin_path.exists():
        raise FileNotFoundError(f"checkpoint {prefix} not found")
    try:
        manifest = json.loads(json_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad checkpoint manifest: {exc}") from exc
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {manifest.get('version')}")
    config = ModelConfig.from_dict(manifest["model_config"])
    train_config = (TrainConfig.from_dict(manifest["train_config"])
                    if manifest.get("train_config") else None)
    model = MultiTaskModel(config, seed=0)
    opt_g = Adam(model.params, lr=train_config.lr if train_config else 1e-4) \
        if manifest["has_opt_g"] else None
    disc = None
    opt_d = None
    if manifest["has_disc"]:
        disc = SequenceDiscriminator(config, seed=0)
        if manifest["has_opt_d"]:
            lr = (train_config.disc_lr or train_config.lr) if train_config else 1e-4
            opt_d = Adam(disc.params, lr=lr)
    targets = {f"model.{n}": p.data for n, p in model.params.items()}
    targets.update({f"model.{n}": b for n, b in model.buffers()})
    if disc is not None:
        targets.update({f"disc.{n}": p.data for n, p in disc.params.items()})
    if opt_g is not None:
        for name in model.params.names():
            targets[f"opt_g.m.{name}"] = opt_g.state.m[name]
            targets[f"opt_g.v.{name}"] = opt_g.state.v[name]
    if opt_d is not None:
        for name in disc.params.names():
            targets[f"opt_d.m.{name}"] = opt_d.state.m[name]
            targets[f"opt_d.v.{name}"] = opt_d.state.v[name]

    blob = bin_path.read_bytes()
    expected = sum(4 * int(np.prod(e["shape"])) for e in manifest["entries"])
    if len(blob) != expected:
        raise FormatError(
            f"checkpoint blob length {len(blob)} does not match manifest ({expected})")
    seen = set()
    offset = 0
    for entry in manifest["entries"]:
        name = entry["name"]
        if name in seen:
            raise FormatError(f"duplicate checkpoint entry {name!r}")
        seen.add(name)
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if name not in targets:
            raise CompatibilityError(f"checkpoint entry {name!r} has no counterpart")
        target = targets[name]
        if target.shape != shape:
            raise CompatibilityError(
                f"shape mismatch for {name!r}: checkpoint {shape}, model {target.shape}")
        values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        target[...] = values.reshape(shape).astype(np.float64)
        offset += 4 * count
    missing = set(targets) - seen
    if missing:
        raise CompatibilityError(f"checkpoint is missing entries, e.g. {sorted(missing)[0]!r}")
    if opt_g is not None:
        opt_g.state.t = manifest["opt_g_t"]
    if opt_d is not None:
        opt_d.state.t = manifest["opt_d_t"]
    return model, disc, opt_g, opt_d, train_config
