"""Synthetic dynamic-contrast phantom generator.

Each sample is a four-phase image stack of a liver-like background with one
elliptical lesion whose per-phase brightness follows a class-specific
enhancement curve: benign lesions fill in progressively, malignant ones
wash in at the arterial phase and then wash out.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

MAGIC = b"MTIP"
FILE_VERSION = 1

LABEL_HEMANGIOMA = 0
LABEL_HCC = 1

PHASE_NAMES = ("pre", "art", "pv", "delay")


@dataclass(frozen=True)
class CurveTemplate:
    name: str
    enhancement: tuple

    def __post_init__(self):
        if len(self.enhancement) != 4 or not all(0.0 <= e <= 1.0 for e in self.enhancement):
            raise ConfigError("curve template needs four per-phase values in [0,1]")


# Fill-in vs wash-in/washout shapes; the numbers themselves are toolkit choices.
HEMANGIOMA_TEMPLATE = CurveTemplate("hemangioma", (0.2, 0.5, 0.8, 0.95))
HCC_TEMPLATE = CurveTemplate("hcc", (0.2, 1.0, 0.6, 0.4))
TEMPLATES = {LABEL_HEMANGIOMA: HEMANGIOMA_TEMPLATE, LABEL_HCC: HCC_TEMPLATE}


@dataclass
class PhantomConfig:
    h: int = 32
    w: int = 32
    noise_sigma: float = 8.0
    base_level: float = 80.0
    contrast_amplitude: float = 150.0
    texture_amplitude: float = 6.0
    intensity_range: tuple = (0.0, 255.0)

    def __post_init__(self):
        for n, label in ((self.h, "H"), (self.w, "W")):
            if n < 16 or n > 256 or (n & (n - 1)) != 0:
                raise ConfigError(f"{label} must be a power of two in [16,256], got {n}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        lo, hi = self.intensity_range
        if not lo < hi:
            raise ConfigError("intensity_range must be increasing")


@dataclass
class Sample:
    phases: np.ndarray       # (4,H,W) float64 in [0,255]
    mask: np.ndarray         # (H,W) uint8 in {0,1}
    enhancement: np.ndarray  # (4,) float64, noiseless in-tumor means
    label: int
    clipped_pixels: int = 0


@dataclass
class DatasetManifest:
    version: int
    h: int
    w: int
    count: int
    seed: int
    noise_sigma: float
    samples: list = field(default_factory=list)  # dicts: file, label, enhancement

    def to_json(self):
        return json.dumps({
            "version": self.version, "h": self.h, "w": self.w,
            "count": self.count, "seed": self.seed,
            "noise_sigma": self.noise_sigma, "samples": self.samples,
        }, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        try:
            d = json.loads(text)
            return cls(version=d["version"], h=d["h"], w=d["w"], count=d["count"],
                       seed=d["seed"], noise_sigma=d["noise_sigma"], samples=d["samples"])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"bad manifest: {exc}") from exc


def _smooth_field(rng, h, w, amplitude):
    """Low-amplitude smooth background texture built from a few cosine modes."""
    if amplitude == 0.0:
        return np.zeros((h, w))
    yy, xx = np.meshgrid(np.arange(h) / h, np.arange(w) / w, indexing="ij")
    field = np.zeros((h, w))
    for _ in range(3):
        fy, fx = rng.uniform(0.5, 2.0, size=2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        field += rng.uniform(0.3, 1.0) * np.cos(2.0 * np.pi * (fy * yy + fx * xx) + phase)
    peak = np.abs(field).max()
    return field * (amplitude / peak)


def _random_ellipse_mask(rng, h, w):
    max_fg = (h * w) // 4
    for _ in range(200):
        cy = rng.uniform(0.3, 0.7) * h
        cx = rng.uniform(0.3, 0.7) * w
        a = rng.uniform(0.1, 0.3) * min(h, w)
        b = rng.uniform(0.1, 0.3) * min(h, w)
        theta = rng.uniform(0.0, np.pi)
        yy, xx = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        mask = ((u / a) ** 2 + (v / b) ** 2 <= 1.0)
        n = int(mask.sum())
        if 1 <= n <= max_fg:
            return mask.astype(np.uint8)
    raise ConfigError("could not place a lesion satisfying the size bounds")


def generate_sample(rng_seed, label, config=None):
    """Deterministically build one phantom from a seed and class label."""
    config = config or PhantomConfig()
    if label not in TEMPLATES:
        raise ConfigError(f"unknown class label {label}")
    rng = np.random.default_rng(rng_seed)
    h, w = config.h, config.w
    base = config.base_level + _smooth_field(rng, h, w, config.texture_amplitude)
    mask = _random_ellipse_mask(rng, h, w)
    template = TEMPLATES[label]
    fg = mask.astype(bool)
    clean = np.empty((4, h, w))
    enhancement = np.empty(4)
    for p, e in enumerate(template.enhancement):
        img = base + fg * (e * config.contrast_amplitude)
        clean[p] = img
        enhancement[p] = img[fg].mean()
    noisy = clean + rng.normal(0.0, config.noise_sigma, size=clean.shape)
    lo, hi = config.intensity_range
    clipped = int(((noisy < lo) | (noisy > hi)).sum())
    phases = np.clip(noisy, lo, hi)
    return Sample(phases=phases, mask=mask, enhancement=enhancement,
                  label=label, clipped_pixels=clipped)


def write_sample(path, sample):
    h, w = sample.mask.shape
    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<III", FILE_VERSION, h, w)
    payload += sample.phases.astype("<f4").tobytes()
    payload += sample.mask.astype(np.uint8).tobytes()
    payload += sample.enhancement.astype("<f4").tobytes()
    payload += struct.pack("<B", sample.label)
    Path(path).write_bytes(bytes(payload))


def read_sample(path):
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header")
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    version, h, w = struct.unpack("<III", raw[4:16])
    if version != FILE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expect = 16 + 4 * h * w * 4 + h * w + 4 * 4 + 1
    if len(raw) != expect:
        raise FormatError(
            f"{path}: file length {len(raw)} inconsistent with header H={h} W={w} "
            f"(expected {expect})")
    off = 16
    phases = np.frombuffer(raw, dtype="<f4", count=4 * h * w, offset=off)
    phases = phases.reshape(4, h, w).astype(np.float64)
    off += 4 * h * w * 4
    mask = np.frombuffer(raw, dtype=np.uint8, count=h * w, offset=off).reshape(h, w).copy()
    off += h * w
    enhancement = np.frombuffer(raw, dtype="<f4", count=4, offset=off).astype(np.float64)
    off += 16
    label = raw[off]
    return Sample(phases=phases, mask=mask, enhancement=enhancement, label=int(label))


def generate_dataset(n_per_class, config, seed, out_dir):
    """Write a balanced dataset plus its manifest; byte-identical per seed."""
    if n_per_class < 5:
        raise ConfigError(f"n_per_class must be at least 5, got {n_per_class}")
    config = config or PhantomConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    children = np.random.SeedSequence(seed).spawn(2 * n_per_class)
    manifest = DatasetManifest(version=FILE_VERSION, h=config.h, w=config.w,
                               count=2 * n_per_class, seed=seed,
                               noise_sigma=config.noise_sigma)
    for i, child in enumerate(children):
        label = i % 2
        sample = generate_sample(child, label, config)
        name = f"sample_{i:04d}.mtip"
        write_sample(out / name, sample)
        manifest.samples.append({
            "file": name,
            "label": label,
            "enhancement": [float(np.float32(v)) for v in sample.enhancement],
        })
    (out / "manifest.json").write_text(manifest.to_json())
    return manifest


def load_manifest(dataset_dir):
    path = Path(dataset_dir) / "manifest.json"
    if not path.exists():
        raise FormatError(f"no manifest.json in {dataset_dir}")
    return DatasetManifest.from_json(path.read_text())


def load_dataset(dataset_dir):
    manifest = load_manifest(dataset_dir)
    samples = [read_sample(Path(dataset_dir) / entry["file"]) for entry in manifest.samples]
    if len(samples) != manifest.count:
        raise FormatError("manifest count does not match its sample list")
    return manifest, samples


def kfold_split(manifest, k, seed):
    """Class-stratified k-fold partition; returns k (train, test) index pairs."""
    n = manifest.count
    if k < 2 or k > n:
        raise ConfigError(f"k must be in [2, {n}], got {k}")
    labels = np.array([entry["label"] for entry in manifest.samples])
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    pos = 0
    for label in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == label)
        rng.shuffle(idx)
        for sample_idx in idx:
            folds[pos % k].append(int(sample_idx))
            pos += 1
    partitions = []
    all_idx = set(range(n))
    for f in folds:
        test = sorted(f)
        train = sorted(all_idx - set(test))
        partitions.append((train, test))
    return partitions
