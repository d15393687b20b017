"""The multi-task computation graph: dual-domain encoders, entropy-weighted
feature fusion, segmentation decoder, token trunk with task heads, the
mask-to-enhancement consistency path and the sequence discriminator."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .nn import (ConvBlock, DeconvBlock, Linear, ParameterSet,
                 TransformerBlock, positional_encoding)
from .spectral import HighPassSpec, spectral_preprocess
from .tensor import Tensor

INTENSITY_SCALE = 255.0
TIM_EPS = 1e-6
ALL_TASKS = ("seg", "reg", "cls")


@dataclass
class ModelConfig:
    h: int = 32
    w: int = 32
    channels: tuple = (8, 16, 32, 64)
    heads: int = 1
    d_k: int = 64
    depth: int = 3
    ff_mult: int = 4
    cutoff_ratio: float = 0.25
    disc_dim: int = 16
    shared_encoders: bool = False
    use_mdief: bool = True
    use_spe: bool = True
    use_spa: bool = True
    use_tim: bool = True
    use_tdd: bool = True
    tasks: tuple = ALL_TASKS

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.tasks = tuple(self.tasks)
        if self.h % 16 or self.w % 16:
            raise ConfigError(f"H and W must be divisible by 16, got {self.h}x{self.w}")
        if len(self.channels) != 4:
            raise ConfigError("encoder schedule must list four channel counts")
        if self.depth < 1:
            raise ConfigError("transformer depth must be at least 1")
        if not (self.use_spa or self.use_spe):
            raise ConfigError("at least one of the spatial/spectral branches must stay on")
        unknown = set(self.tasks) - set(ALL_TASKS)
        if unknown:
            raise ConfigError(f"unknown tasks {sorted(unknown)}")
        if "seg" not in self.tasks:
            raise ConfigError("the segmentation task cannot be disabled")
        p2 = self.p * self.p
        if p2 % 2 or p2 < 4:
            raise ConfigError(
                f"token dimension P^2 = {p2} must be even and >= 4 (increase H, W)")
        if self.disc_dim % 2:
            raise ConfigError("disc_dim must be even for the positional encoding")

    @property
    def p(self):
        return self.h // 16

    @property
    def c(self):
        return self.channels[-1]

    @property
    def n_tokens(self):
        return 4 * self.c

    @property
    def trunk_enabled(self):
        return "reg" in self.tasks or "cls" in self.tasks

    @property
    def tim_enabled(self):
        # The mask-consistency term ties segmentation to the regression targets.
        return self.use_tim and "reg" in self.tasks

    @property
    def tdd_enabled(self):
        # The discriminator consumes both the regression and class outputs.
        return self.use_tdd and "reg" in self.tasks and "cls" in self.tasks

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["tasks"] = list(self.tasks)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class FusionWeights:
    gamma_spa: np.ndarray
    gamma_spe: np.ndarray


@dataclass
class TaskOutputs:
    seg_logits: Tensor = None
    seg_prob: Tensor = None
    reg: Tensor = None        # (4,) in intensity units
    cls_prob: Tensor = None   # (2,)
    derived_enhancement: Tensor = None  # (4,) from the predicted mask
    fusion_weights: list = field(default_factory=list)


def fuse_features(x_spa, x_spe):
    """Entropy-weighted fusion of spatial/spectral feature maps.

    Per-channel global average pooling feeds a two-way softmax; the fused map
    is x_spa*(1+g_spa) + x_spe*(1+g_spe) with g_spa + g_spe = 1 per channel.
    """
    if x_spa.data.shape != x_spe.data.shape:
        raise ShapeError(f"fusion shapes differ: {x_spa.data.shape} vs {x_spe.data.shape}")
    p_spa = T.tmean(x_spa, axis=(1, 2))
    p_spe = T.tmean(x_spe, axis=(1, 2))
    # two-way softmax expressed through the logistic function: exact
    # complementarity and invariance to a common shift
    g_spa = T.sigmoid(p_spa - p_spe)
    g_spe = T.sigmoid(p_spe - p_spa)
    c = x_spa.data.shape[0]
    fused = x_spa * T.reshape(g_spa + 1.0, (c, 1, 1)) + x_spe * T.reshape(g_spe + 1.0, (c, 1, 1))
    weights = FusionWeights(gamma_spa=g_spa.data.copy(), gamma_spe=g_spe.data.copy())
    return fused, weights


def derive_enhancement(seg_prob, phases, eps=TIM_EPS):
    """Soft-mask mean intensity per phase: sum(prob*phase)/(sum(prob)+eps).

    `phases` is a (4,H,W) constant; gradients flow into `seg_prob` only.
    """
    phases = T.as_tensor(phases)
    h, w = seg_prob.data.shape
    prob = T.reshape(seg_prob, (1, h, w))
    num = T.tsum(prob * phases.detach(), axis=(1, 2))
    total = T.tsum(seg_prob)
    # guard empty masks without perturbing non-empty ones: the denominator is
    # max(sum(prob), eps), keeping the derived value exact for real masks
    den = total if total.data > eps else T.as_tensor(eps)
    return num / den


class MultiTaskModel:
    # logit sharpening applied to the mask that feeds the consistency path
    TIM_TEMPERATURE = 3.0

    def __init__(self, config, seed=0):
        self.config = config
        self.params = ParameterSet()
        self.training = True
        rng = np.random.default_rng(seed)
        cfg = config
        chans = cfg.channels
        self._bn_blocks = []

        def encoder(prefix):
            blocks = []
            c_in = 1
            for i, c_out in enumerate(chans):
                blk = ConvBlock(self.params, f"{prefix}.{i}", c_in, c_out, rng)
                blocks.append(blk)
                self._bn_blocks.append(blk)
                c_in = c_out
            return blocks

        self.enc_spa = encoder("enc_spa") if cfg.use_spa else None
        if cfg.use_spe:
            if cfg.shared_encoders and cfg.use_spa:
                self.enc_spe = self.enc_spa
            else:
                self.enc_spe = encoder("enc_spe")
        else:
            self.enc_spe = None

        dec_in = 4 * cfg.c
        dec_channels = [cfg.c, cfg.c // 2, max(cfg.c // 4, 1), max(cfg.c // 8, 1)]
        self.dec = []
        c_in = dec_in
        for i, c_out in enumerate(dec_channels):
            blk = DeconvBlock(self.params, f"dec.{i}", c_in, c_out, rng)
            self.dec.append(blk)
            self._bn_blocks.append(blk)
            c_in = c_out
        # final 1x1 convolution to one logit channel, realized as a linear
        # map over channels; the bias starts positive so the initial mask is
        # large — the consistency loss scales inversely with the soft-mask
        # area, so a large early mask keeps that pressure gentle while the
        # cross-entropy prunes the background
        self.seg_head = Linear(self.params, "seg_head", c_in, 1, rng,
                               bias_init=1.0)

        if cfg.trunk_enabled:
            dim = cfg.p * cfg.p
            self.pe = positional_encoding(cfg.n_tokens, dim)
            self.trunk = [TransformerBlock(self.params, f"trunk.{i}", dim,
                                           heads=cfg.heads, d_k=cfg.d_k,
                                           ff_hidden=cfg.ff_mult * dim, rng=rng)
                          for i in range(cfg.depth)]
            # the residual stream is unnormalized (pre-norm blocks), so the
            # pooled vector is standardized across tokens before the heads;
            # normalizing across tokens keeps per-token content informative
            self.pool_g = self.params.add("pool_ln.gamma", np.ones(cfg.n_tokens))
            self.pool_b = self.params.add("pool_ln.beta", np.zeros(cfg.n_tokens))
            if "reg" in cfg.tasks:
                # bias starts at the normalized mid intensity so the head
                # begins inside the target range
                # small weight init keeps the initial prediction near the
                # mid-intensity bias instead of the head's random projection
                self.reg_head = Linear(self.params, "reg_head", cfg.n_tokens, 4,
                                       rng, bias_init=0.5, weight_scale=0.1)
            if "cls" in cfg.tasks:
                self.cls_head = Linear(self.params, "cls_head", cfg.n_tokens, 2,
                                       rng, weight_scale=0.1)
        else:
            self.trunk = []
        self.hp_spec = HighPassSpec(cfg.cutoff_ratio)

    # -- modes / state ------------------------------------------------------

    def train_mode(self):
        self.training = True

    def eval_mode(self):
        self.training = False

    def buffers(self):
        out = []
        for blk in self._bn_blocks:
            out.extend(blk.bn.buffers(f"{blk.prefix}.bn"))
        return out

    # -- pieces -------------------------------------------------------------

    def spectral_input(self, phase_image):
        """High-pass filtered version of one raw phase (outside the graph)."""
        return spectral_preprocess(phase_image, self.hp_spec)

    def encode_phase(self, phase_image, branch):
        """Run one phase through the named encoder branch -> (C,P,P)."""
        blocks = {"spatial": self.enc_spa, "spectral": self.enc_spe}[branch]
        if blocks is None:
            raise ConfigError(f"the {branch} branch is disabled in this configuration")
        x = T.as_tensor(phase_image)
        x = T.reshape(x, (1,) + x.data.shape)
        for blk in blocks:
            # per-sample statistics in every mode: with batch size 1 the
            # running averages never match any individual sample, so using
            # them at inference would shift every feature map
            x = blk(x, True, update_running=self.training)
        return x

    def fuse_phase(self, x_spa, x_spe):
        """Apply the configured fusion rule (ablation switches reroute)."""
        cfg = self.config
        if not cfg.use_spe:
            return x_spa * 2.0, FusionWeights(
                gamma_spa=np.ones(cfg.c), gamma_spe=np.zeros(cfg.c))
        if not cfg.use_spa:
            return x_spe * 2.0, FusionWeights(
                gamma_spa=np.zeros(cfg.c), gamma_spe=np.ones(cfg.c))
        if not cfg.use_mdief:
            return x_spa + x_spe, FusionWeights(
                gamma_spa=np.full(cfg.c, 0.5), gamma_spe=np.full(cfg.c, 0.5))
        return fuse_features(x_spa, x_spe)

    def segment(self, fused_phases):
        """Concatenate the four fused maps and decode to (H,W) logits."""
        x = T.concat(fused_phases, axis=0)
        for blk in self.dec:
            x = blk(x, True, update_running=self.training)
        c, h, w = x.data.shape
        flat = T.transpose2d(T.reshape(x, (c, h * w)))
        logits = self.seg_head(flat)
        return T.reshape(logits, (h, w))

    def build_tokens(self, fused_phases):
        """Flatten every channel map into a token; phase-major order with
        sinusoidal positional encoding added."""
        cfg = self.config
        rows = [T.reshape(f, (cfg.c, cfg.p * cfg.p)) for f in fused_phases]
        tokens = T.concat(rows, axis=0)
        if tokens.data.shape[0] != cfg.n_tokens:
            raise ContractError(
                f"token count {tokens.data.shape[0]} != 4*C = {cfg.n_tokens}")
        return tokens + Tensor(self.pe)

    def trunk_and_heads(self, tokens):
        x = tokens
        for blk in self.trunk:
            x = blk(x)
        # each token is a flattened channel map; pooling it to a scalar is
        # the channel-wise global average that feeds the prediction heads
        pooled = T.layernorm(T.tmean(x, axis=1), self.pool_g, self.pool_b)
        cfg = self.config
        reg = None
        cls_prob = None
        if "reg" in cfg.tasks:
            reg = self.reg_head(pooled) * INTENSITY_SCALE
        if "cls" in cfg.tasks:
            cls_prob = T.softmax(self.cls_head(pooled), axis=-1)
        return reg, cls_prob

    # -- full forward --------------------------------------------------------

    def forward(self, phases, spectral_phases=None):
        """Run the network on a (4,H,W) raw phase stack.

        `spectral_phases` may carry precomputed high-pass inputs (the
        transform is deterministic data preprocessing); otherwise they are
        derived here.  Raw intensities are scaled to [0,1] internally.
        """
        cfg = self.config
        phases = np.asarray(phases, dtype=np.float64)
        if phases.shape != (4, cfg.h, cfg.w):
            raise ShapeError(f"expected (4,{cfg.h},{cfg.w}) phases, got {phases.shape}")
        norm = phases / INTENSITY_SCALE
        if cfg.use_spe and spectral_phases is None:
            spectral_phases = np.stack([self.spectral_input(norm[p]) for p in range(4)])

        fused_all = []
        weights_all = []
        for p in range(4):
            x_spa = self.encode_phase(norm[p], "spatial") if cfg.use_spa else None
            x_spe = self.encode_phase(spectral_phases[p], "spectral") if cfg.use_spe else None
            fused, weights = self.fuse_phase(x_spa, x_spe)
            fused_all.append(fused)
            weights_all.append(weights)

        out = TaskOutputs(fusion_weights=weights_all)
        out.seg_logits = self.segment(fused_all)
        out.seg_prob = T.sigmoid(out.seg_logits)
        if cfg.trunk_enabled:
            tokens = self.build_tokens(fused_all)
            out.reg, out.cls_prob = self.trunk_and_heads(tokens)
        if cfg.tim_enabled:
            # the consistency path re-decodes detached fused features, so its
            # loss trains the segmentation decoder only and cannot disturb
            # the shared encoders or the fusion weights; the mask is
            # sharpened (still soft and differentiable) so the weighted mean
            # approximates the hard-mask enhancement and confidently
            # classified pixels stop receiving consistency pressure
            tim_logits = self.segment([f.detach() for f in fused_all])
            out.derived_enhancement = derive_enhancement(
                T.sigmoid(tim_logits), phases)
        return out


class SequenceDiscriminator:
    """Transformer-based discriminator over the concatenated (normalized)
    enhancement vector and class distribution (6 scalars)."""

    N_SLOTS = 6
    LOGIT_CAP = 2.0

    def __init__(self, config, seed=0):
        self.config = config
        self.params = ParameterSet()
        rng = np.random.default_rng(seed)
        d = config.disc_dim
        # small-scale init keeps early scores near 0.5 so the adversarial
        # gradient stays gentle while the task heads are still settling
        self.slot_w = self.params.add("slot_w", rng.normal(0.0, 0.1, size=(self.N_SLOTS, d)))
        self.slot_b = self.params.add("slot_b", np.zeros((self.N_SLOTS, d)))
        self.pe = positional_encoding(self.N_SLOTS, d)
        self.block = TransformerBlock(self.params, "block", d, heads=1,
                                      d_k=d, ff_hidden=2 * d, rng=rng)
        self.out = Linear(self.params, "out", d, 1, rng, weight_scale=0.1)

    def __call__(self, y_ic):
        y_ic = T.as_tensor(y_ic)
        if y_ic.data.shape != (self.N_SLOTS,):
            raise ShapeError(f"discriminator expects a 6-vector, got {y_ic.data.shape}")
        if not np.all(np.isfinite(y_ic.data)):
            raise ContractError("discriminator input must be finite")
        tokens = T.reshape(y_ic, (self.N_SLOTS, 1)) * self.slot_w + self.slot_b
        tokens = tokens + Tensor(self.pe)
        x = self.block(tokens)
        score = T.reshape(self.out(T.tmean(x, axis=0)), ())
        # smooth logit cap (c*tanh(z/c)): once the discriminator is
        # saturated-confident its gradient back to the generator vanishes
        # instead of staying at full strength forever
        c = self.LOGIT_CAP
        capped = (T.sigmoid(score * (2.0 / c)) * 2.0 - 1.0) * c
        return T.sigmoid(capped)

    def buffers(self):
        return []
