"""Training objectives: pixel-wise BCE for segmentation, L1 for regression,
negative log-likelihood for classification, the mask-consistency L1 term and
the adversarial pair (non-saturating generator form)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Tensor

LOG_EPS = 1e-7
log = logging.getLogger(__name__)


@dataclass
class LossWeights:
    w_seg: float = 1.0
    w_reg: float = 1.0
    w_cls: float = 1.0
    w_tim: float = 1.0
    w_adv: float = 1.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not np.isfinite(value) or value < 0:
                raise ContractError(f"{name} must be finite and non-negative")


def seg_loss(seg_prob, mask):
    """Mean binary cross-entropy over all pixels; probabilities are clamped
    to [eps, 1-eps] before the logs."""
    mask = T.as_tensor(mask)
    if seg_prob.data.shape != mask.data.shape:
        raise ShapeError(f"shape mismatch {seg_prob.data.shape} vs {mask.data.shape}")
    p = T.clip(seg_prob, LOG_EPS, 1.0 - LOG_EPS)
    y = mask.detach()
    bce = y * T.log(p) + (1.0 - y) * T.log(1.0 - p)
    return -T.tmean(bce)


def reg_loss(y_hat, y):
    """Mean absolute error; subgradient 0 at ties."""
    y = T.as_tensor(y)
    if y_hat.data.shape != y.data.shape:
        raise ShapeError(f"shape mismatch {y_hat.data.shape} vs {y.data.shape}")
    return T.tmean(T.absolute(y_hat - y.detach()))


def cls_loss(p, label):
    """Negative log probability of the true class."""
    if not isinstance(label, (int, np.integer)) or not 0 <= label < p.data.shape[0]:
        raise ContractError(f"invalid class label {label!r}")
    pu = T.narrow(p, 0, int(label), 1)
    return -T.tsum(T.log(T.clip(pu, LOG_EPS, 1.0)))


def tim_loss(y_si, y_i):
    """L1 between the mask-derived enhancement and the target vector."""
    return reg_loss(y_si, y_i)


def adversarial_losses(d_real, d_fake):
    """Standard GAN discriminator loss and the non-saturating generator term.

    Both inputs are post-sigmoid probabilities; they are clamped before the
    logs.  Returns (L_D, L_G_adv).
    """
    dr = T.clip(d_real, LOG_EPS, 1.0 - LOG_EPS)
    df = T.clip(d_fake, LOG_EPS, 1.0 - LOG_EPS)
    l_d = -(T.log(dr) + T.log(1.0 - df))
    l_g = -T.log(df)
    return T.reshape(l_d, ()), T.reshape(l_g, ())


def total_generator_loss(parts, weights, enabled):
    """Weighted sum of the enabled loss parts.

    `parts` maps term name (seg/reg/cls/tim/adv) to a scalar tensor;
    `enabled` is the set of active terms.  A weight given for a disabled
    term is ignored with a logged warning.
    """
    weight_of = {"seg": weights.w_seg, "reg": weights.w_reg, "cls": weights.w_cls,
                 "tim": weights.w_tim, "adv": weights.w_adv}
    total = Tensor(0.0)
    for name, w in weight_of.items():
        if name in enabled:
            if name not in parts:
                raise ContractError(f"enabled loss term {name!r} missing from parts")
            total = total + parts[name] * w
        elif name in parts:
            log.warning("loss term %r is disabled; its weight is ignored", name)
    return total
