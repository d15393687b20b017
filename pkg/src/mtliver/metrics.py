"""Evaluation metrics: Dice, IoU (percentages), mean absolute error and
classification accuracy with a 2x2 confusion matrix."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError
from .tensor import Tensor

SEG_THRESHOLD = 0.5


@dataclass
class ConfusionMatrix:
    counts: np.ndarray = field(default_factory=lambda: np.zeros((2, 2), dtype=np.int64))

    def add(self, true_label, pred_label):
        self.counts[true_label, pred_label] += 1

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def accuracy(self):
        return float(np.trace(self.counts)) / self.total

    def row_percentages(self):
        rows = self.counts.astype(np.float64)
        sums = rows.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore"):
            out = np.where(sums > 0, 100.0 * rows / sums, 0.0)
        return out

    def to_lists(self):
        return self.counts.tolist()


def binarize(seg_prob, threshold=SEG_THRESHOLD):
    arr = seg_prob.data if isinstance(seg_prob, Tensor) else np.asarray(seg_prob)
    return (arr > threshold).astype(np.uint8)


def _check_masks(pred, gt):
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def dsc(pred_mask, gt_mask):
    """Dice similarity coefficient in percent; both-empty counts as perfect."""
    pred, gt = _check_masks(pred_mask, gt_mask)
    inter = np.logical_and(pred, gt).sum()
    denom = pred.sum() + gt.sum()
    if denom == 0:
        return 100.0
    return 200.0 * inter / denom


def iou(pred_mask, gt_mask):
    """Intersection over union in percent; both-empty counts as perfect."""
    pred, gt = _check_masks(pred_mask, gt_mask)
    inter = np.logical_and(pred, gt).sum()
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 100.0
    return 100.0 * inter / union


def mae_metric(pred, target):
    """Mean absolute error over the enhancement slots (intensity units)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.abs(pred - target).mean())


def classify_metrics(cls_probs, labels):
    """Accuracy and confusion counts under the argmax rule (ties -> class 0)."""
    if len(cls_probs) == 0:
        raise ContractError("classify_metrics needs at least one sample")
    if len(cls_probs) != len(labels):
        raise ShapeError("probabilities and labels differ in length")
    cm = ConfusionMatrix()
    for p, u in zip(cls_probs, labels):
        p = np.asarray(p, dtype=np.float64)
        pred = 0 if p[0] >= p[1] else 1
        cm.add(int(u), pred)
    return cm.accuracy, cm
