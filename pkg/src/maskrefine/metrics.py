"""Segmentation quality metrics: mIoU, boundary mIoU, pAcc, Img-Acc, F-measure.

Scoring conventions (stated once, applied everywhere): pixels whose
ground-truth label is the ignore ID are excluded, as are pixels whose
prediction is the ignore ID; classes absent from both prediction and
ground truth are excluded from mean IoU; two empty masks have IoU 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import BinaryMask, LabelMap
from .errors import (
    DimensionMismatch,
    LabelOutOfRange,
    NoScoredClasses,
    NoScoredPixels,
)
from .maskops import boundary_band

DEFAULT_BAND_FRACTION = 0.02
DEFAULT_BETA_SQ = 0.3

# Defaults not fixed by the evaluation protocol itself; echoed in report
# headers so downstream readers know what was assumed.
ASSUMPTIONS = {
    "band_fraction": "boundary band = max(1, round(band_fraction * image diagonal)) pixels",
    "beta_sq": "F-measure weighting beta^2 (foreground-vs-background binarization)",
    "img_acc_rule": "largest-area predicted foreground class must appear in the ground-truth class set",
}


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are ground truth, columns are prediction."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.counts, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DimensionMismatch("confusion matrix must be square")
        if (arr < 0).any():
            raise ValueError("confusion counts must be non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "counts", arr)

    @property
    def class_count(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def add(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.class_count != other.class_count:
            raise DimensionMismatch("confusion matrices must share class counts")
        return ConfusionMatrix(self.counts + other.counts)

    @classmethod
    def zeros(cls, class_count: int) -> "ConfusionMatrix":
        return cls(np.zeros((class_count, class_count), dtype=np.int64))


@dataclass(frozen=True)
class ReportDelta:
    """Metric differences against a named baseline, in percent units."""

    baseline: str
    values: dict[str, float]


@dataclass(frozen=True)
class EvalReport:
    """One evaluation outcome; every metric lies in [0, 1]."""

    miou: float
    b_miou: float
    pixel_acc: float
    img_acc: float
    f_beta: float
    per_class_iou: tuple[float, ...]
    deltas: Optional[ReportDelta] = None

    def to_dict(self) -> dict:
        doc = {
            "assumptions": ASSUMPTIONS,
            "miou": self.miou,
            "b_miou": self.b_miou,
            "pixel_acc": self.pixel_acc,
            "img_acc": self.img_acc,
            "f_beta": self.f_beta,
            "per_class_iou": [
                None if math.isnan(v) else v for v in self.per_class_iou
            ],
        }
        if self.deltas is not None:
            doc["deltas"] = {
                "baseline": self.deltas.baseline,
                "values": self.deltas.values,
                "formatted": {
                    k: format_delta(v) for k, v in self.deltas.values.items()
                },
            }
        return doc


_METRIC_NAMES = ("miou", "b_miou", "pixel_acc", "img_acc", "f_beta")


def _scored(pred: LabelMap, gt: LabelMap) -> np.ndarray:
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise DimensionMismatch("prediction and ground truth differ in size")
    return (gt.labels != gt.ignore_id) & (pred.labels != pred.ignore_id)


def confusion(
    preds: Sequence[LabelMap], gts: Sequence[LabelMap], class_count: int
) -> ConfusionMatrix:
    """Accumulate counts[gt][pred] over all scored pixels of all pairs."""
    if len(preds) != len(gts):
        raise DimensionMismatch("prediction/ground-truth counts differ")
    counts = np.zeros(class_count * class_count, dtype=np.int64)
    for pred, gt in zip(preds, gts):
        scored = _scored(pred, gt)
        g = gt.labels[scored].astype(np.int64)
        p = pred.labels[scored].astype(np.int64)
        if g.size and (int(g.max()) >= class_count or int(p.max()) >= class_count):
            raise LabelOutOfRange("label exceeds the configured class count")
        counts += np.bincount(g * class_count + p, minlength=counts.size)
    return ConfusionMatrix(counts.reshape(class_count, class_count))


def miou(cm: ConfusionMatrix) -> tuple[float, list[float]]:
    """Mean IoU plus per-class values (NaN for classes with empty union)."""
    tp = np.diag(cm.counts).astype(np.float64)
    union = cm.counts.sum(axis=0) + cm.counts.sum(axis=1) - np.diag(cm.counts)
    valid = union > 0
    if not valid.any():
        raise NoScoredClasses("every class has an empty union")
    per_class = np.full(cm.class_count, np.nan)
    per_class[valid] = tp[valid] / union[valid]
    return float(per_class[valid].mean()), [float(v) for v in per_class]


def pixel_accuracy(cm: ConfusionMatrix) -> float:
    total = cm.total
    if total == 0:
        raise NoScoredPixels("confusion matrix is empty")
    return float(np.trace(cm.counts)) / total


def band_width_px(width: int, height: int, band_fraction: float) -> int:
    """Boundary band width: a fraction of the image diagonal, at least 1."""
    return max(1, math.floor(band_fraction * math.hypot(width, height) + 0.5))


def boundary_miou(
    preds: Sequence[LabelMap],
    gts: Sequence[LabelMap],
    class_count: int,
    band_fraction: float = DEFAULT_BAND_FRACTION,
) -> float:
    """Mean IoU restricted to the union of pred/gt boundary bands.

    Intersections and unions accumulate per class across all images; the
    mean runs over classes whose accumulated union is non-empty.
    """
    if band_fraction <= 0:
        raise ValueError("band_fraction must be positive")
    if len(preds) != len(gts):
        raise DimensionMismatch("prediction/ground-truth counts differ")
    inter = np.zeros(class_count, dtype=np.int64)
    union = np.zeros(class_count, dtype=np.int64)
    for pred, gt in zip(preds, gts):
        scored = _scored(pred, gt)
        band_px = band_width_px(gt.width, gt.height, band_fraction)
        present = np.unique(
            np.concatenate([pred.labels[scored], gt.labels[scored]])
        )
        for cid in present:
            c = int(cid)
            if c >= class_count:
                raise LabelOutOfRange("label exceeds the configured class count")
            pred_mask = BinaryMask((pred.labels == c) & scored)
            gt_mask = BinaryMask((gt.labels == c) & scored)
            band = boundary_band(pred_mask, band_px).bits | boundary_band(
                gt_mask, band_px
            ).bits
            p_in = pred_mask.bits & band
            g_in = gt_mask.bits & band
            inter[c] += int(np.count_nonzero(p_in & g_in))
            union[c] += int(np.count_nonzero(p_in | g_in))
    valid = union > 0
    if not valid.any():
        raise NoScoredClasses("every class has an empty boundary-band union")
    return float((inter[valid] / union[valid]).mean())


def image_accuracy(preds: Sequence[LabelMap], gts: Sequence[LabelMap]) -> float:
    """Fraction of images whose dominant predicted foreground class is real.

    An image counts correct iff its largest-area predicted non-background
    class (over scored pixels) appears in the ground-truth class set; an
    all-background prediction is always incorrect.
    """
    if len(preds) != len(gts):
        raise DimensionMismatch("prediction/ground-truth counts differ")
    if not preds:
        return 0.0
    correct = 0
    for pred, gt in zip(preds, gts):
        scored = _scored(pred, gt)
        p = pred.labels[scored]
        p = p[p != 0]
        if p.size == 0:
            continue
        top = int(np.argmax(np.bincount(p)))
        gt_classes = set(int(v) for v in np.unique(gt.labels[scored]))
        if top in gt_classes:
            correct += 1
    return correct / len(preds)


def f_measure(
    preds: Sequence[LabelMap],
    gts: Sequence[LabelMap],
    beta_sq: float = DEFAULT_BETA_SQ,
) -> float:
    """Foreground F-measure, averaged over images.

    Both maps binarize to foreground (class > 0) vs background; F is 0
    whenever its denominator is 0.
    """
    if beta_sq <= 0:
        raise ValueError("beta_sq must be positive")
    if len(preds) != len(gts):
        raise DimensionMismatch("prediction/ground-truth counts differ")
    if not preds:
        return 0.0
    scores = []
    for pred, gt in zip(preds, gts):
        scored = _scored(pred, gt)
        fg_pred = (pred.labels > 0) & scored
        fg_gt = (gt.labels > 0) & scored
        tp = int(np.count_nonzero(fg_pred & fg_gt))
        fp = int(np.count_nonzero(fg_pred & ~fg_gt))
        fn = int(np.count_nonzero(~fg_pred & fg_gt))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        denom = beta_sq * precision + recall
        scores.append(
            (1.0 + beta_sq) * precision * recall / denom if denom > 0 else 0.0
        )
    return float(np.mean(scores))


@dataclass(frozen=True)
class CategoryHistogram:
    """Images bucketed by how many distinct foreground classes they hold."""

    buckets: tuple[int, int, int, int, int, int]  # 1, 2, 3, 4, 5, >5
    zero_count: int

    BUCKET_LABELS = ("1", "2", "3", "4", "5", ">5")


def category_stats(gts: Sequence[LabelMap]) -> CategoryHistogram:
    """Count distinct non-background, non-ignore classes per image."""
    buckets = [0] * 6
    zero = 0
    for gt in gts:
        n = len(gt.class_ids())
        if n == 0:
            zero += 1
        elif n <= 5:
            buckets[n - 1] += 1
        else:
            buckets[5] += 1
    return CategoryHistogram(tuple(buckets), zero)


def report_delta(baseline: EvalReport, refined: EvalReport) -> dict[str, float]:
    """Per-metric refined-minus-baseline, in percent, one-decimal rounding."""
    return {
        name: round((getattr(refined, name) - getattr(baseline, name)) * 100.0, 1)
        for name in _METRIC_NAMES
    }


def format_delta(value: float) -> str:
    return f"{value:+.1f}"


def evaluate(
    preds: Sequence[LabelMap],
    gts: Sequence[LabelMap],
    class_count: Optional[int] = None,
    band_fraction: float = DEFAULT_BAND_FRACTION,
    beta_sq: float = DEFAULT_BETA_SQ,
) -> EvalReport:
    """Compute every metric over paired maps and assemble a report."""
    if class_count is None:
        class_count = derive_class_count(list(preds) + list(gts))
    cm = confusion(preds, gts, class_count)
    mean_iou, per_class = miou(cm)
    return EvalReport(
        miou=mean_iou,
        b_miou=boundary_miou(preds, gts, class_count, band_fraction),
        pixel_acc=pixel_accuracy(cm),
        img_acc=image_accuracy(preds, gts),
        f_beta=f_measure(preds, gts, beta_sq),
        per_class_iou=tuple(per_class),
    )


def derive_class_count(maps: Sequence[LabelMap]) -> int:
    """Smallest class count covering every non-ignore label in the maps."""
    top = 0
    for m in maps:
        scored = m.labels[m.labels != m.ignore_id]
        if scored.size:
            top = max(top, int(scored.max()))
    return top + 1
