"""Confusion matrices, per-class IoU, and reprojected multi-view 2D mIoU."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .fusion import UNOBSERVED
from .mesh import TriangleMesh, UNLABELED
from .render import BACKGROUND, render


@dataclass
class ConfusionMatrix:
    """Rows are ground truth, columns are prediction.

    ignored counts samples skipped outright (gt in the ignore set).
    missed counts per gt class the samples whose prediction was UNOBSERVED;
    the default mIoU ignores them, strict mode charges them as false
    negatives.
    """

    counts: np.ndarray    # (C, C) int64
    ignored: int = 0
    missed: np.ndarray | None = None  # (C,) int64

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.missed is None:
            self.missed = np.zeros(len(self.counts), dtype=np.int64)
        else:
            self.missed = np.asarray(self.missed, dtype=np.int64)

    @property
    def class_count(self):
        return len(self.counts)

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(counts=self.counts + other.counts,
                               ignored=self.ignored + other.ignored,
                               missed=self.missed + other.missed)


def confusion(pred, gt, class_count: int, ignore=(UNLABELED,)) -> ConfusionMatrix:
    """Count (gt, pred) pairs into a class_count x class_count matrix.

    Samples whose gt is in the ignore set are skipped entirely; samples
    with an UNOBSERVED prediction are tallied per gt class in missed.
    """
    pred = np.asarray(pred).reshape(-1).astype(np.int64)
    gt = np.asarray(gt).reshape(-1).astype(np.int64)
    if pred.shape != gt.shape:
        raise ValueError("pred and gt must have equal length")
    ignore = set(int(i) for i in ignore)

    keep = ~np.isin(gt, list(ignore)) if ignore else np.ones(len(gt), dtype=bool)
    ignored = int(len(gt) - keep.sum())
    pred, gt = pred[keep], gt[keep]

    if gt.size and (gt.min() < 0 or gt.max() >= class_count):
        bad = int(gt.min()) if gt.min() < 0 else int(gt.max())
        raise ValueError(f"ground-truth label {bad} outside [0, {class_count})")
    if pred.size and pred.max() >= class_count:
        raise ValueError(f"predicted label {int(pred.max())} outside [0, {class_count})")
    if pred.size and pred.min() < 0 and pred[pred < 0].min() < UNOBSERVED:
        raise ValueError("negative prediction other than UNOBSERVED")

    unobs = pred == UNOBSERVED
    missed = np.bincount(gt[unobs], minlength=class_count)
    pred, gt = pred[~unobs], gt[~unobs]
    counts = np.bincount(gt * class_count + pred,
                         minlength=class_count * class_count
                         ).reshape(class_count, class_count)
    return ConfusionMatrix(counts=counts, ignored=ignored, missed=missed)


def miou(cm: ConfusionMatrix, strict_unobserved: bool = False):
    """Per-class IoU (NaN where a class never occurs) and their mean.

    IoU_c = TP / (TP + FP + FN). strict_unobserved charges UNOBSERVED
    predictions as false negatives of the ground-truth class instead of
    ignoring them.
    """
    counts = cm.counts
    tp = np.diag(counts).astype(np.float64)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    if strict_unobserved:
        fn = fn + cm.missed
    denom = tp + fp + fn
    present = denom > 0
    if not present.any():
        raise ValueError("every class is empty; mIoU undefined")
    iou = np.full(cm.class_count, np.nan)
    iou[present] = tp[present] / denom[present]
    return iou, float(iou[present].mean())


def reprojected_2d_miou(mesh: TriangleMesh, fused_labels, views,
                        class_count: int, strict_unobserved: bool = False):
    """Multi-view 2D mIoU of fused labels reprojected into the views.

    Each view is rasterized once; the predicted label image substitutes
    fused labels for ground truth at the winning vertex of every pixel, so
    it equals a re-render with swapped labels. One confusion matrix
    aggregates all views.
    """
    views = list(views)
    if not views:
        raise ValueError("no views to evaluate")
    fused_labels = np.asarray(fused_labels, dtype=np.int64).reshape(-1)
    if len(fused_labels) != mesh.vertex_count:
        raise ValueError("fused label count does not match vertex count")
    total = None
    for view in views:
        rendered = render(mesh, view)
        vid = rendered.vertex_ids
        covered = vid >= 0
        gt_img = rendered.label[covered]
        pred_img = fused_labels[vid[covered]]
        cm = confusion(pred_img, gt_img, class_count,
                       ignore=(UNLABELED, BACKGROUND))
        total = cm if total is None else total.merge(cm)
    _, mean = miou(total, strict_unobserved=strict_unobserved)
    return mean, total


def evaluation_report(pred_labels, gt_labels, class_count: int,
                      class_names=None, ignore=(UNLABELED,)) -> dict:
    """3D per-vertex evaluation in both UNOBSERVED treatment modes."""
    cm = confusion(pred_labels, gt_labels, class_count, ignore=ignore)
    iou, mean = miou(cm)
    iou_strict, mean_strict = miou(cm, strict_unobserved=True)
    if class_names is None:
        class_names = [f"class_{i}" for i in range(class_count)]
    per_class = [{"class": str(class_names[i]),
                  "iou": None if np.isnan(iou[i]) else float(iou[i]),
                  "iou_strict": None if np.isnan(iou_strict[i]) else float(iou_strict[i])}
                 for i in range(class_count)]
    pred = np.asarray(pred_labels).reshape(-1)
    return {
        "per_class": per_class,
        "mean_iou": mean,
        "mean_iou_strict": mean_strict,
        "coverage": float((pred != UNOBSERVED).sum() / max(1, len(pred))),
        "evaluated_samples": int(cm.counts.sum()),
        "ignored_samples": cm.ignored,
        "unobserved_samples": int(cm.missed.sum()),
        "modes": {"default": "unobserved ignored", "strict": "unobserved as errors"},
    }


def write_report(report: dict, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
