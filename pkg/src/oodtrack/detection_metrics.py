"""Pixel-level and segment-level OOD segmentation metrics.

Pixel level: area under the precision-recall curve and the false positive
rate at 95% true positive rate, computed over ROI pixels only (VOID pixels
never enter any metric). Segment level: adjusted sIoU based TP/FN/FP counts,
F1 per detection threshold kappa and its average over the kappa grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyGt, MissingMetadata, NoNegatives, NoPositives
from .model import OOD, NOT_OOD, FrameTruth, ScoreMap, Segment

KAPPA_GRID = tuple(np.round(np.arange(25, 80, 5) / 100.0, 2))

DEPTH_BINS = ((0.0, 4.0), (4.0, 8.0), (8.0, 12.0), (12.0, 16.0), (16.0, 20.0), (20.0, 40.0), (40.0, 65.0))


@dataclass
class PixelEvalResult:
    auprc: float
    fpr95: float
    curve: list[tuple[float, float, float, float]]  # (threshold, precision, recall, fpr)


@dataclass
class SegmentEvalResult:
    per_kappa: list[tuple[float, int, int, int, float]]  # (kappa, tp, fn, fp, f1)
    f1_bar: float


def pixel_metrics(
    scores: list[ScoreMap],
    truths: list[FrameTruth],
    instances: set[tuple[int, int]] | None = None,
) -> PixelEvalResult:
    """PR curve, AuPRC (trapezoidal over recall) and FPR at TPR >= 0.95.

    When `instances` is given (pairs of (frame index, instance id)), only
    those objects' pixels count as positives and the remaining OOD pixels are
    excluded from the evaluation entirely.
    """
    s_parts, y_parts = [], []
    for i, (score, truth) in enumerate(zip(scores, truths)):
        roi = truth.roi
        keep = roi.copy()
        pos = truth.ood_mask
        if instances is not None:
            sel = np.zeros_like(pos)
            for frame_index, instance_id in instances:
                if frame_index == i:
                    sel |= truth.instance == instance_id
            keep &= (truth.semantic == NOT_OOD) | sel
            pos = sel
        s_parts.append(score.values[keep])
        y_parts.append(pos[keep])
    s = np.concatenate(s_parts)
    y = np.concatenate(y_parts)
    p_total = int(y.sum())
    n_total = int(y.size - p_total)
    if p_total == 0:
        raise NoPositives("pixel metrics need at least one OOD pixel in the ROI")
    if n_total == 0:
        raise NoNegatives("pixel metrics need at least one NOT_OOD pixel in the ROI")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order].astype(np.int64)
    # cut points after each distinct score value (prediction: score >= value)
    distinct_last = np.flatnonzero(np.diff(s_sorted) != 0)
    cuts = np.concatenate([distinct_last, [s.size - 1]])
    tp = np.cumsum(y_sorted)[cuts]
    total = cuts + 1
    fp = total - tp
    precision = tp / total
    recall = tp / p_total
    fpr = fp / n_total
    thresholds = s_sorted[cuts]

    rec_pts = np.concatenate([[0.0], recall])
    prec_pts = np.concatenate([[precision[0]], precision])
    auprc = float(np.trapezoid(prec_pts, rec_pts))
    idx95 = int(np.argmax(recall >= 0.95))
    fpr95 = float(fpr[idx95])
    curve = [
        (float(t), float(p), float(r), float(f))
        for t, p, r, f in zip(thresholds, precision, recall, fpr)
    ]
    return PixelEvalResult(auprc=auprc, fpr95=fpr95, curve=curve)


def adjusted_siou(
    gt_pixels: np.ndarray, pred_segs: list[Segment], other_gt_pixels: np.ndarray
) -> float:
    """Ground-truth-side IoU with other objects' pixels removed from the union.

    gt_pixels / other_gt_pixels are flat pixel indices. The prediction side is
    the union of all predicted segments that intersect the object.
    """
    gt = np.asarray(gt_pixels, dtype=np.int64)
    if gt.size == 0:
        raise EmptyGt("adjusted sIoU of an empty ground-truth object")
    hits = [
        seg.flat_indices()
        for seg in pred_segs
        if np.intersect1d(gt, seg.flat_indices(), assume_unique=True).size > 0
    ]
    if not hits:
        return 0.0
    pred_union = np.unique(np.concatenate(hits))
    inter = np.intersect1d(gt, pred_union, assume_unique=True).size
    union = np.union1d(gt, pred_union)
    union = np.setdiff1d(union, np.asarray(other_gt_pixels, dtype=np.int64), assume_unique=True)
    return inter / union.size


def _frame_gt_sets(truth: FrameTruth) -> dict[int, np.ndarray]:
    flat_instance = truth.instance.ravel()
    return {
        instance_id: np.flatnonzero(flat_instance == instance_id)
        for instance_id in truth.instance_ids()
    }


def segment_metrics(
    pred_frames: list[list[Segment]],
    truths: list[FrameTruth],
    kappa_grid=KAPPA_GRID,
    instances: set[tuple[int, int]] | None = None,
) -> SegmentEvalResult:
    """Per-kappa TP/FN/FP counts, F1 and its mean over the kappa grid.

    A ground-truth object is TP at kappa iff its adjusted sIoU exceeds kappa;
    a predicted segment is FP iff its OOD precision is at most kappa. With an
    `instances` restriction, only those objects are scored and predicted
    segments count only if they best-overlap a selected object or overlap no
    ground truth at all.
    """
    sious: list[float] = []
    precisions: list[float] = []
    for i, (segs, truth) in enumerate(zip(pred_frames, truths)):
        gt_sets = _frame_gt_sets(truth)
        ood_flat = np.flatnonzero(truth.ood_mask.ravel())
        for instance_id, gt in gt_sets.items():
            if instances is not None and (i, instance_id) not in instances:
                continue
            other = np.setdiff1d(ood_flat, gt, assume_unique=True)
            sious.append(adjusted_siou(gt, segs, other))
        for seg in segs:
            flat = seg.flat_indices()
            if instances is not None:
                best = _best_overlap_instance(flat, gt_sets)
                if best is not None and (i, best) not in instances:
                    continue
            inter = np.intersect1d(flat, ood_flat, assume_unique=True).size
            precisions.append(inter / flat.size)

    siou_arr = np.asarray(sious)
    prec_arr = np.asarray(precisions)
    per_kappa = []
    for kappa in kappa_grid:
        tp = int(np.sum(siou_arr > kappa))
        fn = siou_arr.size - tp
        fp = int(np.sum(prec_arr <= kappa))
        denom = 2 * tp + fn + fp
        f1 = 2 * tp / denom if denom > 0 else 1.0
        per_kappa.append((float(kappa), tp, fn, fp, f1))
    f1_bar = float(np.mean([row[4] for row in per_kappa]))
    return SegmentEvalResult(per_kappa=per_kappa, f1_bar=f1_bar)


def _best_overlap_instance(flat: np.ndarray, gt_sets: dict[int, np.ndarray]) -> int | None:
    best_id, best_count = None, 0
    for instance_id in sorted(gt_sets):
        count = np.intersect1d(flat, gt_sets[instance_id], assume_unique=True).size
        if count > best_count:
            best_id, best_count = instance_id, count
    return best_id


def depth_bin(depth: float) -> int | None:
    """Index into DEPTH_BINS of an object's minimum depth; half-open (lo, hi]."""
    for idx, (lo, hi) in enumerate(DEPTH_BINS):
        if lo < depth <= hi:
            return idx
    return None


def group_gt_objects(
    truths: list[FrameTruth], group_by: str
) -> dict[str, set[tuple[int, int]]]:
    """Group (frame index, instance id) pairs by class id or by depth bin."""
    groups: dict[str, set[tuple[int, int]]] = {}
    for i, truth in enumerate(truths):
        for instance_id in truth.instance_ids():
            if group_by == "class":
                key = f"class:{truth.instance_class(instance_id)}"
            elif group_by == "depth":
                depth = truth.instance_min_depth(instance_id)
                if depth is None:
                    raise MissingMetadata("depth grouping requires depth maps")
                idx = depth_bin(depth)
                if idx is None:
                    continue
                lo, hi = DEPTH_BINS[idx]
                key = f"depth:({lo:g},{hi:g}]"
            else:
                raise ValueError(f"unknown grouping {group_by!r}")
            groups.setdefault(key, set()).add((i, instance_id))
    return groups


def grouped_report(
    scores: list[ScoreMap],
    pred_frames: list[list[Segment]],
    truths: list[FrameTruth],
    group_by: str,
    kappa_grid=KAPPA_GRID,
) -> dict[str, dict]:
    """Pixel and segment metrics restricted to each class or depth-bin group."""
    out = {}
    for key, members in sorted(group_gt_objects(truths, group_by).items()):
        seg_res = segment_metrics(pred_frames, truths, kappa_grid, instances=members)
        try:
            pix_res = pixel_metrics(scores, truths, instances=members)
        except (NoPositives, NoNegatives):
            pix_res = None
        out[key] = {"pixel": pix_res, "segment": seg_res}
    return out
