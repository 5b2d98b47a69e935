"""Detection evaluation: greedy NMS, single-threshold AP, score/IoU consistency."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import as_boxes, iou_matrix


def nms(boxes, scores, iou_threshold: float = 0.6) -> np.ndarray:
    """Greedy NMS; returns kept indices in descending score order.

    Ties in score keep the lower index first.
    """
    boxes = as_boxes(boxes) if len(boxes) else np.zeros((0, 4))
    scores = np.asarray(scores, dtype=float)
    order = np.lexsort((np.arange(scores.size), -scores))
    overlaps = iou_matrix(boxes, boxes)
    suppressed = np.zeros(scores.size, dtype=bool)
    keep = []
    for i in order:
        if suppressed[i]:
            continue
        keep.append(i)
        suppressed |= overlaps[i] > iou_threshold
    return np.asarray(keep, dtype=int)


@dataclass(frozen=True)
class Match:
    det: int
    gt: int
    iou: float


def match_detections(det_boxes, det_scores, gt_boxes, iou_threshold: float = 0.5):
    """Greedy score-ordered matching. Returns ``(tp_flags_in_score_order, order, matches)``."""
    det_scores = np.asarray(det_scores, dtype=float)
    order = np.lexsort((np.arange(det_scores.size), -det_scores))
    n_gt = len(gt_boxes)
    if det_scores.size == 0:
        return np.zeros(0, dtype=bool), order, []
    if n_gt == 0:
        return np.zeros(det_scores.size, dtype=bool), order, []
    overlaps = iou_matrix(as_boxes(det_boxes), as_boxes(gt_boxes))
    taken = np.zeros(n_gt, dtype=bool)
    tp = np.zeros(det_scores.size, dtype=bool)
    matches = []
    for rank, d in enumerate(order):
        row = np.where(taken, -1.0, overlaps[d])
        g = int(np.argmax(row))
        if row[g] >= iou_threshold:
            taken[g] = True
            tp[rank] = True
            matches.append(Match(int(d), g, float(overlaps[d, g])))
    return tp, order, matches


def average_precision(det_boxes, det_scores, gt_boxes, iou_threshold: float = 0.5):
    """All-point interpolated AP for one class. Returns ``(ap, matches)``."""
    n_gt = len(gt_boxes)
    tp, _, matches = match_detections(det_boxes, det_scores, gt_boxes, iou_threshold)
    if n_gt == 0 or tp.size == 0:
        return 0.0, matches
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, tp.size + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1])), matches


def pearson(x, y) -> float:
    """Pearson correlation; NaN when either input has zero variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx, dy = x - x.mean(), y - y.mean()
    den = np.sqrt(np.sum(dx * dx) * np.sum(dy * dy))
    if den == 0:
        return float("nan")
    return float(np.clip(np.sum(dx * dy) / den, -1.0, 1.0))


@dataclass(frozen=True)
class ConsistencyStats:
    pearson_r: float
    region1_fraction: float
    region2_fraction: float


def consistency_from_pairs(scores, ious, alpha: float) -> ConsistencyStats:
    """Region 1: ``s - iou + alpha >= 0`` (score above the shifted line)."""
    scores = np.asarray(scores, dtype=float)
    ious = np.asarray(ious, dtype=float)
    if scores.size < 2:
        raise ValueError("need at least 2 positive samples")
    above = scores - ious + alpha >= 0
    frac = float(np.mean(above))
    return ConsistencyStats(pearson(scores, ious), frac, 1.0 - frac)
