"""Positive/negative anchor assignment: ATSS and its expanded variant EATSS.

ATSS picks, per ground truth, the ``k`` anchors per pyramid level closest to
the GT center, thresholds their IoUs at ``mean + std`` and keeps those whose
center falls inside the GT. EATSS then adds up to ``l`` more anchors per GT,
drawn from anchors no farther from the GT center than its farthest ATSS
positive and ranked by predicted-box IoU minus normalized center distance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import as_boxes, box_centers, center_distance_matrix, iou_matrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnchorSet:
    """Anchors of all pyramid levels, stored flat with a level index per row."""

    boxes: np.ndarray
    level: np.ndarray
    strides: tuple[float, ...]

    def __post_init__(self):
        if self.boxes.shape[0] != self.level.shape[0]:
            raise ValueError("boxes and level ids differ in length")
        for lvl in range(len(self.strides)):
            if not np.any(self.level == lvl):
                raise ValueError(f"pyramid level {lvl} has no anchors")

    def __len__(self) -> int:
        return int(self.boxes.shape[0])

    @property
    def n_levels(self) -> int:
        return len(self.strides)

    @property
    def centers(self) -> np.ndarray:
        return box_centers(self.boxes)

    def level_indices(self, lvl: int) -> np.ndarray:
        return np.flatnonzero(self.level == lvl)

    @property
    def stride_per_anchor(self) -> np.ndarray:
        return np.asarray(self.strides, dtype=float)[self.level]


def make_anchor_set(canvas: float, strides: Sequence[float], scale: float = 4.0) -> AnchorSet:
    """One square anchor of side ``scale * stride`` per grid cell per level."""
    boxes, level = [], []
    for lvl, stride in enumerate(strides):
        n = int(canvas // stride)
        if n < 1:
            raise ValueError(f"canvas {canvas} too small for stride {stride}")
        c = (np.arange(n) + 0.5) * stride
        cy, cx = np.meshgrid(c, c, indexing="ij")
        half = scale * stride / 2.0
        boxes.append(np.stack([cx.ravel() - half, cy.ravel() - half,
                               cx.ravel() + half, cy.ravel() + half], axis=1))
        level.append(np.full(n * n, lvl))
    return AnchorSet(np.concatenate(boxes), np.concatenate(level), tuple(float(s) for s in strides))


@dataclass(frozen=True)
class AssignConfig:
    k: int = 9
    l: int = 3
    mode: str = "eatss"  # "atss" | "eatss"
    # Which box the ranking IoU is measured on: "pred" or "anchor".
    rank_iou: str = "pred"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.l < 0:
            raise ValueError(f"l must be >= 0, got {self.l}")
        if self.mode not in ("atss", "eatss"):
            raise ValueError(f"mode must be 'atss' or 'eatss', got {self.mode!r}")
        if self.rank_iou not in ("pred", "anchor"):
            raise ValueError(f"rank_iou must be 'pred' or 'anchor', got {self.rank_iou!r}")


@dataclass
class Assignment:
    """Per-anchor labels. ``gt_index`` is -1 for negatives."""

    gt_index: np.ndarray
    gt_class: np.ndarray
    dis_f: np.ndarray = field(default_factory=lambda: np.zeros(0))
    expanded: dict[int, list[int]] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def positive(self) -> dict[int, tuple[int, int]]:
        idx = np.flatnonzero(self.gt_index >= 0)
        return {int(a): (int(self.gt_index[a]), int(self.gt_class[a])) for a in idx}

    @property
    def negative(self) -> frozenset[int]:
        return frozenset(int(a) for a in np.flatnonzero(self.gt_index < 0))

    @property
    def positive_mask(self) -> np.ndarray:
        return self.gt_index >= 0

    @property
    def num_positive(self) -> int:
        return int(np.sum(self.gt_index >= 0))


def _empty(n_anchors: int, n_gts: int) -> Assignment:
    return Assignment(np.full(n_anchors, -1), np.full(n_anchors, -1), np.full(n_gts, np.nan))


def atss_candidates(anchors: AnchorSet, gt_boxes, k: int) -> np.ndarray:
    """``(G, A)`` mask of the ``k`` closest anchors per level for each GT."""
    gts = as_boxes(gt_boxes)
    dist = center_distance_matrix(anchors.boxes, gts)
    mask = np.zeros((gts.shape[0], len(anchors)), dtype=bool)
    for lvl in range(anchors.n_levels):
        idx = anchors.level_indices(lvl)
        if k > idx.size:
            raise ValueError(f"k={k} exceeds the {idx.size} anchors on level {lvl}")
        for g in range(gts.shape[0]):
            order = np.argsort(dist[idx, g], kind="stable")[:k]
            mask[g, idx[order]] = True
    return mask


def atss_assign(anchors: AnchorSet, gt_boxes, gt_classes, cfg: AssignConfig = AssignConfig()
                ) -> Assignment:
    gts = as_boxes(gt_boxes) if len(gt_boxes) else np.zeros((0, 4))
    n_gts = gts.shape[0]
    if n_gts == 0:
        return _empty(len(anchors), 0)
    classes = np.asarray(gt_classes, dtype=int)
    ious = iou_matrix(anchors.boxes, gts)
    cand = atss_candidates(anchors, gts, cfg.k)
    centers = anchors.centers

    pos = np.zeros_like(cand)
    for g in range(n_gts):
        cand_ious = ious[cand[g], g]
        ddof = 1 if cand_ious.size > 1 else 0
        thr = cand_ious.mean() + cand_ious.std(ddof=ddof)
        x1, y1, x2, y2 = gts[g]
        inside = ((centers[:, 0] > x1) & (centers[:, 0] < x2)
                  & (centers[:, 1] > y1) & (centers[:, 1] < y2))
        pos[g] = cand[g] & (ious[:, g] >= thr) & inside

    claimed = np.where(pos.T, ious, -np.inf)
    best = np.argmax(claimed, axis=1)
    has = pos.any(axis=0)
    out = _empty(len(anchors), n_gts)
    out.gt_index = np.where(has, best, -1)
    out.gt_class = np.where(has, classes[best], -1)
    for g in range(n_gts):
        if not np.any(out.gt_index == g):
            out.notes.append(f"gt {g}: no ATSS positive")
    return out


def rank_score(anchor, gt, dis_f: float, pred_box=None, rank_iou: str = "pred"):
    """Expansion priority: IoU with the GT minus center distance over ``dis_f``.

    Accepts single boxes or stacked ``(N, 4)`` anchors/preds against one GT.
    """
    if dis_f <= 0:
        raise ValueError(f"dis_f must be > 0, got {dis_f}")
    a = as_boxes(anchor)
    g = as_boxes(gt)
    box = a if rank_iou == "anchor" or pred_box is None else as_boxes(pred_box)
    ov = iou_matrix(box, g)[:, 0]
    dist = center_distance_matrix(a, g)[:, 0]
    score = ov - dist / dis_f
    return float(score[0]) if np.ndim(anchor) <= 1 and not isinstance(anchor, list) else score


def eatss_assign(anchors: AnchorSet, gt_boxes, gt_classes, cfg: AssignConfig = AssignConfig(),
                 scores: Optional[np.ndarray] = None, pred_boxes=None) -> Assignment:
    """ATSS followed by up to ``cfg.l`` extra positives per GT.

    ``pred_boxes`` (per anchor) feed the ranking IoU when ``cfg.rank_iou`` is
    "pred"; without them the anchor boxes are used. ``scores`` is accepted for
    interface symmetry with the training loop and does not enter the rank.
    """
    base = atss_assign(anchors, gt_boxes, gt_classes, cfg)
    if cfg.l == 0 or len(gt_boxes) == 0:
        return base
    gts = as_boxes(gt_boxes)
    classes = np.asarray(gt_classes, dtype=int)
    preds = anchors.boxes if pred_boxes is None else as_boxes(pred_boxes)
    dist = center_distance_matrix(anchors.boxes, gts)

    out = Assignment(base.gt_index.copy(), base.gt_class.copy(),
                     np.full(gts.shape[0], np.nan), {}, list(base.notes))
    for g in range(gts.shape[0]):
        own = np.flatnonzero(base.gt_index == g)
        if own.size == 0:
            out.notes.append(f"gt {g}: no expansion, no ATSS positives to bound the search")
            continue
        dis_f = float(dist[own, g].max())
        out.dis_f[g] = dis_f
        if dis_f <= 0:
            out.notes.append(f"gt {g}: no expansion, zero search radius")
            continue
        free = np.flatnonzero((out.gt_index < 0) & (dist[:, g] <= dis_f))
        if free.size == 0:
            out.expanded[g] = []
            continue
        score = rank_score(anchors.boxes[free], gts[g], dis_f, preds[free], cfg.rank_iou)
        order = np.lexsort((free, -score))[: cfg.l]
        picked = free[order]
        out.gt_index[picked] = g
        out.gt_class[picked] = classes[g]
        out.expanded[g] = [int(a) for a in picked]
    for note in out.notes:
        log.debug(note)
    return out


def assign(anchors: AnchorSet, gt_boxes, gt_classes, cfg: AssignConfig = AssignConfig(),
           pred_boxes=None) -> Assignment:
    if cfg.mode == "atss":
        return atss_assign(anchors, gt_boxes, gt_classes, cfg)
    return eatss_assign(anchors, gt_boxes, gt_classes, cfg, pred_boxes=pred_boxes)


def assignment_rows(anchors: AnchorSet, gt_boxes, assignment: Assignment) -> list[dict]:
    """Per-anchor diagnostics: label, matched GT, IoU and center distance to it.

    Negatives report their best-overlap GT.
    """
    gts = as_boxes(gt_boxes) if len(gt_boxes) else np.zeros((0, 4))
    centers = anchors.centers
    rows = []
    if gts.shape[0]:
        ious = iou_matrix(anchors.boxes, gts)
        dist = center_distance_matrix(anchors.boxes, gts)
    for a in range(len(anchors)):
        g = int(assignment.gt_index[a])
        ref = g if g >= 0 else (int(np.argmax(ious[a])) if gts.shape[0] else -1)
        rows.append({
            "anchor": a,
            "level": int(anchors.level[a]),
            "cx": float(centers[a, 0]),
            "cy": float(centers[a, 1]),
            "label": "pos" if g >= 0 else "neg",
            "gt": g,
            "cls": int(assignment.gt_class[a]),
            "iou": float(ious[a, ref]) if ref >= 0 else 0.0,
            "distance": float(dist[a, ref]) if ref >= 0 else float("nan"),
        })
    return rows
