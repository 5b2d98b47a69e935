"""Synthetic scenes, a directly parameterized toy detector and its training loop.

The "detector" holds one classification logit per (anchor, class) and one
box delta ``(dx, dy, dw, dh)`` per anchor; there is no network. Boxes are
decoded as ``center = anchor_center + stride * (dx, dy)`` and
``size = anchor_size * exp(dw, dh)``, so decoded boxes are always valid.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .assign import AnchorSet, AssignConfig, Assignment, assign, make_anchor_set
from .cls_loss import ClsBatch, ClsConfig, focal_loss, hcra_c_gradient, hcra_c_loss, sigmoid
from .evaluation import ConsistencyStats, Match, average_precision, consistency_from_pairs, nms
from .geometry import iou, iou_matrix, xyxy_to_cxcywh
from .reg_loss import (EmaState, RegBatch, RegConfig, giou_baseline, hcra_r_gradient,
                       hcra_r_loss)

log = logging.getLogger(__name__)

LOSS_KINDS = ("hcral", "focal+giou", "ghmc+giou")


class DivergenceError(ArithmeticError):
    def __init__(self, step: int, what: str):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


@dataclass(frozen=True)
class SceneConfig:
    n_levels: int = 2
    gts_per_scene: int = 3
    canvas: float = 128.0
    num_classes: int = 2
    base_stride: float = 8.0
    anchor_scale: float = 4.0
    prior_prob: float = 0.5


@dataclass(frozen=True)
class DetectorParams:
    logits: np.ndarray  # (A, K)
    deltas: np.ndarray  # (A, 4)

    def copy(self) -> "DetectorParams":
        return DetectorParams(self.logits.copy(), self.deltas.copy())


@dataclass(frozen=True)
class SceneBatch:
    anchors: AnchorSet
    gt_boxes: np.ndarray
    gt_classes: np.ndarray
    num_classes: int
    params: DetectorParams
    rng_seed: int


def generate_scene(seed: int = 0, n_levels: int = 2, gts_per_scene: int = 3,
                   canvas: float = 128.0, num_classes: int = 2, base_stride: float = 8.0,
                   anchor_scale: float = 4.0, prior_prob: float = 0.5) -> SceneBatch:
    """Reproducible scene. GT ``i`` is sized around the anchors of level
    ``i % n_levels`` so that the GTs span several pyramid levels."""
    if n_levels < 1 or gts_per_scene < 1 or num_classes < 1:
        raise ValueError("n_levels, gts_per_scene and num_classes must be >= 1")
    if not 0.0 < prior_prob < 1.0:
        raise ValueError(f"prior_prob must be in (0, 1), got {prior_prob}")
    strides = [base_stride * 2 ** lvl for lvl in range(n_levels)]
    largest = 1.2 * anchor_scale * strides[-1] * math.sqrt(1.4)
    if canvas < largest or canvas // strides[-1] < 3:
        raise ValueError(f"canvas {canvas} too small for {n_levels} levels "
                         f"(needs >= {max(largest, 3 * strides[-1]):g})")
    if gts_per_scene > (canvas // strides[0]) ** 2 // 4:
        raise ValueError(f"canvas {canvas} too small for {gts_per_scene} ground truths")

    rng = np.random.default_rng(seed)
    anchors = make_anchor_set(canvas, strides, anchor_scale)
    boxes = np.zeros((gts_per_scene, 4))
    for i in range(gts_per_scene):
        side = anchor_scale * strides[i % n_levels] * rng.uniform(0.6, 1.2)
        aspect = math.exp(rng.uniform(math.log(0.7), math.log(1.4)))
        w, h = side * math.sqrt(aspect), side / math.sqrt(aspect)
        cx = rng.uniform(w / 2.0, canvas - w / 2.0)
        cy = rng.uniform(h / 2.0, canvas - h / 2.0)
        boxes[i] = (cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    classes = rng.integers(0, num_classes, size=gts_per_scene)
    logit0 = math.log(prior_prob / (1.0 - prior_prob))
    params = DetectorParams(np.full((len(anchors), num_classes), logit0),
                            np.zeros((len(anchors), 4)))
    return SceneBatch(anchors, boxes, classes, num_classes, params, seed)


def scene_from_config(cfg: SceneConfig, seed: int = 0) -> SceneBatch:
    return generate_scene(seed, cfg.n_levels, cfg.gts_per_scene, cfg.canvas,
                          cfg.num_classes, cfg.base_stride, cfg.anchor_scale, cfg.prior_prob)


def decode(anchor_boxes: np.ndarray, strides: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    a = xyxy_to_cxcywh(anchor_boxes)
    cx = a[:, 0] + strides * deltas[:, 0]
    cy = a[:, 1] + strides * deltas[:, 1]
    w = a[:, 2] * np.exp(deltas[:, 2])
    h = a[:, 3] * np.exp(deltas[:, 3])
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)


def decode_backward(anchor_boxes: np.ndarray, strides: np.ndarray, deltas: np.ndarray,
                    grad_boxes: np.ndarray) -> np.ndarray:
    """Chain rule from corner gradients ``(n, 4)`` to delta gradients."""
    a = xyxy_to_cxcywh(anchor_boxes)
    w = a[:, 2] * np.exp(deltas[:, 2])
    h = a[:, 3] * np.exp(deltas[:, 3])
    gx1, gy1, gx2, gy2 = grad_boxes.T
    return np.stack([strides * (gx1 + gx2), strides * (gy1 + gy2),
                     w * (gx2 - gx1) / 2.0, h * (gy2 - gy1) / 2.0], axis=1)


@dataclass(frozen=True)
class LossConfig:
    kind: str = "hcral"
    cls: ClsConfig = field(default_factory=ClsConfig)
    reg: RegConfig = field(default_factory=RegConfig)
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    reg_weight: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")


@dataclass(frozen=True)
class OptConfig:
    steps: int = 500
    lr: float = 0.05
    kind: str = "adam"  # "adam" | "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"optimizer kind must be 'adam' or 'sgd', got {self.kind!r}")


class _Optimizer:
    def __init__(self, cfg: OptConfig, params: DetectorParams):
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(params.logits), np.zeros_like(params.deltas)]
        self.v = [np.zeros_like(params.logits), np.zeros_like(params.deltas)]

    def step(self, params: DetectorParams, grads) -> None:
        cfg = self.cfg
        self.t += 1
        for i, (p, g) in enumerate(zip((params.logits, params.deltas), grads)):
            if cfg.kind == "sgd":
                p -= cfg.lr * g
                continue
            self.m[i] = cfg.beta1 * self.m[i] + (1 - cfg.beta1) * g
            self.v[i] = cfg.beta2 * self.v[i] + (1 - cfg.beta2) * g * g
            m_hat = self.m[i] / (1 - cfg.beta1 ** self.t)
            v_hat = self.v[i] / (1 - cfg.beta2 ** self.t)
            p -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def cls_targets(scene: SceneBatch, assignment: Assignment, boxes: np.ndarray):
    """One-vs-all targets and per-pair IoUs, both ``(A, K)``.

    The positive pair of an assigned anchor uses the IoU of its predicted box
    with its matched GT; every other pair uses the anchor's best IoU over all
    GTs.
    """
    n, k = len(scene.anchors), scene.num_classes
    p_star = np.zeros((n, k))
    best = iou_matrix(boxes, scene.gt_boxes).max(axis=1) if len(scene.gt_boxes) else np.zeros(n)
    ious = np.repeat(best[:, None], k, axis=1)
    pos = np.flatnonzero(assignment.gt_index >= 0)
    if pos.size:
        cls = assignment.gt_class[pos]
        p_star[pos, cls] = 1.0
        ious[pos, cls] = iou(boxes[pos], scene.gt_boxes[assignment.gt_index[pos]])
    return p_star, ious


@dataclass
class StepResult:
    cls_loss: float
    reg_loss: float
    grad_logits: np.ndarray
    grad_deltas: np.ndarray
    ema: EmaState
    mean_iou: float


def loss_and_grad(scene: SceneBatch, params: DetectorParams, assignment: Assignment,
                  loss_cfg: LossConfig, ema: EmaState) -> StepResult:
    boxes = decode(scene.anchors.boxes, scene.anchors.stride_per_anchor, params.deltas)
    p_star, ious = cls_targets(scene, assignment, boxes)
    batch = ClsBatch.from_logits(params.logits.ravel(), p_star.ravel(), ious.ravel())

    if loss_cfg.kind == "focal+giou":
        cls_loss, g_cls = focal_loss(batch, loss_cfg.focal_gamma, loss_cfg.focal_alpha)
    else:
        ccfg = loss_cfg.cls
        if loss_cfg.kind == "ghmc+giou":
            ccfg = replace(ccfg, use_omega=False, use_gate=False)
        cls_loss, w = hcra_c_loss(batch, ccfg)
        g_cls = hcra_c_gradient(batch, ccfg, weights=w)

    grad_deltas = np.zeros_like(params.deltas)
    pos = np.flatnonzero(assignment.gt_index >= 0)
    reg_loss, mean_iou = 0.0, float("nan")
    if pos.size:
        scores = sigmoid(params.logits[pos, assignment.gt_class[pos]])
        rb = RegBatch(boxes[pos], scene.gt_boxes[assignment.gt_index[pos]], scores)
        mean_iou = float(np.mean(iou(rb.pred, rb.gt)))
        if loss_cfg.kind == "hcral":
            reg_loss, w, ema = hcra_r_loss(rb, loss_cfg.reg, ema)
            g_box = hcra_r_gradient(rb, loss_cfg.reg, weights=w)
        else:
            reg_loss, g_box = giou_baseline(rb)
        reg_loss *= loss_cfg.reg_weight
        g_box = g_box * loss_cfg.reg_weight
        grad_deltas[pos] = decode_backward(scene.anchors.boxes[pos],
                                           scene.anchors.stride_per_anchor[pos],
                                           params.deltas[pos], g_box)
    return StepResult(cls_loss, reg_loss, g_cls.reshape(params.logits.shape), grad_deltas,
                      ema, mean_iou)


def predicted_boxes(scene: SceneBatch, params: DetectorParams) -> np.ndarray:
    return decode(scene.anchors.boxes, scene.anchors.stride_per_anchor, params.deltas)


def evaluate(scene: SceneBatch, params: DetectorParams, iou_threshold: float = 0.5,
             nms_threshold: float = 0.6):
    """Per-class NMS then AP at one IoU threshold, averaged over the classes
    present in the scene. Returns ``(ap, matches)`` with matches as
    ``(class, Match)`` pairs; ``Match.det`` is an anchor index."""
    boxes = predicted_boxes(scene, params)
    scores = sigmoid(params.logits)
    aps, matches = [], []
    for c in np.unique(scene.gt_classes):
        keep = nms(boxes, scores[:, c], nms_threshold)
        gts = scene.gt_boxes[scene.gt_classes == c]
        ap, found = average_precision(boxes[keep], scores[keep, c], gts, iou_threshold)
        gt_ids = np.flatnonzero(scene.gt_classes == c)
        aps.append(ap)
        matches += [(int(c), Match(int(keep[m.det]), int(gt_ids[m.gt]), m.iou)) for m in found]
    return (float(np.mean(aps)) if aps else 0.0), matches


def consistency_stats(scene: SceneBatch, params: DetectorParams, assignment: Assignment,
                      alpha: float = -0.1) -> ConsistencyStats:
    """Score/IoU agreement over the assigned positives."""
    pos = np.flatnonzero(assignment.gt_index >= 0)
    if pos.size < 2:
        raise ValueError("need at least 2 positive samples")
    boxes = predicted_boxes(scene, params)[pos]
    ious = iou(boxes, scene.gt_boxes[assignment.gt_index[pos]])
    scores = sigmoid(params.logits[pos, assignment.gt_class[pos]])
    return consistency_from_pairs(scores, ious, alpha)


@dataclass
class TrainReport:
    cls_loss: list[float] = field(default_factory=list)
    reg_loss: list[float] = field(default_factory=list)
    total_loss: list[float] = field(default_factory=list)
    mean_iou: list[float] = field(default_factory=list)
    final_mean_iou: float = float("nan")
    ap50: float = float("nan")
    pearson_r: float = float("nan")
    region1_fraction: float = float("nan")
    num_positive: int = 0
    wall_clock: float = 0.0
    params: DetectorParams | None = None
    assignment: Assignment | None = None

    @property
    def steps(self) -> int:
        return len(self.total_loss)


def train(scene: SceneBatch, loss_cfg: LossConfig = LossConfig(),
          assign_cfg: AssignConfig = AssignConfig(), opt_cfg: OptConfig = OptConfig()
          ) -> TrainReport:
    """Assign once on the initial predictions, then run ``opt_cfg.steps`` updates."""
    start = time.perf_counter()
    params = scene.params.copy()
    assignment = assign(scene.anchors, scene.gt_boxes, scene.gt_classes, assign_cfg,
                        pred_boxes=predicted_boxes(scene, params))
    for note in assignment.notes:
        log.info(note)
    opt = _Optimizer(opt_cfg, params)
    ema = EmaState(r=loss_cfg.reg.ema_init)
    report = TrainReport(num_positive=assignment.num_positive)

    for step in range(opt_cfg.steps):
        # overflow surfaces as a non-finite loss or gradient, checked below
        with np.errstate(over="ignore", invalid="ignore"):
            res = loss_and_grad(scene, params, assignment, loss_cfg, ema)
        total = res.cls_loss + res.reg_loss
        if not math.isfinite(total):
            raise DivergenceError(step, "loss")
        if not (np.all(np.isfinite(res.grad_logits)) and np.all(np.isfinite(res.grad_deltas))):
            raise DivergenceError(step, "gradient")
        report.cls_loss.append(res.cls_loss)
        report.reg_loss.append(res.reg_loss)
        report.total_loss.append(total)
        report.mean_iou.append(res.mean_iou)
        opt.step(params, (res.grad_logits, res.grad_deltas))
        ema = res.ema

    pos = np.flatnonzero(assignment.gt_index >= 0)
    if pos.size:
        boxes = predicted_boxes(scene, params)[pos]
        report.final_mean_iou = float(np.mean(
            iou(boxes, scene.gt_boxes[assignment.gt_index[pos]])))
    report.ap50, _ = evaluate(scene, params, 0.5)
    if pos.size >= 2:
        stats = consistency_stats(scene, params, assignment, loss_cfg.cls.alpha)
        report.pearson_r = stats.pearson_r
        report.region1_fraction = stats.region1_fraction
    report.params = params
    report.assignment = assignment
    report.wall_clock = time.perf_counter() - start
    return report
