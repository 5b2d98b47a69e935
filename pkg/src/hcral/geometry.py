"""Axis-aligned box geometry.

Boxes are corner encoded ``(x1, y1, x2, y2)`` with ``x1 <= x2`` and
``y1 <= y2``. Every measure below accepts either :class:`Box` instances
(and returns a Python float) or ``(N, 4)`` arrays (and returns an ``(N,)``
array, computed elementwise over rows).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

BoxLike = Union["Box", tuple, list, np.ndarray]


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 <= self.x2 and self.y1 <= self.y2):
            raise ValueError(f"box corners out of order: {self}")

    @classmethod
    def from_center_size(cls, cx: float, cy: float, w: float, h: float) -> "Box":
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)

    def to_center_size(self) -> tuple[float, float, float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0,
                self.x2 - self.x1, self.y2 - self.y1)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def translate(self, dx: float, dy: float) -> "Box":
        return Box(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=float)


@dataclass(frozen=True)
class EnclosureMeasure:
    iou: float
    giou: float
    center_distance_sq: float
    enclosing_diag_sq: float


def as_boxes(boxes) -> np.ndarray:
    """Stack boxes into a float ``(N, 4)`` array."""
    if isinstance(boxes, Box):
        return boxes.as_array()[None, :]
    if isinstance(boxes, (list, tuple)) and boxes and isinstance(boxes[0], Box):
        return np.stack([b.as_array() for b in boxes])
    arr = np.asarray(boxes, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError(f"expected (N, 4) boxes, got shape {arr.shape}")
    return arr


def _scalar_out(a, b, value: np.ndarray):
    if np.ndim(a) <= 1 and np.ndim(b) <= 1 and not (
        isinstance(a, (list, tuple)) and a and isinstance(a[0], Box)
    ):
        return float(value[0])
    return value


def box_area(boxes) -> np.ndarray:
    b = as_boxes(boxes)
    return (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])


def box_centers(boxes) -> np.ndarray:
    b = as_boxes(boxes)
    return np.stack([(b[:, 0] + b[:, 2]) / 2.0, (b[:, 1] + b[:, 3]) / 2.0], axis=1)


def cxcywh_to_xyxy(boxes) -> np.ndarray:
    b = np.asarray(boxes, dtype=float).reshape(-1, 4)
    half_w, half_h = b[:, 2] / 2.0, b[:, 3] / 2.0
    return np.stack([b[:, 0] - half_w, b[:, 1] - half_h,
                     b[:, 0] + half_w, b[:, 1] + half_h], axis=1)


def xyxy_to_cxcywh(boxes) -> np.ndarray:
    b = as_boxes(boxes)
    return np.stack([(b[:, 0] + b[:, 2]) / 2.0, (b[:, 1] + b[:, 3]) / 2.0,
                     b[:, 2] - b[:, 0], b[:, 3] - b[:, 1]], axis=1)


def _pair_terms(a: np.ndarray, b: np.ndarray):
    iw = np.clip(np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0]), 0.0, None)
    ih = np.clip(np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1]), 0.0, None)
    inter = iw * ih
    union = box_area(a) + box_area(b) - inter
    cw = np.maximum(a[:, 2], b[:, 2]) - np.minimum(a[:, 0], b[:, 0])
    ch = np.maximum(a[:, 3], b[:, 3]) - np.minimum(a[:, 1], b[:, 1])
    return inter, union, cw, ch


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num)
    ok = den > 0
    np.divide(num, den, out=out, where=ok)
    return out


def enclosure(a, b):
    """All pairwise measures at once.

    Returns an :class:`EnclosureMeasure` of floats for single boxes, or of
    ``(N,)`` arrays for stacked inputs.
    """
    A, B = np.broadcast_arrays(as_boxes(a), as_boxes(b))
    inter, union, cw, ch = _pair_terms(A, B)
    iou_v = _safe_ratio(inter, union)
    enc = cw * ch
    giou_v = np.where(enc > 0, iou_v - _safe_ratio(enc - union, enc), 0.0)
    ca, cb = box_centers(A), box_centers(B)
    rho_sq = ((ca - cb) ** 2).sum(axis=1)
    diag_sq = cw ** 2 + ch ** 2
    parts = [_scalar_out(a, b, v) for v in (iou_v, giou_v, rho_sq, diag_sq)]
    return EnclosureMeasure(*parts)


def iou(a, b):
    """Intersection over union; 0 when the union has zero area."""
    A, B = np.broadcast_arrays(as_boxes(a), as_boxes(b))
    inter, union, _, _ = _pair_terms(A, B)
    return _scalar_out(a, b, _safe_ratio(inter, union))


def giou(a, b):
    """Generalized IoU, in [-1, 1]. Returns 0 when the enclosing box has no area."""
    A, B = np.broadcast_arrays(as_boxes(a), as_boxes(b))
    inter, union, cw, ch = _pair_terms(A, B)
    enc = cw * ch
    value = np.where(enc > 0, _safe_ratio(inter, union) - _safe_ratio(enc - union, enc), 0.0)
    return _scalar_out(a, b, value)


def giou_loss(pred, target):
    """``1 - giou``, in [0, 2]."""
    value = 1.0 - np.asarray(giou(as_boxes(pred), as_boxes(target)))
    return _scalar_out(pred, target, value)


def center_distance(a, b):
    A, B = np.broadcast_arrays(as_boxes(a), as_boxes(b))
    d = np.sqrt(((box_centers(A) - box_centers(B)) ** 2).sum(axis=1))
    return _scalar_out(a, b, d)


def diou_penalty(a, b, squared: bool = True):
    """Center-offset penalty ``rho**2 / c**2``.

    ``rho`` is the distance between box centers and ``c`` the diagonal of the
    smallest enclosing box. With ``squared=False`` the numerator is the plain
    distance ``rho`` (not scale invariant). Returns 0 when ``c`` is 0.
    """
    A, B = np.broadcast_arrays(as_boxes(a), as_boxes(b))
    _, _, cw, ch = _pair_terms(A, B)
    rho_sq = ((box_centers(A) - box_centers(B)) ** 2).sum(axis=1)
    num = rho_sq if squared else np.sqrt(rho_sq)
    return _scalar_out(a, b, _safe_ratio(num, cw ** 2 + ch ** 2))


def iou_matrix(a, b) -> np.ndarray:
    """``(N, M)`` IoU between every row of ``a`` and every row of ``b``."""
    A, B = as_boxes(a), as_boxes(b)
    lt = np.maximum(A[:, None, :2], B[None, :, :2])
    rb = np.minimum(A[:, None, 2:], B[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    union = box_area(A)[:, None] + box_area(B)[None, :] - inter
    return _safe_ratio(inter, union)


def center_distance_matrix(a, b) -> np.ndarray:
    ca, cb = box_centers(a), box_centers(b)
    return np.sqrt(((ca[:, None, :] - cb[None, :, :]) ** 2).sum(axis=2))


def giou_gradient(pred, target):
    """Analytic partials of ``1 - giou(pred, target)`` w.r.t. the pred corners.

    Returns a length-4 array for single boxes, else ``(N, 4)``. The loss is
    ``2 - I/U - U/C`` and piecewise smooth. At a coordinate tie between pred
    and target (shared edge) the pred coordinate is taken as the active
    argument of every ``min``/``max`` it appears in: the intersection uses
    the derivative from the inward side, the enclosing box the one from the
    outward side. With this choice ``pred == target`` returns exactly zero,
    a valid subgradient at the minimum. Where the intersection width or
    height is exactly 0 the clip contributes nothing. ``pred`` must have
    positive area.
    """
    P, T = np.broadcast_arrays(as_boxes(pred), as_boxes(target))
    px1, py1, px2, py2 = P.T
    tx1, ty1, tx2, ty2 = T.T
    pw, ph = px2 - px1, py2 - py1
    if np.any(pw * ph <= 0):
        raise ValueError("giou_gradient needs pred boxes with positive area")

    iw_raw = np.minimum(px2, tx2) - np.maximum(px1, tx1)
    ih_raw = np.minimum(py2, ty2) - np.maximum(py1, ty1)
    iw, ih = np.clip(iw_raw, 0.0, None), np.clip(ih_raw, 0.0, None)
    inter = iw * ih
    union = pw * ph + (tx2 - tx1) * (ty2 - ty1) - inter
    cw = np.maximum(px2, tx2) - np.minimum(px1, tx1)
    ch = np.maximum(py2, ty2) - np.minimum(py1, ty1)
    enc = cw * ch

    x_open, y_open = iw_raw > 0, ih_raw > 0
    # d(iw)/d(px1, px2), d(ih)/d(py1, py2)
    d_iw = np.stack([np.where(x_open & (px1 >= tx1), -1.0, 0.0),
                     np.where(x_open & (px2 <= tx2), 1.0, 0.0)], axis=1)
    d_ih = np.stack([np.where(y_open & (py1 >= ty1), -1.0, 0.0),
                     np.where(y_open & (py2 <= ty2), 1.0, 0.0)], axis=1)
    d_inter = np.stack([d_iw[:, 0] * ih, d_ih[:, 0] * iw,
                        d_iw[:, 1] * ih, d_ih[:, 1] * iw], axis=1)
    d_area = np.stack([-ph, -pw, ph, pw], axis=1)
    d_union = d_area - d_inter
    d_cw = np.stack([np.where(px1 <= tx1, -1.0, 0.0), np.where(px2 >= tx2, 1.0, 0.0)], axis=1)
    d_ch = np.stack([np.where(py1 <= ty1, -1.0, 0.0), np.where(py2 >= ty2, 1.0, 0.0)], axis=1)
    d_enc = np.stack([d_cw[:, 0] * ch, d_ch[:, 0] * cw,
                      d_cw[:, 1] * ch, d_ch[:, 1] * cw], axis=1)

    u, c, i = union[:, None], enc[:, None], inter[:, None]
    grad = -(d_inter * u - i * d_union) / u ** 2 - (d_union * c - u * d_enc) / c ** 2
    if np.ndim(pred) <= 1 and np.ndim(target) <= 1:
        return grad[0]
    return grad


def giou_kink_margin(pred, target) -> np.ndarray:
    """Distance (in coordinate units) to the nearest non-smooth configuration
    of the GIoU loss: a coordinate tie or a touching intersection edge."""
    P, T = np.broadcast_arrays(as_boxes(pred), as_boxes(target))
    gaps = np.stack([
        P[:, 0] - T[:, 0], P[:, 1] - T[:, 1], P[:, 2] - T[:, 2], P[:, 3] - T[:, 3],
        P[:, 2] - T[:, 0], T[:, 2] - P[:, 0], P[:, 3] - T[:, 1], T[:, 3] - P[:, 1],
    ], axis=1)
    return np.abs(gaps).min(axis=1)
