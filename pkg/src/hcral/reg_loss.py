"""Hybrid regression loss (HCRA-R).

GIoU loss on positive samples, scaled per sample by the detached product

    w_i = r_i * CF_i

``CF_i = t * exp(R_diou) * iou`` focuses ordinary-quality and off-center
boxes, and ``r_i`` is a score/IoU consistency coefficient divided by its
exponential running mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .geometry import Box, as_boxes, diou_penalty, giou, giou_gradient, iou


@dataclass(frozen=True)
class RegSample:
    pred_box: Box
    gt_box: Box
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class RegBatch:
    pred: np.ndarray
    gt: np.ndarray
    score: np.ndarray

    @classmethod
    def from_samples(cls, samples: Sequence[RegSample]) -> "RegBatch":
        return cls(as_boxes([s.pred_box for s in samples]),
                   as_boxes([s.gt_box for s in samples]),
                   np.array([s.score for s in samples], dtype=float))

    def __len__(self) -> int:
        return int(self.score.size)


@dataclass(frozen=True)
class RegConfig:
    alpha: float = -0.1
    ep: float = 0.001
    # None drops the IoU suppression term and uses flat_weight instead.
    gamma: Optional[float] = 1.2
    flat_weight: float = 1.5
    ema_momentum: float = 0.1
    ema_init: float = 1.0
    use_rci: bool = True
    # Multiply every sample by the running mean itself instead of dividing
    # each coefficient by it.
    literal_ema: bool = False
    # True: branch on (s - alpha) - iou, the same shifted score the ratio uses.
    unified_branch: bool = False
    diou_squared: bool = True

    def __post_init__(self):
        if self.ep < 0:
            raise ValueError(f"ep must be >= 0, got {self.ep}")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.flat_weight <= 0:
            raise ValueError(f"flat_weight must be > 0, got {self.flat_weight}")
        if not 0.0 < self.ema_momentum <= 1.0:
            raise ValueError(f"ema_momentum must be in (0, 1], got {self.ema_momentum}")
        if self.ema_init <= 0:
            raise ValueError(f"ema_init must be > 0, got {self.ema_init}")


@dataclass(frozen=True)
class EmaState:
    r: float = 1.0
    step: int = 0


def _batch(samples) -> RegBatch:
    return samples if isinstance(samples, RegBatch) else RegBatch.from_samples(samples)


def iou_suppression(iou_value, gamma: float):
    """``t = exp(-iou**2 / gamma)``, decreasing in IoU."""
    return np.exp(-np.asarray(iou_value, dtype=float) ** 2 / gamma)


def cf_reg(samples, cfg: RegConfig = RegConfig()) -> np.ndarray:
    b = _batch(samples)
    ov = np.asarray(iou(b.pred, b.gt))
    offset = np.asarray(diou_penalty(b.pred, b.gt, squared=cfg.diou_squared))
    t = cfg.flat_weight if cfg.gamma is None else iou_suppression(ov, cfg.gamma)
    return t * np.exp(offset) * ov


def rci_reg_value(s, iou_value, alpha: float, ep: float, unified_branch: bool = False):
    """Consistency coefficient from a score and an IoU.

    With ``a = s - alpha`` the ratio ``(a**2 + iou**2 + ep) / (2*a*iou + ep)``
    is >= 1; it is used in region 1 (``s - iou + alpha >= 0``) and its
    reciprocal elsewhere. Both equal 1 on ``a == iou``.
    """
    s = np.asarray(s, dtype=float)
    iou_value = np.asarray(iou_value, dtype=float)
    a = s - alpha
    big = a ** 2 + iou_value ** 2 + ep
    small = 2.0 * a * iou_value + ep
    both_zero = (big == 0) & (small == 0)
    if np.any((small <= 0) & ~both_zero):
        raise ValueError("non-positive denominator in the consistency ratio; use ep > 0")
    resid = a - iou_value if unified_branch else s - iou_value + alpha
    big = np.where(both_zero, 1.0, big)
    small = np.where(both_zero, 1.0, small)
    return np.where(resid >= 0, big / small, small / big)


def rci_reg(samples, cfg: RegConfig = RegConfig()) -> np.ndarray:
    b = _batch(samples)
    return rci_reg_value(b.score, np.asarray(iou(b.pred, b.gt)), cfg.alpha, cfg.ep,
                         cfg.unified_branch)


def ema_update(state: EmaState, batch_mean: float, m: float) -> EmaState:
    if not batch_mean > 0 or not math.isfinite(batch_mean):
        raise ValueError(f"running-mean input must be a positive finite number, got {batch_mean}")
    if not 0.0 < m <= 1.0:
        raise ValueError(f"momentum must be in (0, 1], got {m}")
    return replace(state, r=(1.0 - m) * state.r + m * batch_mean, step=state.step + 1)


def hcra_r_weights(samples, cfg: RegConfig, state: EmaState):
    """Frozen per-sample weights and the advanced running-mean state.

    The running mean is updated with the batch mean of the consistency
    coefficient first; each coefficient is then divided by the updated mean.
    """
    b = _batch(samples)
    if len(b) == 0:
        raise ValueError("empty regression batch (no positive samples)")
    cf = cf_reg(b, cfg)
    if not cfg.use_rci:
        return cf, state
    coef = rci_reg(b, cfg)
    new_state = ema_update(state, float(coef.mean()), cfg.ema_momentum)
    r = np.full_like(coef, new_state.r) if cfg.literal_ema else coef / new_state.r
    return r * cf, new_state


def weighted_giou_loss(samples, weights) -> float:
    b = _batch(samples)
    return float(np.sum(weights * (1.0 - np.asarray(giou(b.pred, b.gt)))) / len(b))


def hcra_r_loss(samples, cfg: RegConfig = RegConfig(), state: EmaState | None = None):
    """Returns ``(loss, weights, new_state)``.

    ``loss = sum(w * (1 - giou)) / n_positives``.
    """
    b = _batch(samples)
    if state is None:
        state = EmaState(r=cfg.ema_init)
    w, new_state = hcra_r_weights(b, cfg, state)
    return weighted_giou_loss(b, w), w, new_state


def hcra_r_gradient(samples, cfg: RegConfig = RegConfig(), state: EmaState | None = None,
                    weights=None) -> np.ndarray:
    """``(n, 4)`` partials of the loss w.r.t. each predicted box, weights frozen."""
    b = _batch(samples)
    if weights is None:
        if state is None:
            state = EmaState(r=cfg.ema_init)
        weights, _ = hcra_r_weights(b, cfg, state)
    return np.asarray(weights)[:, None] * giou_gradient(b.pred, b.gt) / len(b)


def giou_baseline(samples, weight: float = 1.0):
    """Plain mean GIoU loss and its gradient; returns ``(loss, grad)``."""
    b = _batch(samples)
    w = np.full(len(b), weight)
    return weighted_giou_loss(b, w), w[:, None] * giou_gradient(b.pred, b.gt) / len(b)
