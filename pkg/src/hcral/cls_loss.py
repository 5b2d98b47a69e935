"""Hybrid classification loss (HCRA-C).

Binary cross-entropy per (anchor, class) pair, weighted by

    w_i = omega_i * beta_i * gate_i

where ``beta`` is the gradient-density weight from :mod:`hcral.ghm`,
``omega`` shifts attention by IoU and ``gate`` is the
score/IoU consistency gate. Weights are computed from the current batch
and then frozen: no gradient flows through them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ghm import beta_weights, build_bins, gradient_norm

PROB_CLAMP = 1e-6


@dataclass(frozen=True)
class ClsSample:
    p: float
    p_star: int
    iou_with_gt: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must be in [0, 1], got {self.p}")
        if self.p_star not in (0, 1):
            raise ValueError(f"p_star must be 0 or 1, got {self.p_star}")
        if not 0.0 <= self.iou_with_gt <= 1.0:
            raise ValueError(f"iou_with_gt must be in [0, 1], got {self.iou_with_gt}")


@dataclass(frozen=True)
class ClsBatch:
    """Column layout of a list of :class:`ClsSample`."""

    p: np.ndarray
    p_star: np.ndarray
    iou: np.ndarray

    @classmethod
    def from_samples(cls, samples: Sequence[ClsSample]) -> "ClsBatch":
        return cls(np.array([s.p for s in samples], dtype=float),
                   np.array([s.p_star for s in samples], dtype=float),
                   np.array([s.iou_with_gt for s in samples], dtype=float))

    @classmethod
    def from_logits(cls, logits, p_star, iou) -> "ClsBatch":
        return cls(sigmoid(logits), np.asarray(p_star, dtype=float),
                   np.asarray(iou, dtype=float))

    def __len__(self) -> int:
        return int(self.p.size)


@dataclass(frozen=True)
class ClsConfig:
    theta: float = 5.0
    m_bins: int = 20
    mu: float = 0.7
    alpha: float = -0.1
    normalizer: str = "total"  # "total" | "positive"
    use_omega: bool = True
    use_gate: bool = True
    # False: gate opens when p > iou (literal); True: when p - iou + alpha > 0.
    shifted_branch: bool = False

    def __post_init__(self):
        if self.theta <= 0:
            raise ValueError(f"theta must be > 0, got {self.theta}")
        if self.m_bins < 1:
            raise ValueError(f"m_bins must be >= 1, got {self.m_bins}")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError(f"mu must be in [0, 1], got {self.mu}")
        if self.normalizer not in ("total", "positive"):
            raise ValueError(f"normalizer must be 'total' or 'positive', got {self.normalizer!r}")


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def rci(s, iou, alpha):
    """Score/IoU residual ``s - iou + alpha``.

    Positive values: the score overshoots the shifted IoU (region 1).
    """
    return np.asarray(s, dtype=float) - np.asarray(iou, dtype=float) + alpha


def omega(iou, p_star, mu: float):
    """IoU attention: ``iou`` on positives, ``1 - iou * (iou - mu)**2`` on negatives."""
    iou = np.asarray(iou, dtype=float)
    return np.where(np.asarray(p_star) == 1, iou, 1.0 - iou * (iou - mu) ** 2)


def rci_cls_gate(p, p_star, iou, theta: float, alpha: float, shifted_branch: bool = False):
    """Consistency gate in [0, 1].

    Negatives pass with 1. Positives whose score does not exceed the IoU
    are gated to 0; the rest get ``sigmoid(theta * rci)``.
    """
    p = np.asarray(p, dtype=float)
    iou = np.asarray(iou, dtype=float)
    r = rci(p, iou, alpha)
    is_open = r > 0 if shifted_branch else p > iou
    gate = np.where(is_open, sigmoid(theta * r), 0.0)
    return np.where(np.asarray(p_star) == 1, gate, 1.0)


def binary_cross_entropy(p, p_star):
    p = np.clip(np.asarray(p, dtype=float), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(p_star * np.log(p) + (1.0 - p_star) * np.log1p(-p))


def _normalizer(batch: ClsBatch, cfg: ClsConfig) -> float:
    if cfg.normalizer == "positive":
        return max(float(np.sum(batch.p_star == 1)), 1.0)
    return float(len(batch))


def hcra_c_weights(batch: ClsBatch, cfg: ClsConfig) -> np.ndarray:
    """Per-sample ``omega * beta * gate`` for the batch (treated as constants)."""
    if len(batch) == 0:
        raise ValueError("empty classification batch")
    g = gradient_norm(batch.p, batch.p_star)
    beta = beta_weights(build_bins(g, cfg.m_bins), g)
    w = beta
    if cfg.use_omega:
        w = w * omega(batch.iou, batch.p_star, cfg.mu)
    if cfg.use_gate:
        w = w * rci_cls_gate(batch.p, batch.p_star, batch.iou, cfg.theta, cfg.alpha,
                             cfg.shifted_branch)
    return w


def weighted_ce(batch: ClsBatch, weights, normalizer: float) -> float:
    return float(np.sum(weights * binary_cross_entropy(batch.p, batch.p_star)) / normalizer)


def hcra_c_loss(batch: ClsBatch | Sequence[ClsSample], cfg: ClsConfig = ClsConfig()):
    """Returns ``(loss, weights)``; loss is ``sum(w * CE) / normalizer``."""
    if not isinstance(batch, ClsBatch):
        batch = ClsBatch.from_samples(batch)
    w = hcra_c_weights(batch, cfg)
    return weighted_ce(batch, w, _normalizer(batch, cfg)), w


def hcra_c_gradient(batch: ClsBatch | Sequence[ClsSample], cfg: ClsConfig = ClsConfig(),
                    weights=None) -> np.ndarray:
    """d(loss)/d(logit) with weights held fixed: ``w * (p - p*) / normalizer``."""
    if not isinstance(batch, ClsBatch):
        batch = ClsBatch.from_samples(batch)
    if weights is None:
        weights = hcra_c_weights(batch, cfg)
    return weights * (batch.p - batch.p_star) / _normalizer(batch, cfg)


def focal_loss(batch: ClsBatch, gamma: float = 2.0, alpha: float = 0.25):
    """Sigmoid focal loss summed and divided by the positive count.

    Returns ``(loss, d(loss)/d(logit))``.
    """
    p, y = batch.p, batch.p_star
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    a_t = np.where(y == 1, alpha, 1.0 - alpha)
    p_t = np.where(y == 1, pc, 1.0 - pc)
    loss = -a_t * (1.0 - p_t) ** gamma * np.log(p_t)
    grad_pos = gamma * (1 - p) ** gamma * p * np.log(pc) - (1 - p) ** (gamma + 1)
    grad_neg = p ** (gamma + 1) - gamma * p ** gamma * (1 - p) * np.log1p(-pc)
    grad = a_t * np.where(y == 1, grad_pos, grad_neg)
    n_pos = max(float(np.sum(y == 1)), 1.0)
    return float(loss.sum() / n_pos), grad / n_pos
