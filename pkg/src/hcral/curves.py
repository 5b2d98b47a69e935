"""Analytic weighting curves, sampled for plotting."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .cls_loss import omega, rci_cls_gate
from .reg_loss import iou_suppression, rci_reg_value

CURVES = ("omega_neg", "t_gamma", "rci_gate", "rci_reg")

DEFAULT_PARAMS = {
    "omega_neg": (0.6, 0.7, 0.8, 0.9),   # mu
    "t_gamma": (0.8, 1.0, 1.2, 1.4),     # gamma
    "rci_gate": (4.0, 5.0, 6.0),         # theta
    "rci_reg": (0.1, 0.01, 0.001),       # ep
}

X_LABELS = {"omega_neg": "iou", "t_gamma": "iou", "rci_gate": "score", "rci_reg": "score"}


def curve_data(which: str, params: Sequence[float], xs: Sequence[float],
               alpha: float = -0.1, fixed_iou: float = 0.5) -> list[tuple[float, float, float]]:
    """Rows ``(param, x, y)`` for every param in ``params`` and x in ``xs``.

    ``omega_neg``: negative-sample IoU weight vs IoU, one curve per mu.
    ``t_gamma``: IoU suppression factor vs IoU, one curve per gamma.
    ``rci_gate``: positive-sample gate vs score at ``fixed_iou``, per theta.
    ``rci_reg``: regression consistency coefficient vs score at ``fixed_iou``, per ep.
    """
    if which not in CURVES:
        raise ValueError(f"unknown curve {which!r}; choose from {CURVES}")
    params = list(params)
    xs = np.asarray(list(xs), dtype=float)
    if not params or xs.size == 0:
        raise ValueError("empty parameter grid")
    rows = []
    for q in params:
        if which == "omega_neg":
            ys = omega(xs, np.zeros_like(xs), q)
        elif which == "t_gamma":
            ys = iou_suppression(xs, q)
        elif which == "rci_gate":
            ys = rci_cls_gate(xs, np.ones_like(xs), np.full_like(xs, fixed_iou), q, alpha)
        else:
            ys = rci_reg_value(xs, np.full_like(xs, fixed_iou), alpha, q)
        rows += [(float(q), float(x), float(y)) for x, y in zip(xs, ys)]
    return rows
