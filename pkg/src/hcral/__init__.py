"""Hybrid classification-regression adaptive loss (HCRAL), GHM gradient
density weighting, GIoU/DIoU geometry and ATSS/EATSS anchor assignment,
with a synthetic-scene harness for end-to-end checks."""

from .assign import AnchorSet, AssignConfig, Assignment, atss_assign, eatss_assign, rank_score
from .cls_loss import ClsBatch, ClsConfig, ClsSample, hcra_c_gradient, hcra_c_loss
from .geometry import Box, diou_penalty, giou, giou_gradient, iou
from .ghm import GradientDensityBins, beta_weights, build_bins, gradient_norm
from .reg_loss import EmaState, RegConfig, RegSample, ema_update, hcra_r_gradient, hcra_r_loss

__version__ = "0.1.0"
