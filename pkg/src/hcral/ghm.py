"""Gradient-density binning for GHM-style sample reweighting.

The gradient norm of sigmoid cross-entropy w.r.t. its logit is ``|p - p*|``.
Samples are histogrammed over ``M`` uniform bins on ``[0, 1]``; the density
of a sample is its bin count divided by the bin width, and its weight is
``beta = N / density``. Dense regions (typically the flood of easy
negatives) are suppressed, sparse ones amplified.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Extends the last edge so that a gradient norm of exactly 1.0 is binned.
EDGE_EPS = 1e-6


def gradient_norm(p, p_star):
    """``|p - p*|``, elementwise."""
    return np.abs(np.asarray(p, dtype=float) - np.asarray(p_star, dtype=float))


@dataclass(frozen=True)
class GradientDensityBins:
    m_bins: int
    edges: np.ndarray
    counts: np.ndarray
    total_n: int

    @property
    def bin_width(self) -> float:
        return 1.0 / self.m_bins

    def bin_index(self, gradient_norms) -> np.ndarray:
        g = np.atleast_1d(np.asarray(gradient_norms, dtype=float))
        if np.any((g < 0) | (g >= self.edges[-1])):
            raise ValueError("gradient norms must lie in [0, 1]")
        return np.searchsorted(self.edges, g, side="right") - 1

    def density(self, gradient_norms) -> np.ndarray:
        """GD(g): count of the sample's bin over the (nominal) bin width."""
        return self.counts[self.bin_index(gradient_norms)] / self.bin_width


def build_bins(gradient_norms, m_bins: int = 20) -> GradientDensityBins:
    if m_bins < 1:
        raise ValueError(f"m_bins must be >= 1, got {m_bins}")
    g = np.atleast_1d(np.asarray(gradient_norms, dtype=float))
    if g.size == 0:
        raise ValueError("no samples to weight")
    edges = np.linspace(0.0, 1.0, m_bins + 1)
    edges[-1] += EDGE_EPS
    edges.setflags(write=False)
    bins = GradientDensityBins(m_bins, edges, np.zeros(m_bins, dtype=np.int64), int(g.size))
    counts = np.bincount(bins.bin_index(g), minlength=m_bins)
    counts.setflags(write=False)
    return GradientDensityBins(m_bins, edges, counts, int(g.size))


def beta_weights(bins: GradientDensityBins, gradient_norms) -> np.ndarray:
    """Per-sample ``beta = N / GD(g)``.

    Raises ValueError if a queried norm falls in a bin that holds no samples,
    which means the bins were built from a different population.
    """
    idx = bins.bin_index(gradient_norms)
    counts = bins.counts[idx]
    if np.any(counts == 0):
        raise ValueError("gradient norm falls in an empty bin; bins built from another batch?")
    return bins.total_n * bins.bin_width / counts
