import math
from dataclasses import replace

import numpy as np
import pytest

from hcral.cls_loss import (ClsBatch, ClsConfig, ClsSample, binary_cross_entropy, focal_loss,
                            hcra_c_gradient, hcra_c_loss, hcra_c_weights, omega, rci,
                            rci_cls_gate, sigmoid)


def random_batch(rng, n=60, pos_frac=0.3):
    logits = rng.normal(0, 2, n)
    p_star = (rng.random(n) < pos_frac).astype(float)
    ious = rng.uniform(0, 1, n)
    return logits, p_star, ious


def ghmc_loop(p, y, m):
    """Loop oracle for the plain density-weighted cross entropy."""
    g = [abs(a - b) for a, b in zip(p, y)]
    edges = [i / m for i in range(m + 1)]
    edges[-1] += 1e-6
    def which(v):
        for i in range(m):
            if edges[i] <= v < edges[i + 1]:
                return i
    counts = [0] * m
    for v in g:
        counts[which(v)] += 1
    n = len(p)
    total = 0.0
    for pi, yi, gi in zip(p, y, g):
        beta = n / (counts[which(gi)] * m)
        pc = min(max(pi, 1e-6), 1 - 1e-6)
        total += beta * -(yi * math.log(pc) + (1 - yi) * math.log(1 - pc))
    return total / n


class TestPieces:
    def test_rci(self):
        assert rci(0.9, 0.5, 0.0) == pytest.approx(0.4)
        assert rci(0.9, 0.5, -0.1) == pytest.approx(0.3)

    def test_omega_positive_is_iou(self):
        assert omega(0.63, 1, 0.7) == pytest.approx(0.63)

    def test_omega_negative(self):
        assert omega(1.0, 0, 0.7) == pytest.approx(0.91)
        assert omega(0.7, 0, 0.7) == 1.0
        assert omega(0.0, 0, 0.7) == 1.0

    def test_gate_open(self):
        assert rci_cls_gate(0.9, 1, 0.5, 5.0, 0.0) == pytest.approx(1 / (1 + math.exp(-2)))
        assert rci_cls_gate(0.9, 1, 0.5, 5.0, 0.0) == pytest.approx(0.8808, abs=1e-4)

    def test_gate_closed_when_score_below_iou(self):
        assert rci_cls_gate(0.4, 1, 0.6, 5.0, 0.1) == 0.0
        assert rci_cls_gate(0.6, 1, 0.6, 5.0, 0.1) == 0.0

    def test_gate_negatives_pass(self):
        assert rci_cls_gate(0.1, 0, 0.9, 5.0, 0.0) == 1.0

    def test_shifted_branch(self):
        # p > iou but p - iou + alpha < 0: literal opens, shifted closes
        assert rci_cls_gate(0.55, 1, 0.5, 5.0, -0.1) == pytest.approx(sigmoid(-0.25))
        assert rci_cls_gate(0.55, 1, 0.5, 5.0, -0.1, shifted_branch=True) == 0.0

    def test_gate_monotone_in_rci(self):
        p = np.linspace(0.51, 1.0, 50)
        g = rci_cls_gate(p, np.ones(50), np.full(50, 0.5), 5.0, 0.0)
        assert np.all(np.diff(g) > 0)
        assert np.all((g >= 0.5) & (g <= 1.0))

    def test_sigmoid_stable(self):
        np.testing.assert_allclose(sigmoid([-800.0, 0.0, 800.0]), [0.0, 0.5, 1.0])

    def test_ce_clamped(self):
        assert np.isfinite(binary_cross_entropy(0.0, 1.0))
        assert binary_cross_entropy(0.0, 1.0) == pytest.approx(-math.log(1e-6))

    def test_sample_validation(self):
        with pytest.raises(ValueError):
            ClsSample(1.2, 1)
        with pytest.raises(ValueError):
            ClsSample(0.5, 2)


class TestLoss:
    def test_weights_are_product(self):
        rng = np.random.default_rng(0)
        logits, y, ious = random_batch(rng)
        b = ClsBatch.from_logits(logits, y, ious)
        cfg = ClsConfig()
        beta = hcra_c_weights(b, replace(cfg, use_omega=False, use_gate=False))
        expect = beta * omega(ious, y, cfg.mu) * rci_cls_gate(b.p, y, ious, cfg.theta, cfg.alpha)
        np.testing.assert_allclose(hcra_c_weights(b, cfg), expect)

    def test_reduces_to_density_weighted_ce(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            logits, y, ious = random_batch(rng, n=int(rng.integers(5, 80)))
            b = ClsBatch.from_logits(logits, y, ious)
            cfg = ClsConfig(use_omega=False, use_gate=False, m_bins=int(rng.integers(1, 30)))
            loss, _ = hcra_c_loss(b, cfg)
            assert loss == pytest.approx(ghmc_loop(b.p, y, cfg.m_bins), rel=1e-12)

    def test_from_samples_matches_batch(self):
        samples = [ClsSample(0.8, 1, 0.6), ClsSample(0.2, 0, 0.3), ClsSample(0.5, 0, 0.9)]
        assert hcra_c_loss(samples)[0] == pytest.approx(
            hcra_c_loss(ClsBatch.from_samples(samples))[0])

    def test_positive_normalizer(self):
        b = ClsBatch.from_samples([ClsSample(0.8, 1, 0.6), ClsSample(0.2, 0, 0.3),
                                   ClsSample(0.5, 0, 0.9), ClsSample(0.3, 0, 0.1)])
        total, _ = hcra_c_loss(b, ClsConfig(normalizer="total"))
        per_pos, _ = hcra_c_loss(b, ClsConfig(normalizer="positive"))
        assert per_pos == pytest.approx(total * 4)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            hcra_c_loss(ClsBatch(np.zeros(0), np.zeros(0), np.zeros(0)))


class TestGradient:
    def test_frozen_weights_match_fd(self):
        rng = np.random.default_rng(7)
        logits, y, ious = random_batch(rng)
        cfg = ClsConfig()
        b = ClsBatch.from_logits(logits, y, ious)
        w = hcra_c_weights(b, cfg)
        grad = hcra_c_gradient(b, cfg, weights=w)
        h = 1e-6
        for i in range(len(logits)):
            lp, lm = logits.copy(), logits.copy()
            lp[i] += h
            lm[i] -= h
            fp = np.sum(w * binary_cross_entropy(sigmoid(lp), y)) / len(y)
            fm = np.sum(w * binary_cross_entropy(sigmoid(lm), y)) / len(y)
            assert grad[i] == pytest.approx((fp - fm) / (2 * h), rel=1e-4, abs=1e-10)

    def test_recomputed_weights_differ(self):
        # Differentiating through the gate would change the gradient of an
        # open positive; the frozen gradient must not include that term.
        b_logit = np.array([2.0, -1.0, 0.5])
        y = np.array([1.0, 0.0, 0.0])
        ious = np.array([0.5, 0.2, 0.4])
        cfg = ClsConfig(alpha=0.0)

        def full(lg):
            return hcra_c_loss(ClsBatch.from_logits(lg, y, ious), cfg)[0]

        h = 1e-6
        e = np.array([h, 0.0, 0.0])
        fd_full = (full(b_logit + e) - full(b_logit - e)) / (2 * h)
        frozen = hcra_c_gradient(ClsBatch.from_logits(b_logit, y, ious), cfg)[0]
        assert abs(fd_full - frozen) > 0.01 * abs(frozen)

    def test_sign(self):
        b = ClsBatch.from_samples([ClsSample(0.9, 1, 0.5), ClsSample(0.3, 0, 0.2)])
        g = hcra_c_gradient(b, ClsConfig(alpha=0.0))
        assert g[0] < 0 and g[1] > 0

    def test_focal_gradient_matches_fd(self):
        rng = np.random.default_rng(11)
        logits, y, ious = random_batch(rng, n=40)
        _, grad = focal_loss(ClsBatch.from_logits(logits, y, ious))
        h = 1e-6
        for i in range(len(logits)):
            lp, lm = logits.copy(), logits.copy()
            lp[i] += h
            lm[i] -= h
            fp = focal_loss(ClsBatch.from_logits(lp, y, ious))[0]
            fm = focal_loss(ClsBatch.from_logits(lm, y, ious))[0]
            assert grad[i] == pytest.approx((fp - fm) / (2 * h), rel=1e-4, abs=1e-10)

    def test_focal_reference_value(self):
        b = ClsBatch.from_samples([ClsSample(0.8, 1), ClsSample(0.3, 0)])
        expect = -0.25 * 0.2 ** 2 * math.log(0.8) - 0.75 * 0.3 ** 2 * math.log(0.7)
        assert focal_loss(b)[0] == pytest.approx(expect)
