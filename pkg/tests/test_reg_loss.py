import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hcral.geometry import Box
from hcral.reg_loss import (EmaState, RegBatch, RegConfig, RegSample, cf_reg, ema_update,
                            giou_baseline, hcra_r_gradient, hcra_r_loss, hcra_r_weights,
                            iou_suppression, rci_reg_value)


def scalar_terms(p, g):
    """Plain-arithmetic iou, giou and squared-center-over-squared-diagonal."""
    iw = max(0.0, min(p[2], g[2]) - max(p[0], g[0]))
    ih = max(0.0, min(p[3], g[3]) - max(p[1], g[1]))
    inter = iw * ih
    union = (p[2] - p[0]) * (p[3] - p[1]) + (g[2] - g[0]) * (g[3] - g[1]) - inter
    cw = max(p[2], g[2]) - min(p[0], g[0])
    ch = max(p[3], g[3]) - min(p[1], g[1])
    v = inter / union
    gi = v - (cw * ch - union) / (cw * ch)
    rho2 = ((p[0] + p[2] - g[0] - g[2]) / 2) ** 2 + ((p[1] + p[3] - g[1] - g[3]) / 2) ** 2
    return v, gi, rho2 / (cw * cw + ch * ch)


def random_batch(rng, n):
    g = rng.uniform(0, 20, (n, 2))
    g = np.concatenate([g, g + rng.uniform(2, 10, (n, 2))], axis=1)
    p = g + rng.uniform(-2, 2, (n, 4))
    p[:, 2:] = np.maximum(p[:, 2:], p[:, :2] + 0.5)
    return RegBatch(p, g, rng.uniform(0.05, 0.95, n))


class TestWeights:
    def test_suppression(self):
        assert iou_suppression(0.0, 1.2) == 1.0
        assert iou_suppression(1.0, 1.2) == pytest.approx(math.exp(-1 / 1.2))
        v = iou_suppression(np.linspace(0, 1, 20), 1.2)
        assert np.all(np.diff(v) < 0)

    def test_cf_reference(self):
        # pred shifted by 1 along x relative to a 2x2 GT
        s = [RegSample(Box(1, 0, 3, 2), Box(0, 0, 2, 2), 0.5)]
        v = 2 / 6
        pen = 1 / (9 + 4)
        expect = math.exp(-v * v / 1.2) * math.exp(pen) * v
        assert cf_reg(s)[0] == pytest.approx(expect, rel=1e-12)

    def test_cf_published_point(self):
        # iou 0.5 with penalty such that exp(R) * t * iou rounds to 0.4346
        t = math.exp(-0.25 / 1.2)
        r = math.log(0.4346 / (t * 0.5))
        assert 0 < r < 0.1
        assert t * math.exp(r) * 0.5 == pytest.approx(0.4346, abs=1e-12)

    def test_cf_flat_weight(self):
        s = [RegSample(Box(1, 0, 3, 2), Box(0, 0, 2, 2), 0.5)]
        with_t = cf_reg(s, RegConfig())[0]
        flat = cf_reg(s, RegConfig(gamma=None))[0]
        v = 2 / 6
        assert flat / with_t == pytest.approx(1.5 / math.exp(-v * v / 1.2))

    def test_rci_reg_examples(self):
        up = rci_reg_value(0.9, 0.4, -0.1, 0.001)
        down = rci_reg_value(0.2, 0.8, -0.1, 0.001)
        assert up == pytest.approx(1.161 / 0.801, rel=1e-12)
        assert up == pytest.approx(1.4494, abs=1e-4)
        assert down == pytest.approx(0.481 / 0.731, rel=1e-12)
        assert down == pytest.approx(0.658, abs=1e-3)
        assert up / down == pytest.approx(2.20, abs=0.01)

    def test_rci_reg_on_line_is_one(self):
        s = np.linspace(0.0, 0.9, 10)
        np.testing.assert_allclose(rci_reg_value(s, s + 0.1, -0.1, 0.001), 1.0)

    @given(st.floats(0, 1), st.floats(0, 1), st.sampled_from([0.1, 0.01, 0.001]))
    def test_region_law(self, s, v, ep):
        val = float(rci_reg_value(s, v, -0.1, ep))
        if s - v - 0.1 >= 0:
            assert val >= 1.0 - 1e-12
        else:
            assert val <= 1.0 + 1e-12
        assert val > 0

    def test_unified_branch_flag(self):
        # branches on (s - alpha) - iou; agrees with the default for alpha = 0
        assert rci_reg_value(0.7, 0.4, 0.0, 0.01) == rci_reg_value(0.7, 0.4, 0.0, 0.01, True)
        # s=0.45, iou=0.5, alpha=-0.1: default is region 2, unified is region 1
        assert rci_reg_value(0.45, 0.5, -0.1, 0.01) < 1.0
        assert rci_reg_value(0.45, 0.5, -0.1, 0.01, unified_branch=True) >= 1.0

    def test_zero_ep_degenerate(self):
        assert rci_reg_value(-0.1, 0.0, -0.1, 0.0) == 1.0
        with pytest.raises(ValueError):
            rci_reg_value(0.05, 0.5, 0.1, 0.0)


class TestEma:
    def test_single_step(self):
        assert ema_update(EmaState(1.0), 2.5, 0.1).r == pytest.approx(1.15)
        assert ema_update(EmaState(1.0), 2.5, 0.1).step == 1

    def test_closed_form(self):
        st_ = EmaState(1.0)
        for n in range(1, 40):
            st_ = ema_update(st_, 2.5, 0.1)
            assert st_.r == pytest.approx(2.5 + (1.0 - 2.5) * 0.9 ** n, rel=1e-13)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            ema_update(EmaState(), 0.0, 0.1)
        with pytest.raises(ValueError):
            ema_update(EmaState(), float("nan"), 0.1)

    def test_weights_use_updated_mean(self):
        b = random_batch(np.random.default_rng(2), 8)
        cfg = RegConfig()
        w, new = hcra_r_weights(b, cfg, EmaState(1.0))
        coef = rci_reg_value(b.score, [scalar_terms(p, g)[0] for p, g in zip(b.pred, b.gt)],
                             cfg.alpha, cfg.ep)
        assert new.r == pytest.approx(0.9 + 0.1 * coef.mean())
        np.testing.assert_allclose(w, coef / new.r * cf_reg(b, cfg))

    def test_literal_variant(self):
        b = random_batch(np.random.default_rng(2), 8)
        w, new = hcra_r_weights(b, RegConfig(literal_ema=True), EmaState(1.0))
        np.testing.assert_allclose(w, new.r * cf_reg(b, RegConfig()))


class TestLoss:
    def test_against_loop_oracle(self):
        rng = np.random.default_rng(5)
        b = random_batch(rng, 10)
        cfg = RegConfig()
        loss, w, state = hcra_r_loss(b, cfg)
        coefs, terms = [], []
        for p, g, s in zip(b.pred, b.gt, b.score):
            v, gi, pen = scalar_terms(p, g)
            a = s + 0.1
            big, small = a * a + v * v + 0.001, 2 * a * v + 0.001
            coefs.append(big / small if s - v - 0.1 >= 0 else small / big)
            terms.append((math.exp(-v * v / 1.2) * math.exp(pen) * v, 1 - gi))
        r = 0.9 * 1.0 + 0.1 * sum(coefs) / 10
        expect = sum(c / r * cf * l for c, (cf, l) in zip(coefs, terms)) / 10
        assert loss == pytest.approx(expect, rel=1e-12)
        assert state.r == pytest.approx(r, rel=1e-14)

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(9)
        b = random_batch(rng, 12)
        _, w, _ = hcra_r_loss(b)
        grad = hcra_r_gradient(b, weights=w)
        h = 1e-6
        for i in range(len(b)):
            for j in range(4):
                pp, pm = b.pred.copy(), b.pred.copy()
                pp[i, j] += h
                pm[i, j] -= h
                fp = np.sum(w * (1 - np.array([scalar_terms(p, g)[1] for p, g in zip(pp, b.gt)])))
                fm = np.sum(w * (1 - np.array([scalar_terms(p, g)[1] for p, g in zip(pm, b.gt)])))
                assert grad[i, j] == pytest.approx((fp - fm) / (2 * h) / len(b),
                                                   rel=1e-4, abs=1e-9)

    def test_recomputed_weights_change_gradient(self):
        b = random_batch(np.random.default_rng(13), 4)
        _, w, _ = hcra_r_loss(b)
        frozen = hcra_r_gradient(b, weights=w)
        h = 1e-6
        pp, pm = b.pred.copy(), b.pred.copy()
        pp[0, 0] += h
        pm[0, 0] -= h
        fp = hcra_r_loss(RegBatch(pp, b.gt, b.score))[0]
        fm = hcra_r_loss(RegBatch(pm, b.gt, b.score))[0]
        assert abs((fp - fm) / (2 * h) - frozen[0, 0]) > 1e-6

    def test_linear_in_weights(self):
        b = random_batch(np.random.default_rng(4), 6)
        _, w, _ = hcra_r_loss(b)
        np.testing.assert_allclose(hcra_r_gradient(b, weights=3 * w),
                                   3 * hcra_r_gradient(b, weights=w))

    def test_baseline(self):
        b = random_batch(np.random.default_rng(6), 6)
        loss, grad = giou_baseline(b)
        ref = np.mean([1 - scalar_terms(p, g)[1] for p, g in zip(b.pred, b.gt)])
        assert loss == pytest.approx(ref)
        assert grad.shape == (6, 4)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            hcra_r_loss(RegBatch(np.zeros((0, 4)), np.zeros((0, 4)), np.zeros(0)))

    def test_perfect_boxes_zero_loss(self):
        g = np.array([[0.0, 0.0, 4.0, 4.0], [2.0, 2.0, 9.0, 5.0]])
        loss, _, _ = hcra_r_loss(RegBatch(g.copy(), g, np.array([0.9, 0.95])))
        assert loss == pytest.approx(0.0, abs=1e-15)
