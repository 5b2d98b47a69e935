import numpy as np
import pytest

from hcral.evaluation import average_precision, consistency_from_pairs, nms, pearson


def test_ap_perfect():
    gts = [[0, 0, 10, 10], [20, 20, 30, 30]]
    ap, matches = average_precision(gts, [0.9, 0.8], gts)
    assert ap == 1.0
    assert len(matches) == 2


def test_ap_zero():
    ap, matches = average_precision([[50, 50, 60, 60]], [0.9], [[0, 0, 10, 10]])
    assert ap == 0.0 and matches == []


def test_ap_hand_example():
    gts = [[0, 0, 10, 10], [20, 20, 30, 30]]
    # ranked: miss (iou 1/3 with gt0), hit gt1, hit gt0 (iou 2/3)
    dets = [[-5, 0, 5, 10], [20, 20, 30, 30], [2, 0, 12, 10]]
    scores = [0.9, 0.8, 0.7]
    # precision 0, 1/2, 2/3 at recall 0, 1/2, 1 -> envelope 2/3 throughout
    ap, matches = average_precision(dets, scores, gts)
    assert ap == pytest.approx(2 / 3)
    assert {(m.det, m.gt) for m in matches} == {(1, 1), (2, 0)}


def test_ap_duplicate_is_false_positive():
    gts = [[0, 0, 10, 10]]
    ap, matches = average_precision([[0, 0, 10, 10], [0, 0, 10, 10]], [0.9, 0.8], gts)
    assert ap == 1.0 and len(matches) == 1


def test_nms():
    boxes = [[0, 0, 10, 10], [1, 0, 11, 10], [30, 30, 40, 40]]
    np.testing.assert_array_equal(nms(boxes, [0.8, 0.9, 0.5], 0.6), [1, 2])
    np.testing.assert_array_equal(nms(boxes, [0.8, 0.9, 0.5], 0.95), [1, 0, 2])


def test_pearson():
    x = np.arange(10.0)
    assert pearson(x, 2 * x + 1) == pytest.approx(1.0)
    assert pearson(x, -x) == pytest.approx(-1.0)
    assert np.isnan(pearson(x, np.ones(10)))


def test_consistency_regions():
    st = consistency_from_pairs([0.9, 0.5, 0.3, 0.75], [0.6, 0.6, 0.1, 0.6], -0.1)
    assert st.region1_fraction == pytest.approx(0.75)
    assert st.region1_fraction + st.region2_fraction == 1.0
    with pytest.raises(ValueError):
        consistency_from_pairs([0.5], [0.5], 0.0)
