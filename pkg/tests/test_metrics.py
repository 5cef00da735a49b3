import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srpose.heatmap import PoseInstance
from srpose.metrics import OksParams, average_precision, oks, pckh


def pose(xy, v=None, area=100.0, score=None, image_id=0, head_size=None):
    xy = np.asarray(xy, dtype=np.float64)
    v = np.full(len(xy), 2.0) if v is None else np.asarray(v, dtype=np.float64)
    return PoseInstance(np.c_[xy, v], area=area, score=score, image_id=image_id, head_size=head_size)


def test_oks_perfect_and_analytic():
    gt = pose([[10.0, 20.0]], area=50.0)
    p = OksParams.uniform(1, 0.1)
    assert oks(gt, gt, p) == 1.0
    d = math.sqrt(2 * 50.0 * 0.1**2)
    assert abs(oks(pose([[10.0 + d, 20.0]]), gt, p) - math.exp(-1)) < 1e-6


def test_oks_invisible_keypoints_ignored():
    gt = pose([[1, 1], [5, 5], [9, 9]], v=[2, 0, 1])
    p = OksParams.uniform(3)
    a = oks(pose([[1.5, 1], [5, 5], [9, 8]]), gt, p)
    b = oks(pose([[1.5, 1], [500, -40], [9, 8]]), gt, p)
    assert a == b
    assert oks(gt, pose([[0, 0]] * 3, v=[0, 0, 0]), p) is None


@given(dx=st.floats(-100, 100), dy=st.floats(-100, 100), seed=st.integers(0, 1000))
@settings(max_examples=60, deadline=None)
def test_oks_translation_invariant(dx, dy, seed):
    rng = np.random.default_rng(seed)
    g, q = rng.uniform(0, 50, (4, 2)), rng.uniform(0, 50, (4, 2))
    p = OksParams(rng.uniform(0.03, 0.1, 4))
    a = oks(pose(q), pose(g), p)
    b = oks(pose(q + [dx, dy]), pose(g + [dx, dy]), p)
    assert a == pytest.approx(b, abs=1e-12)


@given(d1=st.floats(0, 30), d2=st.floats(0, 30))
@settings(max_examples=60, deadline=None)
def test_oks_monotone_in_distance(d1, d2):
    lo, hi = sorted((d1, d2))
    gt = pose([[0, 0], [10, 10]])
    p = OksParams.uniform(2)
    assert oks(pose([[lo, 0], [10, 10]]), gt, p) >= oks(pose([[hi, 0], [10, 10]]), gt, p)


def test_oks_params_validated():
    with pytest.raises(ValueError):
        OksParams([0.1, 0.0])
    with pytest.raises(ValueError):
        OksParams([0.1], thresholds=[0.5, 0.5])
    with pytest.raises(ValueError):
        OksParams([0.1], thresholds=[0.5, 1.2])


def test_ap_perfect_empty_and_undefined(caplog):
    gts = [pose([[i, i], [i + 3, i]], image_id=i) for i in range(5)]
    p = OksParams.uniform(2)
    preds = [pose(g.keypoints[:, :2], score=1.0, image_id=g.image_id) for g in gts]
    assert average_precision(preds, gts, p).ap == 1.0
    assert average_precision([], gts, p).ap == 0.0
    assert math.isnan(average_precision(preds, [], p).ap)
    assert "undefined" in caplog.text


def _pred_with_oks(gt, target, sigma, score):
    # single keypoint: oks = exp(-d^2 / (2 area sigma^2))
    d = math.sqrt(-2 * gt.area * sigma**2 * math.log(target))
    return pose(gt.keypoints[:, :2] + [d, 0], score=score, image_id=gt.image_id)


def hand_ap(tp_flags, npos):
    """Precision envelope sampled on the 101-point recall grid, enumerated by hand."""
    tp = fp = 0
    pr = []
    for f in tp_flags:
        tp += f
        fp += not f
        pr.append((tp / npos, tp / (tp + fp)))
    total = 0.0
    for r in np.linspace(0, 1, 101):
        ps = [p for rc, p in pr if rc >= r - 1e-12]
        total += max(ps) if ps else 0.0
    return total / 101


def test_ap_straddling_threshold_matches_hand_enumeration():
    sigma = 0.1
    p = OksParams.uniform(1, sigma, thresholds=[0.75])
    gts = [pose([[10.0 * i, 5.0]], image_id=i) for i in range(5)]
    # OKS values above/below 0.75 in descending score order: hit, miss, hit, hit, miss
    oks_vals = [0.9, 0.6, 0.8, 0.76, 0.74]
    preds = [_pred_with_oks(g, o, sigma, score=1.0 - 0.1 * i) for i, (g, o) in enumerate(zip(gts, oks_vals))]
    res = average_precision(preds, gts, p)
    expected = hand_ap([True, False, True, True, False], 5)
    assert res.ap == pytest.approx(expected, abs=1e-12)
    _, prec, rec = res.per_threshold[0.75]
    np.testing.assert_allclose(rec, [0.2, 0.2, 0.4, 0.6, 0.6])


def test_ap_greedy_matching_by_score():
    # one gt, two preds: the higher-scored one is matched even though worse
    p = OksParams.uniform(1, 0.1, thresholds=[0.5])
    gt = pose([[0.0, 0.0]])
    good = _pred_with_oks(gt, 0.95, 0.1, score=0.2)
    ok = _pred_with_oks(gt, 0.6, 0.1, score=0.9)
    res = average_precision([good, ok], [gt], p)
    _, prec, rec = res.per_threshold[0.5]
    np.testing.assert_allclose(prec, [1.0, 0.5])


@given(seed=st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_ap_invariant_to_monotone_score_rescaling(seed):
    rng = np.random.default_rng(seed)
    gts = [pose(rng.uniform(0, 40, (3, 2)), image_id=i % 3, area=rng.uniform(50, 200)) for i in range(6)]
    preds = [
        pose(g.keypoints[:, :2] + rng.normal(0, 2, (3, 2)), score=float(rng.random()), image_id=g.image_id)
        for g in gts + gts[:2]
    ]
    p = OksParams.uniform(3)
    a = average_precision(preds, gts, p).ap
    for q in preds:
        q.score = math.exp(3 * q.score) + 7
    assert average_precision(preds, gts, p).ap == a


def test_pckh_cases():
    gt = pose([[0, 0], [10, 0], [0, 10]], head_size=4.0)
    assert pckh([gt], [gt]) == 1.0
    off = pose(gt.keypoints[:, :2] + [2.0 + 1e-9, 0])
    assert pckh([off], [gt]) == 0.0
    on = pose(gt.keypoints[:, :2] + [2.0, 0])
    assert pckh([on], [gt]) == 1.0


def test_pckh_random_vs_recount():
    rng = np.random.default_rng(0)
    gts = [pose(rng.uniform(0, 50, (5, 2)), v=rng.integers(0, 3, 5), head_size=rng.uniform(3, 8)) for _ in range(30)]
    preds = [pose(g.keypoints[:, :2] + rng.normal(0, 3, (5, 2))) for g in gts]
    hit = tot = 0
    for p, g in zip(preds, gts):
        for j in range(5):
            if g.keypoints[j, 2] > 0:
                tot += 1
                dx, dy = p.keypoints[j, :2] - g.keypoints[j, :2]
                hit += math.hypot(dx, dy) <= 0.5 * g.head_size
    assert pckh(preds, gts) == hit / tot


def test_pckh_skips_missing_head_size():
    gt = pose([[0, 0]])
    good = pose([[0, 0]], head_size=2.0)
    with pytest.warns(UserWarning, match="head_size"):
        assert pckh([gt, good], [gt, good]) == 1.0
