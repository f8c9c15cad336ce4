import numpy as np
import pytest

from memtrack.boxes import BBox, iou, iou_array
from memtrack.metrics import aggregate, metrics, metrics_from_ious


def brute_force(preds, gts):
    """Straight per-frame loops, written independently of the vectorized code."""
    n = len(preds)
    ious, dists, ndists = [], [], []
    for p, g in zip(preds, gts):
        px0, py0, pw, ph = p
        gx0, gy0, gw, gh = g
        iw = max(0.0, min(px0 + pw, gx0 + gw) - max(px0, gx0))
        ih = max(0.0, min(py0 + ph, gy0 + gh) - max(py0, gy0))
        inter = iw * ih
        area_p = (px0 + pw - px0) * (py0 + ph - py0)
        area_g = (gx0 + gw - gx0) * (gy0 + gh - gy0)
        ious.append(inter / (area_p + area_g - inter))
        d = ((px0 + pw / 2 - gx0 - gw / 2) ** 2 + (py0 + ph / 2 - gy0 - gh / 2) ** 2) ** 0.5
        dists.append(d)
        ndists.append(d / (gw * gh) ** 0.5)
    success = 0.0
    for k in range(101):
        tau = k / 100
        success += sum(1 for v in ious if v > tau) / n
    return {
        "success_auc": success / 101,
        "AO": sum(ious) / n,
        "SR@0.5": sum(1 for v in ious if v > 0.5) / n,
        "SR@0.75": sum(1 for v in ious if v > 0.75) / n,
        "precision": sum(1 for d in dists if d <= 20) / n,
        "norm_precision": sum(1 for d in ndists if d <= 0.2) / n,
    }


def test_iou_examples():
    a = BBox(0, 0, 2, 2)
    assert iou(a, a) == 1.0
    assert iou(a, BBox(5, 5, 1, 1)) == 0.0
    assert iou(a, BBox(1, 0, 2, 2)) == pytest.approx(1 / 3)


def test_hand_ious():
    m = metrics_from_ious(np.array([1.0, 0.6, 0.2]))
    assert m["AO"] == pytest.approx(0.6)
    assert m["SR@0.5"] == pytest.approx(2 / 3)
    assert m["SR@0.75"] == pytest.approx(1 / 3)


def test_perfect_and_disjoint():
    gts = [BBox(10, 10, 20, 30), BBox(40, 5, 8, 8)]
    m = metrics(gts, gts)
    # IoU 1 is not > 1, so the last of the 101 thresholds never counts
    assert m.pop("success_auc") == pytest.approx(100 / 101)
    assert all(v == 1.0 for v in m.values())
    far = [BBox(500, 500, 20, 30), BBox(600, 600, 8, 8)]
    m = metrics(far, gts)
    assert m["AO"] == m["SR@0.5"] == m["SR@0.75"] == m["success_auc"] == 0.0


def test_empty_and_mismatched():
    with pytest.raises(ValueError):
        metrics([], [])
    with pytest.raises(ValueError):
        metrics([BBox(0, 0, 1, 1)], [])


def test_matches_brute_force_on_random_pairs():
    rng = np.random.default_rng(0)
    n = 1000
    gts = np.column_stack([rng.uniform(0, 100, (n, 2)), rng.uniform(5, 50, (n, 2))])
    preds = gts + rng.normal(0, 8, gts.shape)
    preds[:, 2:] = np.abs(preds[:, 2:]) + 1
    preds[::7] = gts[::7]  # exact hits exercise the IoU == 1 and threshold edges
    got = metrics(preds, gts)
    want = brute_force(preds.tolist(), gts.tolist())
    # threshold counts must agree exactly; means may differ in the last bits from summation order
    for k in ("SR@0.5", "SR@0.75", "precision", "norm_precision"):
        assert got[k] == want[k], k
    for k in ("AO", "success_auc"):
        assert got[k] == pytest.approx(want[k], abs=1e-12), k
    np.testing.assert_allclose(
        iou_array(preds, gts), [iou(BBox(*p), BBox(*g)) for p, g in zip(preds, gts)], rtol=1e-12
    )


def test_aggregate_is_unweighted_mean():
    rows = [{"AO": 0.5, "frames": 10}, {"AO": 1.0, "frames": 2}]
    assert aggregate(rows, ["AO"]) == {"AO": 0.75}
