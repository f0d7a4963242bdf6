"""Pixel and segment metrics against brute-force oracles."""

import numpy as np
import pytest

from oodtrack.detection_metrics import (
    DEPTH_BINS,
    KAPPA_GRID,
    adjusted_siou,
    depth_bin,
    group_gt_objects,
    grouped_report,
    pixel_metrics,
    segment_metrics,
)
from oodtrack.errors import EmptyGt, MissingMetadata, NoNegatives, NoPositives
from oodtrack.model import FrameTruth, ScoreMap, make_segment
from oodtrack.segmentation import connected_components


def make_truth(ood, shape=(8, 8), void=None, classes=None, depth=None):
    """Build a FrameTruth from a boolean OOD mask (one instance per component)."""
    semantic = np.ones(shape, dtype=np.uint8)
    if void is not None:
        semantic[void] = 0
    semantic[ood] = 2
    instance = np.zeros(shape, dtype=np.int32)
    class_ids = np.zeros(shape, dtype=np.int32)
    for seg in connected_components(ood):
        m = seg.mask()
        instance[m] = seg.segment_id
        class_ids[m] = classes.get(seg.segment_id, 1) if classes else 1
    return FrameTruth(semantic, instance, class_ids, depth=depth)


def sweep_auprc_oracle(scores, labels):
    """Exhaustive threshold sweep: predict score >= cut for every distinct score,
    trapezoidal area over (recall, precision) with a leading (0, p_first) point."""
    pts = []
    for cut in sorted(set(scores.tolist()), reverse=True):
        pred = scores >= cut
        tp = int(np.sum(pred & labels))
        fp = int(np.sum(pred & ~labels))
        fn = int(np.sum(~pred & labels))
        pts.append((tp / (tp + fn), tp / (tp + fp)))
    recalls = [0.0] + [r for r, _ in pts]
    precisions = [pts[0][1]] + [p for _, p in pts]
    area = 0.0
    for i in range(1, len(recalls)):
        area += (recalls[i] - recalls[i - 1]) * (precisions[i] + precisions[i - 1]) / 2
    return area


class TestPixelMetrics:
    def test_perfect_separation(self):
        values = np.zeros((4, 4), dtype=np.float32)
        values[0, :2] = 0.9
        ood = values > 0.5
        res = pixel_metrics([ScoreMap(values)], [make_truth(ood, (4, 4))])
        assert res.auprc == 1.0
        assert res.fpr95 == 0.0

    def test_void_pixels_never_count(self):
        values = np.zeros((4, 4), dtype=np.float32)
        values[0, 0] = 0.9
        ood = values > 0.5
        void = np.zeros((4, 4), dtype=bool)
        void[3, 3] = True
        base = pixel_metrics([ScoreMap(values)], [make_truth(ood, (4, 4), void=void)])
        poisoned = values.copy()
        poisoned[3, 3] = 0.99  # poison a VOID pixel
        res = pixel_metrics([ScoreMap(poisoned)], [make_truth(ood, (4, 4), void=void)])
        assert res.auprc == base.auprc
        assert res.fpr95 == base.fpr95

    def test_needs_both_classes(self):
        values = np.zeros((2, 2), dtype=np.float32)
        with pytest.raises(NoPositives):
            pixel_metrics([ScoreMap(values)], [make_truth(np.zeros((2, 2), bool), (2, 2))])
        with pytest.raises(NoNegatives):
            pixel_metrics([ScoreMap(values)], [make_truth(np.ones((2, 2), bool), (2, 2))])

    def test_matches_sweep_oracle(self):
        rng = np.random.default_rng(77)
        for _ in range(120):
            values = np.round(rng.random((8, 8)), 2).astype(np.float32)  # force ties
            ood = rng.random((8, 8)) < 0.3
            if not ood.any() or ood.all():
                continue
            res = pixel_metrics([ScoreMap(values)], [make_truth(ood, (8, 8))])
            oracle = sweep_auprc_oracle(values.ravel().astype(float), ood.ravel())
            assert res.auprc == pytest.approx(oracle, abs=1e-9)

    def test_fpr95_definition(self):
        # positives at 0.9 and 0.2; negatives at 0.5 and 0.1. TPR reaches 0.95
        # only once the 0.2 positive is included, which also admits the 0.5 FP.
        values = np.array([[0.9, 0.2], [0.5, 0.1]], dtype=np.float32)
        ood = np.array([[True, True], [False, False]])
        res = pixel_metrics([ScoreMap(values)], [make_truth(ood, (2, 2))])
        assert res.fpr95 == pytest.approx(0.5)


class TestAdjustedSiou:
    def test_other_gt_excluded_from_union(self):
        # GT object A = {0,1}, other object B = {2}; prediction covers {0,1,2,3}.
        shape = (2, 4)
        pred = make_segment(1, 0, np.array([0, 1, 2, 3]), shape)
        got = adjusted_siou(np.array([0, 1]), [pred], np.array([2]))
        # union = {0,1,2,3} minus other {2} = 3 pixels; intersection = 2
        assert got == pytest.approx(2 / 3)

    def test_no_overlap_is_zero(self):
        pred = make_segment(1, 0, np.array([5]), (2, 4))
        assert adjusted_siou(np.array([0, 1]), [pred], np.array([])) == 0.0

    def test_empty_gt_rejected(self):
        with pytest.raises(EmptyGt):
            adjusted_siou(np.array([]), [], np.array([]))

    def test_matches_set_oracle(self):
        rng = np.random.default_rng(50)
        for _ in range(120):
            shape = (16, 16)
            n = shape[0] * shape[1]
            gt = set(rng.choice(n, size=rng.integers(1, 20), replace=False).tolist())
            other = set(rng.choice(n, size=rng.integers(0, 20), replace=False).tolist()) - gt
            segs = []
            for k in range(rng.integers(0, 4)):
                pix = set(rng.choice(n, size=rng.integers(1, 25), replace=False).tolist())
                segs.append(make_segment(k + 1, 0, np.array(sorted(pix)), shape))
            got = adjusted_siou(
                np.array(sorted(gt)), segs, np.array(sorted(other), dtype=np.int64)
            )
            union_pred = set()
            for seg in segs:
                pix = set(seg.flat_indices().tolist())
                if pix & gt:
                    union_pred |= pix
            if not union_pred:
                assert got == 0.0
            else:
                expected = len(gt & union_pred) / len((gt | union_pred) - other)
                assert got == pytest.approx(expected, abs=1e-12)


class TestSegmentMetrics:
    def test_kappa_grid(self):
        assert KAPPA_GRID == (0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75)

    def test_perfect_prediction(self):
        ood = np.zeros((8, 8), dtype=bool)
        ood[2:5, 2:5] = True
        truth = make_truth(ood)
        segs = connected_components(ood)
        res = segment_metrics([segs], [truth])
        assert res.f1_bar == 1.0
        for _, tp, fn, fp, f1 in res.per_kappa:
            assert (tp, fn, fp, f1) == (1, 0, 0, 1.0)

    def test_counts_match_definition_oracle(self):
        rng = np.random.default_rng(61)
        for _ in range(100):
            ood = rng.random((16, 16)) < 0.15
            pred_mask = rng.random((16, 16)) < 0.15
            truth = make_truth(ood, (16, 16))
            segs = connected_components(pred_mask)
            res = segment_metrics([segs], [truth])
            ood_flat = set(np.flatnonzero(ood.ravel()).tolist())
            for kappa, tp, fn, fp, f1 in res.per_kappa:
                exp_tp = exp_fn = 0
                for inst in truth.instance_ids():
                    gt = set(np.flatnonzero((truth.instance == inst).ravel()).tolist())
                    union_pred = set()
                    for seg in segs:
                        pix = set(seg.flat_indices().tolist())
                        if pix & gt:
                            union_pred |= pix
                    if union_pred:
                        siou = len(gt & union_pred) / len((gt | union_pred) - (ood_flat - gt))
                    else:
                        siou = 0.0
                    if siou > kappa:
                        exp_tp += 1
                    else:
                        exp_fn += 1
                exp_fp = 0
                for seg in segs:
                    pix = set(seg.flat_indices().tolist())
                    if len(pix & ood_flat) / len(pix) <= kappa:
                        exp_fp += 1
                assert (tp, fn, fp) == (exp_tp, exp_fn, exp_fp)
                denom = 2 * exp_tp + exp_fn + exp_fp
                assert f1 == pytest.approx(2 * exp_tp / denom if denom else 1.0, abs=1e-12)

    def test_f1_non_increasing_in_kappa(self):
        rng = np.random.default_rng(3)
        ood = rng.random((12, 12)) < 0.2
        pred = rng.random((12, 12)) < 0.2
        if not ood.any():
            ood[0, 0] = True
        res = segment_metrics([connected_components(pred)], [make_truth(ood, (12, 12))])
        f1s = [row[4] for row in res.per_kappa]
        assert all(a >= b - 1e-12 for a, b in zip(f1s, f1s[1:]))


class TestDepthBins:
    def test_bin_edges(self):
        assert DEPTH_BINS[0] == (0.0, 4.0)
        assert DEPTH_BINS[-1] == (40.0, 65.0)
        assert depth_bin(4.0) == 0  # half-open (lo, hi]: 4.0 falls in (0, 4]
        assert depth_bin(4.0 + 1e-9) == 1
        assert depth_bin(65.0) == 6
        assert depth_bin(65.1) is None
        assert depth_bin(0.0) is None

    def test_grouping_by_class_and_depth(self):
        ood = np.zeros((8, 8), dtype=bool)
        ood[1:3, 1:3] = True
        ood[5:7, 5:7] = True
        depth = np.full((8, 8), 30.0, dtype=np.float32)
        depth[1:3, 1:3] = 3.5
        truth = make_truth(ood, (8, 8), classes={1: 2, 2: 7}, depth=depth)
        by_class = group_gt_objects([truth], "class")
        assert set(by_class) == {"class:2", "class:7"}
        by_depth = group_gt_objects([truth], "depth")
        assert set(by_depth) == {"depth:(0,4]", "depth:(20,40]"}

    def test_depth_grouping_requires_depth(self):
        ood = np.zeros((4, 4), dtype=bool)
        ood[0, 0] = True
        with pytest.raises(MissingMetadata):
            group_gt_objects([make_truth(ood, (4, 4))], "depth")


class TestGroupedReport:
    def test_per_class_counts_match_filtered_recomputation(self):
        ood = np.zeros((10, 10), dtype=bool)
        ood[1:4, 1:4] = True  # class 1, predicted
        ood[6:9, 6:9] = True  # class 2, missed
        truth = make_truth(ood, (10, 10), classes={1: 1, 2: 2})
        pred_mask = np.zeros((10, 10), dtype=bool)
        pred_mask[1:4, 1:4] = True
        segs = connected_components(pred_mask)
        values = np.where(pred_mask, 0.9, 0.0).astype(np.float32)
        out = grouped_report([ScoreMap(values)], [segs], [truth], "class")
        assert out["class:1"]["segment"].f1_bar == 1.0
        assert out["class:2"]["segment"].per_kappa[0][2] == 1  # one FN
        assert out["class:2"]["segment"].per_kappa[0][1] == 0  # no TP
