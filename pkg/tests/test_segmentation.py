"""Thresholding and connected components against a flood-fill oracle."""

import numpy as np
import pytest

from oodtrack.model import ScoreMap, interior_mask
from oodtrack.segmentation import (
    TAU_CWL,
    TAU_SOS,
    connected_components,
    extract_segments,
    segment_score_stats,
    threshold_mask,
)


def flood_fill_components(mask):
    """Independent 8-connected labeling by BFS flood fill, scan order."""
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=int)
    current = 0
    for v0 in range(h):
        for u0 in range(w):
            if not mask[v0, u0] or labels[v0, u0]:
                continue
            current += 1
            stack = [(v0, u0)]
            labels[v0, u0] = current
            while stack:
                v, u = stack.pop()
                for dv in (-1, 0, 1):
                    for du in (-1, 0, 1):
                        nv, nu = v + dv, u + du
                        if 0 <= nv < h and 0 <= nu < w and mask[nv, nu] and not labels[nv, nu]:
                            labels[nv, nu] = current
                            stack.append((nv, nu))
    return labels, current


class TestThresholdMask:
    def test_strict_inequality(self):
        score = ScoreMap(np.array([[0.72, 0.7200001], [0.9, 0.1]], dtype=np.float32))
        roi = np.ones((2, 2), dtype=bool)
        mask = threshold_mask(score, roi, TAU_SOS)
        assert mask.tolist() == [[False, True], [True, False]]

    def test_roi_excludes(self):
        score = ScoreMap(np.full((2, 2), 0.99, dtype=np.float32))
        roi = np.array([[True, False], [False, True]])
        assert threshold_mask(score, roi, TAU_CWL).sum() == 2

    def test_presets(self):
        assert TAU_SOS == 0.72
        assert TAU_CWL == 0.81


class TestConnectedComponents:
    def test_diagonal_is_connected(self):
        mask = np.eye(4, dtype=bool)
        segs = connected_components(mask)
        assert len(segs) == 1
        assert segs[0].size == 4

    def test_scan_order_ids(self):
        mask = np.zeros((5, 5), dtype=bool)
        mask[4, 0] = True  # later in scan order
        mask[0, 4] = True  # earlier
        segs = connected_components(mask)
        assert [s.segment_id for s in segs] == [1, 2]
        assert segs[0].flat_indices().tolist() == [4]
        assert segs[1].flat_indices().tolist() == [20]

    def test_min_size_filter(self):
        mask = np.zeros((6, 6), dtype=bool)
        mask[0, 0] = True
        mask[3:5, 3:5] = True
        segs = connected_components(mask, min_size=2)
        assert len(segs) == 1
        assert segs[0].segment_id == 1
        assert segs[0].size == 4

    def test_matches_flood_fill_oracle(self):
        rng = np.random.default_rng(123)
        for _ in range(150):
            mask = rng.random((16, 16)) < rng.uniform(0.1, 0.6)
            segs = connected_components(mask)
            oracle_labels, oracle_count = flood_fill_components(mask)
            assert len(segs) == oracle_count
            for seg in segs:
                lab_vals = oracle_labels.ravel()[seg.flat_indices()]
                # one oracle component, fully covered
                assert len(set(lab_vals.tolist())) == 1
                assert seg.size == int(np.sum(oracle_labels == lab_vals[0]))

    def test_mean_scores_populated(self):
        values = np.array([[0.9, 0.8], [0.0, 0.0]], dtype=np.float32)
        score = ScoreMap(values)
        segs = connected_components(values > 0.5, score=score)
        assert segs[0].mean_score == pytest.approx(0.85)


class TestScoreStats:
    def test_matches_direct_summation(self):
        rng = np.random.default_rng(9)
        for _ in range(40):
            values = rng.random((10, 10)).astype(np.float32)
            mask = rng.random((10, 10)) < 0.5
            if not mask.any():
                continue
            score = ScoreMap(values)
            seg = connected_components(mask)[0]
            mean, var, mean_b, mean_i = segment_score_stats(seg, score)
            pix = values.ravel()[seg.flat_indices()]
            assert mean == pytest.approx(pix.mean(), abs=1e-7)
            assert var == pytest.approx(pix.var(), abs=1e-7)
            inner = interior_mask(seg.mask()).ravel()[seg.flat_indices()]
            expect_i = pix[inner].mean() if inner.any() else pix.mean()
            expect_b = pix[~inner].mean() if (~inner).any() else pix.mean()
            assert mean_i == pytest.approx(expect_i, abs=1e-7)
            assert mean_b == pytest.approx(expect_b, abs=1e-7)


class TestExtractSegments:
    def test_end_to_end(self):
        values = np.zeros((8, 8), dtype=np.float32)
        values[2:4, 2:4] = 0.95
        values[6, 6] = 0.95
        roi = np.ones((8, 8), dtype=bool)
        roi[6, 6] = False
        segs = extract_segments(ScoreMap(values), roi, TAU_SOS, frame_index=3)
        assert len(segs) == 1
        assert segs[0].frame_index == 3
        assert segs[0].size == 4
        assert segs[0].mean_score == pytest.approx(0.95, abs=1e-6)
