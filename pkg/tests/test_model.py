"""Core container types: RLE codec, centers, segments, tracks."""

import numpy as np
import pytest

from oodtrack.errors import EmptySegment, IllegalLabel, NonFiniteValue, SizeMismatch
from oodtrack.model import (
    FrameTruth,
    ScoreMap,
    SequencePrediction,
    Track,
    geometric_center,
    interior_mask,
    make_segment,
    rle_decode,
    rle_encode,
)


class TestRle:
    def test_empty(self):
        assert rle_encode(np.array([], dtype=np.int64)).shape == (0, 2)
        assert rle_decode(np.zeros((0, 2))).size == 0

    def test_single_run(self):
        runs = rle_encode(np.array([3, 4, 5]))
        assert runs.tolist() == [[3, 3]]

    def test_split_runs(self):
        runs = rle_encode(np.array([0, 1, 5, 6, 7, 9]))
        assert runs.tolist() == [[0, 2], [5, 3], [9, 1]]

    def test_round_trip_random(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            n = rng.integers(1, 200)
            flat = np.sort(rng.choice(1000, size=n, replace=False))
            assert np.array_equal(rle_decode(rle_encode(flat)), flat)


class TestGeometricCenter:
    def test_hand_case(self):
        # mean of (1,4),(2,6),(3,8)
        assert geometric_center(np.array([[1, 4], [2, 6], [3, 8]])) == (2.0, 6.0)

    def test_single_pixel(self):
        assert geometric_center(np.array([[5, 7]])) == (5.0, 7.0)

    def test_empty_raises(self):
        with pytest.raises(EmptySegment):
            geometric_center(np.zeros((0, 2)))

    def test_matches_mean_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            coords = rng.integers(0, 100, size=(rng.integers(1, 30), 2))
            v, h = geometric_center(coords)
            assert v == pytest.approx(sum(c[0] for c in coords) / len(coords), abs=1e-12)
            assert h == pytest.approx(sum(c[1] for c in coords) / len(coords), abs=1e-12)


class TestScoreMap:
    def test_rejects_nan(self):
        values = np.zeros((4, 4), dtype=np.float32)
        values[1, 1] = np.nan
        with pytest.raises(NonFiniteValue):
            ScoreMap(values)

    def test_rejects_1d(self):
        with pytest.raises(SizeMismatch):
            ScoreMap(np.zeros(5, dtype=np.float32))

    def test_immutable(self):
        sm = ScoreMap(np.zeros((3, 3), dtype=np.float32))
        with pytest.raises(ValueError):
            sm.values[0, 0] = 1.0


class TestFrameTruth:
    def _masks(self):
        semantic = np.ones((6, 6), dtype=np.uint8)
        semantic[0, :] = 0
        instance = np.zeros((6, 6), dtype=np.int32)
        class_ids = np.zeros((6, 6), dtype=np.int32)
        semantic[2:4, 2:4] = 2
        instance[2:4, 2:4] = 1
        class_ids[2:4, 2:4] = 5
        return semantic, instance, class_ids

    def test_roi_and_ood(self):
        truth = FrameTruth(*self._masks())
        assert truth.roi.sum() == 30
        assert truth.ood_mask.sum() == 4
        assert truth.instance_ids() == [1]
        assert truth.instance_class(1) == 5

    def test_instance_must_cover_ood(self):
        semantic, instance, class_ids = self._masks()
        instance = instance.copy()
        instance[2, 2] = 0
        with pytest.raises(IllegalLabel):
            FrameTruth(semantic, instance, class_ids)

    def test_min_depth(self):
        semantic, instance, class_ids = self._masks()
        depth = np.full((6, 6), 10.0, dtype=np.float32)
        depth[3, 3] = 2.5
        truth = FrameTruth(semantic, instance, class_ids, depth=depth)
        assert truth.instance_min_depth(1) == 2.5


class TestSegment:
    def test_make_segment_geometry(self):
        # L shape in a 5x5 frame: (0,0), (2,0), (2,3)
        shape = (5, 5)
        flat = np.array([0, 2 * 5 + 0, 2 * 5 + 3])
        seg = make_segment(1, 0, flat, shape)
        assert seg.bbox == (0, 2, 0, 3)
        assert seg.size == 3
        assert seg.center == pytest.approx((4 / 3, 1.0))
        assert seg.interior_size == 0

    def test_interior_of_solid_block(self):
        shape = (6, 6)
        mask = np.zeros(shape, dtype=bool)
        mask[1:5, 1:5] = True
        seg = make_segment(1, 0, np.flatnonzero(mask.ravel()), shape)
        assert seg.size == 16
        assert seg.interior_size == 4  # the 2x2 core
        assert seg.boundary_size == 12

    def test_empty_rejected(self):
        with pytest.raises(EmptySegment):
            make_segment(1, 0, np.array([]), (4, 4))

    def test_mask_round_trip(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            mask = rng.random((8, 8)) < 0.4
            if not mask.any():
                continue
            seg = make_segment(1, 0, np.flatnonzero(mask.ravel()), (8, 8))
            assert np.array_equal(seg.mask(), mask)


class TestInteriorMask:
    def test_matches_neighbor_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            mask = rng.random((7, 9)) < 0.6
            got = interior_mask(mask)
            h, w = mask.shape
            for v in range(h):
                for u in range(w):
                    inside = mask[v, u] and 0 < v < h - 1 and 0 < u < w - 1
                    if inside:
                        for dv in (-1, 0, 1):
                            for du in (-1, 0, 1):
                                inside = inside and mask[v + dv, u + du]
                    assert got[v, u] == inside


class TestTrack:
    def test_monotone_frames_enforced(self):
        track = Track(track_id=1)
        track.add(0, 1, (0.0, 0.0))
        track.add(2, 1, (1.0, 0.0))
        with pytest.raises(SizeMismatch):
            track.add(2, 2, (2.0, 0.0))
        assert track.length == 2
        assert track.last_frame == 2


class TestSequencePrediction:
    def _seg(self, frame, seg_id):
        return make_segment(seg_id, frame, np.array([0]), (4, 4))

    def test_validate_ok(self):
        frames = [[self._seg(0, 1)], [self._seg(1, 1)]]
        track = Track(track_id=1)
        track.add(0, 1, (0.0, 0.0))
        track.add(1, 1, (0.0, 0.0))
        SequencePrediction("s", frames, [track], 2).validate()

    def test_missing_segment_rejected(self):
        track = Track(track_id=1)
        track.add(0, 9, (0.0, 0.0))
        with pytest.raises(SizeMismatch):
            SequencePrediction("s", [[self._seg(0, 1)]], [track], 1).validate()

    def test_double_ownership_rejected(self):
        frames = [[self._seg(0, 1)]]
        t1, t2 = Track(track_id=1), Track(track_id=2)
        t1.add(0, 1, (0.0, 0.0))
        t2.add(0, 1, (0.0, 0.0))
        with pytest.raises(SizeMismatch):
            SequencePrediction("s", frames, [t1, t2], 1).validate()
