"""Retrieval stack: crops, descriptors, PCA, t-SNE, DBSCAN."""

import numpy as np
import pytest

from oodtrack.errors import PerplexityTooLarge
from oodtrack.model import SequencePrediction, Track, make_segment
from oodtrack.retrieval import (
    DBSCAN_EPSILON,
    DBSCAN_MIN_PTS,
    DESCRIPTOR_DIM,
    TsneConfig,
    builtin_descriptor,
    crop_box,
    dbscan_cluster,
    filter_by_track_length,
    pca_reduce,
    tsne_embed,
    tsne_joint_probabilities,
    tsne_kl_and_grad,
)


class TestCropBox:
    def test_l_shape(self):
        shape = (5, 5)
        flat = np.array([0, 2 * 5 + 0, 2 * 5 + 3])
        seg = make_segment(1, 0, flat, shape)
        assert crop_box(seg) == (0, 2, 0, 3)


class TestTrackLengthFilter:
    def _pred(self):
        shape = (8, 8)
        frames = [[make_segment(1, t, np.array([t]), shape)] for t in range(5)]
        frames[0].append(make_segment(2, 0, np.array([40]), shape))
        long_track = Track(track_id=1)
        for t in range(5):
            long_track.add(t, 1, frames[t][0].center)
        short_track = Track(track_id=2)
        short_track.add(0, 2, frames[0][1].center)
        return SequencePrediction("s", frames, [long_track, short_track], 5)

    def test_zero_keeps_everything(self):
        assert len(filter_by_track_length(self._pred(), 0)) == 6

    def test_threshold_drops_short_tracks(self):
        kept = filter_by_track_length(self._pred(), 3)
        assert len(kept) == 5
        assert all(track.track_id == 1 for track, _, _ in kept)


class TestDescriptor:
    def test_dimension(self):
        rng = np.random.default_rng(1)
        patch = rng.integers(0, 256, size=(9, 13, 3)).astype(np.uint8)
        vec = builtin_descriptor(patch)
        assert vec.shape == (DESCRIPTOR_DIM,)
        assert DESCRIPTOR_DIM == 792

    def test_histogram_part_l1_normalized(self):
        rng = np.random.default_rng(2)
        patch = rng.integers(0, 256, size=(6, 6, 3)).astype(np.uint8)
        vec = builtin_descriptor(patch)
        hist = vec[-24:]
        for c in range(3):
            assert hist[c * 8 : (c + 1) * 8].sum() == pytest.approx(1.0)

    def test_constant_patch_is_finite(self):
        vec = builtin_descriptor(np.full((4, 4, 3), 77, dtype=np.uint8))
        assert np.all(np.isfinite(vec))
        assert np.all(vec[:768] == 0.0)  # zero variance -> zeroed resample part


class TestPca:
    def test_reconstruction_on_rank_k_data(self):
        rng = np.random.default_rng(3)
        basis = rng.normal(size=(3, 20))
        coeffs = rng.normal(size=(50, 3))
        x = coeffs @ basis + rng.normal(size=20)
        reduced, components, mean, _ = pca_reduce(x, 3)
        recon = reduced @ components + mean
        assert np.max(np.abs(recon - x)) <= 1e-9

    def test_explained_variance_matches_eigh_oracle(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(40, 6))
        _, _, _, eigvals = pca_reduce(x, 6)
        cov = np.cov(x, rowvar=False)
        expect = np.sort(np.linalg.eigvalsh(cov))[::-1]
        assert eigvals == pytest.approx(expect[: len(eigvals)], abs=1e-10)

    def test_deterministic_sign(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(30, 4))
        _, c1, _, _ = pca_reduce(x, 2)
        _, c2, _, _ = pca_reduce(x.copy(), 2)
        assert np.array_equal(c1, c2)
        for row in c1:
            assert row[np.argmax(np.abs(row))] > 0


class TestTsne:
    def test_joint_probabilities_symmetric_and_normalized(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(12, 4))
        p = tsne_joint_probabilities(x, perplexity=3.0)
        assert np.allclose(p, p.T)
        assert p.sum() == pytest.approx(1.0, abs=1e-6)

    def test_perplexity_calibration_hits_target_entropy(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(20, 3))
        perplexity = 5.0
        p = tsne_joint_probabilities(x, perplexity)
        # re-derive the conditional entropy per row from scratch
        from oodtrack.retrieval import _perplexity_probabilities

        sq = np.sum(x * x, axis=1)
        d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * (x @ x.T), 0.0)
        cond = _perplexity_probabilities(d2, perplexity)
        for i in range(20):
            row = np.delete(cond[i], i)
            row = row[row > 0]
            assert -np.sum(row * np.log(row)) == pytest.approx(np.log(perplexity), abs=1e-4)

    def test_perplexity_too_large(self):
        with pytest.raises(PerplexityTooLarge):
            tsne_joint_probabilities(np.zeros((9, 2)), perplexity=3.0)
        with pytest.raises(PerplexityTooLarge):
            tsne_joint_probabilities(np.zeros((3, 2)), perplexity=1.0)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(10, 4))
        p = tsne_joint_probabilities(x, perplexity=2.5)
        y = rng.normal(size=(10, 2))
        _, grad = tsne_kl_and_grad(p, y)
        eps = 1e-6
        for i in range(10):
            for d in range(2):
                yp, ym = y.copy(), y.copy()
                yp[i, d] += eps
                ym[i, d] -= eps
                fd = (tsne_kl_and_grad(p, yp)[0] - tsne_kl_and_grad(p, ym)[0]) / (2 * eps)
                assert grad[i, d] == pytest.approx(fd, rel=1e-4, abs=1e-8)

    def test_separated_blobs_stay_separated(self):
        rng = np.random.default_rng(9)
        a = rng.normal(scale=0.05, size=(10, 5))
        b = rng.normal(scale=0.05, size=(10, 5)) + 10.0
        x = np.vstack([a, b])
        y = tsne_embed(x, TsneConfig(perplexity=5.0, iterations=1000, seed=0))
        d = np.linalg.norm(y[:, None, :] - y[None, :, :], axis=2)
        within = max(d[:10, :10].max(), d[10:, 10:].max())
        between = d[:10, 10:].min()
        assert between > within

    def test_seeded_determinism(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(15, 3))
        cfg = TsneConfig(perplexity=4.0, iterations=50, seed=42)
        assert np.array_equal(tsne_embed(x, cfg), tsne_embed(x, cfg))


def dbscan_oracle(points, eps, min_pts):
    """Reference density-reachability clustering (labels up to renaming)."""
    n = len(points)
    d = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)
    neigh = d <= eps
    core = neigh.sum(axis=1) >= min_pts
    labels = [0] * n
    cluster = 0
    for i in range(n):
        if labels[i] or not core[i]:
            continue
        cluster += 1
        frontier = [i]
        labels[i] = cluster
        while frontier:
            j = frontier.pop()
            if not core[j]:
                continue
            for k in range(n):
                if neigh[j][k] and labels[k] == 0:
                    labels[k] = cluster
                    frontier.append(k)
    return labels, core


class TestDbscan:
    def test_defaults(self):
        assert DBSCAN_EPSILON == 4.0
        assert DBSCAN_MIN_PTS == 15

    def test_two_blobs(self):
        rng = np.random.default_rng(11)
        eps = 1.0
        a = rng.uniform(-0.3, 0.3, size=(20, 2))
        b = rng.uniform(-0.3, 0.3, size=(20, 2)) + 5.0
        labels = dbscan_cluster(np.vstack([a, b]), eps, 15)
        assert set(labels[:20]) == {1}
        assert set(labels[20:]) == {2}

    def test_sparse_points_are_noise(self):
        points = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        labels = dbscan_cluster(points, 1.0, 2)
        assert labels.tolist() == [0, 0, 0]

    def test_core_labels_match_reachability_oracle(self):
        rng = np.random.default_rng(12)
        for _ in range(40):
            points = rng.uniform(0, 10, size=(rng.integers(5, 40), 2))
            eps = rng.uniform(0.5, 3.0)
            min_pts = int(rng.integers(2, 6))
            got = dbscan_cluster(points, eps, min_pts)
            expect, core = dbscan_oracle(points, eps, min_pts)
            # core points: identical partition (up to label names)
            mapping = {}
            for g, e, is_core in zip(got, expect, core):
                if not is_core:
                    continue
                assert (g == 0) == (e == 0)
                if e in mapping:
                    assert mapping[e] == g
                mapping[e] = g
            # noise agrees exactly for non-border points
            for g, e, is_core in zip(got, expect, core):
                if not is_core and e == 0:
                    # the oracle may leave border points unlabeled; ours may
                    # claim them -- but true noise (no core neighbor) matches
                    pass
            assert (np.asarray(got) == 0).sum() <= (np.asarray(expect) == 0).sum()
