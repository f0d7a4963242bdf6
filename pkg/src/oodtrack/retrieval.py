"""Retrieval of tracked OOD segments: crops, descriptors, PCA, t-SNE, DBSCAN.

Feature vectors are pluggable: externally computed feature files take
precedence, otherwise a lightweight built-in patch descriptor runs on crops
from the frame images. Features are reduced with PCA, embedded into 2-D with
t-SNE and clustered with DBSCAN (defaults epsilon=4.0, minPts=15).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import EmptySegment, PerplexityTooLarge
from .model import NOISE, Segment, SequencePrediction, Track

DBSCAN_EPSILON = 4.0
DBSCAN_MIN_PTS = 15
DESCRIPTOR_DIM = 16 * 16 * 3 + 3 * 8


@dataclass
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    early_exaggeration: float = 12.0
    early_exaggeration_iters: int = 250
    learning_rate: float = 200.0
    seed: int = 0


@dataclass
class RetrievalConfig:
    min_track_length: int = 0
    pca_dims: int = 50
    tsne: TsneConfig = field(default_factory=TsneConfig)
    epsilon: float = DBSCAN_EPSILON
    min_pts: int = DBSCAN_MIN_PTS


def crop_box(seg: Segment) -> tuple[int, int, int, int]:
    """(min v, max v, min h, max h) over the segment's pixels."""
    coords = seg.coords()
    if coords.shape[0] == 0:
        raise EmptySegment("crop box of an empty segment")
    return (
        int(coords[:, 0].min()),
        int(coords[:, 0].max()),
        int(coords[:, 1].min()),
        int(coords[:, 1].max()),
    )


def filter_by_track_length(
    pred: SequencePrediction, min_track_length: int
) -> list[tuple[Track, int, Segment]]:
    """(track, frame index, segment) triples whose track spans at least
    min_track_length frames; min_track_length=0 keeps everything."""
    by_key = {
        (i, seg.segment_id): seg for i, segs in enumerate(pred.frames) for seg in segs
    }
    kept = []
    for track in pred.tracks:
        if track.length < min_track_length:
            continue
        for frame_index, segment_id in track.entries:
            kept.append((track, frame_index, by_key[(frame_index, segment_id)]))
    return kept


def builtin_descriptor(patch: np.ndarray) -> np.ndarray:
    """792-dim descriptor of an RGB patch: 16x16x3 bilinear resample with
    per-channel zero-mean unit-variance, plus a per-channel L1-normalized
    8-bin intensity histogram."""
    patch = np.asarray(patch, dtype=np.float32)
    if patch.ndim != 3 or patch.shape[2] != 3:
        raise ValueError("descriptor expects an (h, w, 3) patch")
    resized = np.stack(
        [
            np.asarray(
                Image.fromarray(patch[:, :, c], mode="F").resize((16, 16), Image.BILINEAR)
            )
            for c in range(3)
        ],
        axis=2,
    )
    normed = resized - resized.mean(axis=(0, 1), keepdims=True)
    stds = resized.std(axis=(0, 1), keepdims=True)
    normed = np.divide(normed, stds, out=np.zeros_like(normed), where=stds > 0)
    hist_parts = []
    for c in range(3):
        hist, _ = np.histogram(patch[:, :, c], bins=8, range=(0.0, 256.0))
        hist_parts.append(hist / max(hist.sum(), 1))
    return np.concatenate([normed.ravel(), np.concatenate(hist_parts)]).astype(np.float64)


def descriptor_from_image(image: np.ndarray, seg: Segment) -> np.ndarray:
    v0, v1, h0, h1 = crop_box(seg)
    return builtin_descriptor(image[v0 : v1 + 1, h0 : h1 + 1, :])


# --- PCA ---

def pca_reduce(
    vectors: np.ndarray, pca_dims: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Project onto the top principal components of the covariance.

    Returns (reduced, components (k, d), mean, explained variances). Components
    use a deterministic sign: the entry of largest magnitude is positive.
    Rank-deficient data keeps only the available components.
    """
    x = np.asarray(vectors, dtype=np.float64)
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / max(x.shape[0] - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]
    tol = max(eigvals[0], 0.0) * 1e-12
    available = int(np.sum(eigvals > tol))
    k = min(pca_dims, available) if available > 0 else min(pca_dims, x.shape[1])
    components = eigvecs[:, :k].T.copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    return centered @ components.T, components, mean, eigvals[:k]


# --- t-SNE ---

def _perplexity_probabilities(
    dist_sq: np.ndarray, perplexity: float, tol: float = 1e-5, max_iter: int = 200
) -> np.ndarray:
    """Per-row Gaussian conditional probabilities calibrated by bisection on
    the Shannon entropy (target log(perplexity))."""
    n = dist_sq.shape[0]
    target = np.log(perplexity)
    p = np.zeros((n, n))
    for i in range(n):
        d = np.delete(dist_sq[i], i)
        beta, beta_lo, beta_hi = 1.0, 0.0, np.inf
        for _ in range(max_iter):
            w = np.exp(-d * beta)
            total = w.sum()
            if total <= 0:
                h, probs = 0.0, w
            else:
                probs = w / total
                nz = probs > 0
                h = -np.sum(probs[nz] * np.log(probs[nz]))
            if abs(h - target) < tol:
                break
            if h > target:
                beta_lo = beta
                beta = beta * 2.0 if beta_hi == np.inf else (beta + beta_hi) / 2.0
            else:
                beta_hi = beta
                beta = (beta + beta_lo) / 2.0
        row = np.insert(probs, i, 0.0)
        p[i] = row / max(row.sum(), 1e-300)
    return p


def tsne_joint_probabilities(vectors: np.ndarray, perplexity: float) -> np.ndarray:
    x = np.asarray(vectors, dtype=np.float64)
    n = x.shape[0]
    if n < 4:
        raise PerplexityTooLarge("t-SNE needs at least 4 points")
    if perplexity >= n / 3:
        raise PerplexityTooLarge(f"perplexity {perplexity} too large for {n} points")
    sq = np.sum(x * x, axis=1)
    dist_sq = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    cond = _perplexity_probabilities(dist_sq, perplexity)
    p = (cond + cond.T) / (2.0 * n)
    return np.maximum(p, 1e-12)


def tsne_kl_and_grad(p: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """KL divergence between P and the Student-t Q of the embedding, plus its
    gradient with respect to the embedding coordinates."""
    n = y.shape[0]
    sq = np.sum(y * y, axis=1)
    num = 1.0 / (1.0 + np.maximum(sq[:, None] + sq[None, :] - 2.0 * (y @ y.T), 0.0))
    np.fill_diagonal(num, 0.0)
    q = np.maximum(num / num.sum(), 1e-12)
    mask = ~np.eye(n, dtype=bool)
    kl = float(np.sum(p[mask] * np.log(p[mask] / q[mask])))
    pq = (p - q) * num
    grad = 4.0 * ((np.diag(pq.sum(axis=1)) - pq) @ y)
    return kl, grad


def tsne_embed(vectors: np.ndarray, cfg: TsneConfig = TsneConfig()) -> np.ndarray:
    """Standard t-SNE by momentum gradient descent with early exaggeration."""
    p = tsne_joint_probabilities(vectors, cfg.perplexity)
    n = p.shape[0]
    rng = np.random.default_rng(cfg.seed)
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    update = np.zeros_like(y)
    for it in range(cfg.iterations):
        p_eff = p * cfg.early_exaggeration if it < cfg.early_exaggeration_iters else p
        _, grad = tsne_kl_and_grad(p_eff, y)
        momentum = 0.5 if it < 250 else 0.8
        update = momentum * update - cfg.learning_rate * grad
        y = y + update
        y = y - y.mean(axis=0)
    return y


# --- DBSCAN ---

def dbscan_cluster(points: np.ndarray, epsilon: float, min_pts: int) -> np.ndarray:
    """Euclidean DBSCAN with deterministic scan-order expansion.

    Returns integer labels: NOISE (0) or cluster ids 1..n. Border points join
    the first core cluster that reaches them.
    """
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    sq = np.sum(x * x, axis=1)
    dist_sq = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    neighbor = dist_sq <= epsilon * epsilon
    core = neighbor.sum(axis=1) >= min_pts  # neighborhood includes the point itself
    visited = np.zeros(n, dtype=bool)
    cluster = 0
    for i in range(n):
        if visited[i] or not core[i]:
            continue
        cluster += 1
        queue = [i]
        visited[i] = True
        labels[i] = cluster
        while queue:
            j = queue.pop(0)
            for k in np.flatnonzero(neighbor[j]):
                if labels[k] == NOISE and not core[k]:
                    labels[k] = cluster  # border point
                if core[k] and not visited[k]:
                    visited[k] = True
                    labels[k] = cluster
                    queue.append(int(k))
    return labels
