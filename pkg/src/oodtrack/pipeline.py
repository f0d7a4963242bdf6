"""End-to-end wiring: manifest in, detections, tracks, embeddings, reports out.

All functions are pure with respect to their inputs; each CLI stage is a thin
wrapper around one of them. Randomness always flows from an explicit seed.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .clustering_metrics import assign_gt, clustering_scores
from .detection_metrics import (
    KAPPA_GRID,
    grouped_report,
    pixel_metrics,
    segment_metrics,
)
from .model import ClusterAssignment, EmbeddingPoint, FrameTruth, ScoreMap, Segment, SequencePrediction
from .retrieval import (
    RetrievalConfig,
    descriptor_from_image,
    dbscan_cluster,
    filter_by_track_length,
    pca_reduce,
    tsne_embed,
)
from .tracker import TrackerConfig, track_sequence
from .tracking_metrics import evaluate_tracking


def worker_count() -> int:
    """Worker cap from OODTRACK_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("OODTRACK_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class SequenceDetections:
    sequence_id: str
    frames: list[list[Segment]]
    shape: tuple[int, int]
    frame_indices: list[int] = field(default_factory=list)


def frame_roi(manifest: io.DatasetManifest, frame: io.FrameRef, shape: tuple[int, int]) -> np.ndarray:
    """ROI for detection: ground-truth non-VOID where a semantic mask exists,
    else the full frame."""
    if frame.semantic_path is not None:
        truth_sem = np.array(io._read_png(manifest.resolve(frame.semantic_path)))
        return truth_sem != 0
    return np.ones(shape, dtype=bool)


def detect(
    manifest: io.DatasetManifest, tau: float, min_size: int = 1
) -> dict[str, SequenceDetections]:
    """Threshold + connected components for every frame of every sequence."""
    from .segmentation import extract_segments

    out: dict[str, SequenceDetections] = {}
    for seq in manifest.sequences:
        frames: list[list[Segment]] = []
        indices: list[int] = []
        shape = None
        for pos, frame in enumerate(seq.frames):
            score = io.read_score_map(manifest.resolve(frame.score_path))
            shape = score.shape
            roi = frame_roi(manifest, frame, shape)
            frames.append(extract_segments(score, roi, tau, min_size, frame_index=pos))
            indices.append(frame.frame_index)
        out[seq.sequence_id] = SequenceDetections(
            sequence_id=seq.sequence_id,
            frames=frames,
            shape=shape if shape is not None else (1, 1),
            frame_indices=indices,
        )
    return out


def load_truths(
    manifest: io.DatasetManifest, sequence_id: str, labeled_only: bool = True
) -> dict[int, FrameTruth]:
    """Frame position -> FrameTruth for one sequence."""
    seq = next(s for s in manifest.sequences if s.sequence_id == sequence_id)
    truths: dict[int, FrameTruth] = {}
    for pos, frame in enumerate(seq.frames):
        if labeled_only and not frame.labeled:
            continue
        if frame.semantic_path is None or frame.instance_path is None:
            continue
        truths[pos] = io.read_truth(manifest, frame)
    return truths


def load_scores(manifest: io.DatasetManifest, sequence_id: str) -> dict[int, ScoreMap]:
    seq = next(s for s in manifest.sequences if s.sequence_id == sequence_id)
    return {
        pos: io.read_score_map(manifest.resolve(frame.score_path))
        for pos, frame in enumerate(seq.frames)
    }


def track(
    detections: dict[str, SequenceDetections],
    cfg: TrackerConfig = TrackerConfig(),
    seed: int = 0,
) -> dict[str, SequencePrediction]:
    return {
        seq_id: track_sequence(det.frames, cfg, seed=seed, sequence_id=seq_id)
        for seq_id, det in sorted(detections.items())
    }


def embed(
    predictions: dict[str, SequencePrediction],
    manifest: io.DatasetManifest,
    cfg: RetrievalConfig,
    feature_files: dict[str, str | Path] | None = None,
) -> list[EmbeddingPoint]:
    """Filter tracked segments by track length, featurize, PCA, t-SNE.

    Features come from an external feature file per sequence when provided,
    otherwise from the built-in descriptor on frame-image crops. Ground truth
    (class/instance of maximal overlap) is attached where labeled frames exist.
    """
    items: list[tuple[str, int, int, int]] = []
    vectors: list[np.ndarray] = []
    gts: list[tuple[int, int] | None] = []
    for seq_id in sorted(predictions):
        pred = predictions[seq_id]
        seq = next(s for s in manifest.sequences if s.sequence_id == seq_id)
        truths = load_truths(manifest, seq_id)
        external = None
        if feature_files and seq_id in feature_files:
            external = io.read_feature_file(feature_files[seq_id])
        image_cache: dict[int, np.ndarray] = {}
        for track_obj, frame_index, seg in filter_by_track_length(pred, cfg.min_track_length):
            if external is not None:
                vec = external[(frame_index, seg.segment_id)]
            else:
                if frame_index not in image_cache:
                    image_path = seq.frames[frame_index].image_path
                    if image_path is None:
                        raise io.IoError(
                            f"{seq_id}: no feature file and no frame image for frame {frame_index}"
                        )
                    image_cache[frame_index] = io.read_image(manifest.resolve(image_path))
                vec = descriptor_from_image(image_cache[frame_index], seg)
            items.append((seq_id, frame_index, seg.segment_id, track_obj.track_id))
            vectors.append(np.asarray(vec, dtype=np.float64))
            gts.append(assign_gt(seg, truths[frame_index]) if frame_index in truths else None)

    if not items:
        return []
    x = np.stack(vectors)
    k = min(cfg.pca_dims, x.shape[0] - 1, x.shape[1])
    reduced, _, _, _ = pca_reduce(x, k)
    coords = tsne_embed(reduced, cfg.tsne)
    points = []
    for (seq_id, frame_index, segment_id, track_id), (cx, cy), gt in zip(items, coords, gts):
        points.append(
            EmbeddingPoint(
                coords2d=(float(cx), float(cy)),
                origin=(seq_id, frame_index, segment_id, track_id),
                gt_class=gt[0] if gt else None,
                gt_instance=gt[1] if gt else None,
            )
        )
    return points


def cluster(points: list[EmbeddingPoint], epsilon: float, min_pts: int) -> ClusterAssignment:
    coords = np.array([p.coords2d for p in points], dtype=np.float64).reshape(-1, 2)
    labels = dbscan_cluster(coords, epsilon, min_pts)
    return ClusterAssignment(points=tuple(points), labels=tuple(int(x) for x in labels))


def embedding_to_csv(path: str | Path, assignment: ClusterAssignment) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["x", "y", "cluster", "sequenceId", "frameIndex", "segmentId", "trackId", "gtClass", "gtInstance"]
        )
        for point, label in zip(assignment.points, assignment.labels):
            seq_id, frame_index, segment_id, track_id = point.origin
            writer.writerow(
                [
                    f"{point.coords2d[0]!r}",
                    f"{point.coords2d[1]!r}",
                    label,
                    seq_id,
                    frame_index,
                    segment_id,
                    track_id,
                    "" if point.gt_class is None else point.gt_class,
                    "" if point.gt_instance is None else point.gt_instance,
                ]
            )


def embedding_from_csv(path: str | Path) -> ClusterAssignment:
    points, labels = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            points.append(
                EmbeddingPoint(
                    coords2d=(float(row["x"]), float(row["y"])),
                    origin=(row["sequenceId"], int(row["frameIndex"]), int(row["segmentId"]), int(row["trackId"])),
                    gt_class=int(row["gtClass"]) if row["gtClass"] else None,
                    gt_instance=int(row["gtInstance"]) if row["gtInstance"] else None,
                )
            )
            labels.append(int(row["cluster"]) if row.get("cluster") else 0)
    return ClusterAssignment(points=tuple(points), labels=tuple(labels))


def evaluate(
    manifest: io.DatasetManifest,
    detections: dict[str, SequenceDetections] | None = None,
    predictions: dict[str, SequencePrediction] | None = None,
    assignment: ClusterAssignment | None = None,
    families: tuple[str, ...] = ("pixel", "segment"),
    group_by: str | None = None,
    kappa_grid=KAPPA_GRID,
) -> dict:
    """Compute the requested metric families into one report dictionary."""
    report: dict = {"schemaVersion": io.SCHEMA_VERSION}
    pooled_scores: list[ScoreMap] = []
    pooled_truths: list[FrameTruth] = []
    pooled_pred_frames: list[list[Segment]] = []
    if any(f in families for f in ("pixel", "segment")):
        for seq in manifest.sequences:
            truths = load_truths(manifest, seq.sequence_id)
            scores = load_scores(manifest, seq.sequence_id)
            for pos in sorted(truths):
                pooled_truths.append(truths[pos])
                pooled_scores.append(scores[pos])
                if predictions is not None and seq.sequence_id in predictions:
                    pooled_pred_frames.append(predictions[seq.sequence_id].frames[pos])
                elif detections is not None:
                    pooled_pred_frames.append(detections[seq.sequence_id].frames[pos])
                else:
                    pooled_pred_frames.append([])

    if "pixel" in families:
        pix = pixel_metrics(pooled_scores, pooled_truths)
        report["pixel"] = {"auprc": pix.auprc, "fpr95": pix.fpr95}
    if "segment" in families:
        seg = segment_metrics(pooled_pred_frames, pooled_truths, kappa_grid)
        report["segment"] = {
            "f1Bar": seg.f1_bar,
            "perKappa": [
                {"kappa": k, "tp": tp, "fn": fn, "fp": fp, "f1": f1}
                for k, tp, fn, fp, f1 in seg.per_kappa
            ],
        }
    if "tracking" in families:
        if predictions is None:
            raise io.DimMismatch("tracking evaluation requires track output")
        runs = [
            (predictions[seq.sequence_id], load_truths(manifest, seq.sequence_id))
            for seq in manifest.sequences
            if seq.sequence_id in predictions
        ]
        res = evaluate_tracking(runs)
        report["tracking"] = {
            "mota": res.mota,
            "mmeRatio": res.mme_ratio,
            "motp": res.motp,
            "gt": res.gt_count,
            "mt": res.mt,
            "pt": res.pt,
            "ml": res.ml,
            "ltMean": res.lt_mean,
            "ltPerObject": res.lt_per_object,
            "counts": {"fp": res.fp, "fn": res.fn, "mme": res.mme, "gtFrames": res.gt_frames},
        }
    if "clustering" in families:
        if assignment is None:
            raise io.DimMismatch("clustering evaluation requires an embedding with cluster labels")
        report["clustering"] = clustering_scores(assignment)
    if group_by:
        groups = grouped_report(pooled_scores, pooled_pred_frames, pooled_truths, group_by, kappa_grid)
        report["groups"] = {
            key: {
                "pixel": None
                if value["pixel"] is None
                else {"auprc": value["pixel"].auprc, "fpr95": value["pixel"].fpr95},
                "segment": {"f1Bar": value["segment"].f1_bar},
            }
            for key, value in groups.items()
        }
    return report
