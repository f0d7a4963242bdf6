"""Command-line surface for the OOD tracking toolkit.

Stages write `<stage>.json` (or `.csv`) artifacts into a run directory;
`report` merges whatever stages it finds. Exit codes: 0 success, 1 usage
error, 2 data/format error, 3 numerical failure. Failures emit a
machine-readable error JSON on stderr.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import io, pipeline
from .errors import DataError, NumericalError, OodTrackError
from .meta import (
    MetaModel,
    apply_meta,
    extract_meta_features,
    label_segments_for_training,
    run_protocol,
)
from .model import SequencePrediction
from .retrieval import DBSCAN_EPSILON, DBSCAN_MIN_PTS, RetrievalConfig, TsneConfig
from .segmentation import TAU_SOS
from .synth import SynthConfig, SynthObject, generate
from .tracker import TrackerConfig


@click.group()
def cli():
    """Detection, tracking, retrieval and evaluation of OOD objects in video."""


@cli.command()
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--frames", type=int, default=20, show_default=True)
@click.option("--height", type=int, default=120, show_default=True)
@click.option("--width", type=int, default=160, show_default=True)
@click.option("--objects", "n_objects", type=int, default=3, show_default=True)
@click.option("--classes", type=int, default=3, show_default=True)
@click.option("--sigma", type=float, default=0.0, show_default=True, help="Score noise std")
@click.option("--fp-rate", type=float, default=0.0, show_default=True, help="False-positive blobs per frame")
@click.option("--drop-prob", type=float, default=0.0, show_default=True)
@click.option("--labeled-every", type=int, default=1, show_default=True)
@click.option("--tau", type=float, default=TAU_SOS, show_default=True)
def synth(out_dir, seed, frames, height, width, n_objects, classes, sigma, fp_rate, drop_prob, labeled_every, tau):
    """Generate a synthetic sequence with exact ground truth."""
    cfg = SynthConfig(
        seed=seed,
        image_size=(height, width),
        frame_count=frames,
        objects=default_objects(n_objects, classes, (height, width), frames, seed),
        score_noise_sigma=sigma,
        fp_blob_rate=fp_rate,
        drop_detection_prob=drop_prob,
        labeled_every=labeled_every,
        tau=tau,
    )
    generate(cfg, out_dir)
    click.echo(f"synth: wrote {frames} frames to {out_dir}")


def default_objects(n, n_classes, shape, frame_count, seed) -> list[SynthObject]:
    """Evenly spaced moving disks with cycling classes and distinct colors."""
    rng = np.random.default_rng(seed + 1)
    h, w = shape
    objects = []
    for i in range(n):
        color = tuple(int(c) for c in rng.integers(40, 256, size=3))
        objects.append(
            SynthObject(
                class_id=(i % n_classes) + 1,
                shape="disk" if i % 2 == 0 else "rectangle",
                radius=6.0 + 2.0 * (i % 3),
                initial_center=(h * 0.25 + (i * h * 0.5) / max(n, 1), w * (i + 1) / (n + 1)),
                velocity=(0.4, 0.2 * (1 if i % 2 == 0 else -1)),
                color=color,
            )
        )
    return objects


@cli.command()
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--tau", type=float, default=TAU_SOS, show_default=True)
@click.option("--min-size", type=int, default=1, show_default=True)
def detect(manifest_path, out_path, tau, min_size):
    """Score maps to predicted OOD segments."""
    preset = {0.72: " (SOS preset)", 0.81: " (CWL preset)"}.get(round(tau, 2), "")
    click.echo(f"detect: tau={tau:g}{preset} min-size={min_size}")
    manifest = io.read_manifest(manifest_path)
    detections = pipeline.detect(manifest, tau, min_size)
    doc = {
        "schemaVersion": io.SCHEMA_VERSION,
        "tau": tau,
        "minSize": min_size,
        "sequences": [
            io.prediction_to_dict(
                SequencePrediction(seq_id, det.frames, [], len(det.frames)), det.shape
            )
            for seq_id, det in sorted(detections.items())
        ],
    }
    io.write_json(out_path, doc)
    total = sum(len(f) for d in detections.values() for f in d.frames)
    click.echo(f"detect: {total} segments -> {out_path}")


def _load_detections(path) -> dict[str, pipeline.SequenceDetections]:
    doc = io.read_json(path)
    out = {}
    for seq_doc in doc["sequences"]:
        pred, shape = io.prediction_from_dict(seq_doc)
        out[pred.sequence_id] = pipeline.SequenceDetections(
            sequence_id=pred.sequence_id, frames=pred.frames, shape=shape
        )
    return out


def _load_tracks(path) -> dict[str, SequencePrediction]:
    doc = io.read_json(path)
    out = {}
    for seq_doc in doc["sequences"]:
        pred, _ = io.prediction_from_dict(seq_doc)
        out[pred.sequence_id] = pred
    return out


@cli.command("meta-train")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--manifest-b", "manifest_b_path", type=click.Path(exists=True), default=None)
@click.option("--protocol", type=click.Choice(["M1", "M2"]), default="M1", show_default=True)
@click.option("--lambda", "lam", type=float, default=None, help="L1 strength; cross-validated when omitted")
@click.option("--tau", type=float, default=TAU_SOS, show_default=True)
@click.option("--min-size", type=int, default=1, show_default=True)
@click.option("--threshold", type=float, default=0.5, show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def meta_train(manifest_path, manifest_b_path, protocol, lam, tau, min_size, threshold, out_path):
    """Train TP/FP meta classifiers under protocol M1 or M2."""
    dataset_a = _meta_samples(io.read_manifest(manifest_path), tau, min_size)
    dataset_b = (
        _meta_samples(io.read_manifest(manifest_b_path), tau, min_size)
        if manifest_b_path
        else None
    )
    models, predictions = run_protocol(dataset_a, dataset_b, protocol, lam, threshold)
    doc = {
        "schemaVersion": io.SCHEMA_VERSION,
        "protocol": protocol,
        "models": {key: model.to_dict() for key, model in models.items()},
        "predictions": {key: list(map(float, probs)) for key, probs in predictions.items()},
    }
    io.write_json(out_path, doc)
    click.echo(f"meta-train: {len(models)} model(s) -> {out_path}")


def _meta_samples(manifest, tau, min_size):
    detections = pipeline.detect(manifest, tau, min_size)
    samples = {}
    for seq in manifest.sequences:
        truths = pipeline.load_truths(manifest, seq.sequence_id)
        scores = pipeline.load_scores(manifest, seq.sequence_id)
        feats, labels = [], []
        for pos in sorted(truths):
            segs = detections[seq.sequence_id].frames[pos]
            if not segs:
                continue
            roi = truths[pos].roi
            for seg in segs:
                feats.append(extract_meta_features(seg, scores[pos], roi))
            labels.extend(label_segments_for_training(segs, truths[pos]))
        if feats:
            samples[seq.sequence_id] = (np.stack(feats), np.asarray(labels, dtype=bool))
    return samples


@cli.command("meta-apply")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--detections", "detections_path", type=click.Path(exists=True), required=True)
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--model-key", default="all", show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def meta_apply(manifest_path, detections_path, model_path, model_key, out_path):
    """Filter detected segments with a trained meta model."""
    manifest = io.read_manifest(manifest_path)
    detections = _load_detections(detections_path)
    doc = io.read_json(model_path)
    models = doc.get("models", {model_key: doc})
    kept_total = 0
    out_sequences = []
    for seq_id, det in sorted(detections.items()):
        model = MetaModel.from_dict(models.get(seq_id, models.get(model_key)))
        scores = pipeline.load_scores(manifest, seq_id)
        seq_ref = next(s for s in manifest.sequences if s.sequence_id == seq_id)
        frames = []
        for pos, segs in enumerate(det.frames):
            roi = pipeline.frame_roi(manifest, seq_ref.frames[pos], det.shape)
            kept = apply_meta(model, segs, scores[pos], roi)
            kept_total += len(kept)
            frames.append(kept)
        out_sequences.append(
            io.prediction_to_dict(
                SequencePrediction(seq_id, frames, [], len(frames)), det.shape
            )
        )
    in_doc = io.read_json(detections_path)
    io.write_json(
        out_path,
        {
            "schemaVersion": io.SCHEMA_VERSION,
            "tau": in_doc.get("tau"),
            "minSize": in_doc.get("minSize"),
            "sequences": out_sequences,
        },
    )
    click.echo(f"meta-apply: kept {kept_total} segments -> {out_path}")


@cli.command()
@click.option("--detections", "detections_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--aggregation-dist", type=float, default=None)
@click.option("--center-dist", type=float, default=None)
@click.option("--min-iou", type=float, default=0.35, show_default=True)
@click.option("--regression-window", type=int, default=5, show_default=True)
@click.option("--max-gap", type=int, default=2, show_default=True)
def track(detections_path, out_path, seed, aggregation_dist, center_dist, min_iou, regression_window, max_gap):
    """Assign persistent track IDs to detected segments."""
    detections = _load_detections(detections_path)
    cfg = TrackerConfig(
        aggregation_dist=aggregation_dist,
        center_dist=center_dist,
        min_iou=min_iou,
        regression_window=regression_window,
        max_gap=max_gap,
    )
    predictions = pipeline.track(detections, cfg, seed=seed)
    doc = {
        "schemaVersion": io.SCHEMA_VERSION,
        "seed": seed,
        "sequences": [
            io.prediction_to_dict(predictions[seq_id], detections[seq_id].shape)
            for seq_id in sorted(predictions)
        ],
    }
    io.write_json(out_path, doc)
    n_tracks = sum(len(p.tracks) for p in predictions.values())
    click.echo(f"track: {n_tracks} tracks -> {out_path}")


@cli.command()
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--tracks", "tracks_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--min-track-len", type=int, default=0, show_default=True)
@click.option("--pca-dims", type=int, default=50, show_default=True)
@click.option("--perplexity", type=float, default=30.0, show_default=True)
@click.option("--iterations", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--features", "feature_specs", multiple=True, help="sequenceId=path to an OODF feature file")
def embed(manifest_path, tracks_path, out_path, min_track_len, pca_dims, perplexity, iterations, seed, feature_specs):
    """2-D embedding (PCA then t-SNE) of tracked segments."""
    manifest = io.read_manifest(manifest_path)
    predictions = _load_tracks(tracks_path)
    feature_files = dict(spec.split("=", 1) for spec in feature_specs) or None
    cfg = RetrievalConfig(
        min_track_length=min_track_len,
        pca_dims=pca_dims,
        tsne=TsneConfig(perplexity=perplexity, iterations=iterations, seed=seed),
    )
    points = pipeline.embed(predictions, manifest, cfg, feature_files)
    assignment = pipeline.cluster(points, epsilon=float("inf"), min_pts=len(points) + 1) \
        if points else pipeline.cluster([], 1.0, 1)
    # all-noise labels: clustering happens in the dedicated stage
    pipeline.embedding_to_csv(out_path, assignment)
    click.echo(f"embed: {len(points)} points -> {out_path}")


@cli.command()
@click.option("--embedding", "embedding_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--epsilon", type=float, default=DBSCAN_EPSILON, show_default=True)
@click.option("--min-pts", type=int, default=DBSCAN_MIN_PTS, show_default=True)
def cluster(embedding_path, out_path, epsilon, min_pts):
    """DBSCAN clustering of an embedding CSV."""
    assignment = pipeline.embedding_from_csv(embedding_path)
    clustered = pipeline.cluster(list(assignment.points), epsilon, min_pts)
    pipeline.embedding_to_csv(out_path, clustered)
    click.echo(f"cluster: {len(clustered.cluster_ids)} clusters -> {out_path}")


@cli.command()
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--detections", "detections_path", type=click.Path(exists=True), default=None)
@click.option("--tracks", "tracks_path", type=click.Path(exists=True), default=None)
@click.option("--clusters", "clusters_path", type=click.Path(exists=True), default=None)
@click.option("--pixel", "pixel_flag", is_flag=True)
@click.option("--segment", "segment_flag", is_flag=True)
@click.option("--tracking", "tracking_flag", is_flag=True)
@click.option("--clustering", "clustering_flag", is_flag=True)
@click.option("--group-by", type=click.Choice(["class", "depth"]), default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
def evaluate(manifest_path, detections_path, tracks_path, clusters_path, pixel_flag, segment_flag, tracking_flag, clustering_flag, group_by, out_path):
    """Compute the requested metric families and write a JSON report."""
    families = tuple(
        name
        for name, flag in (
            ("pixel", pixel_flag),
            ("segment", segment_flag),
            ("tracking", tracking_flag),
            ("clustering", clustering_flag),
        )
        if flag
    )
    if not families:
        raise click.UsageError("select at least one of --pixel/--segment/--tracking/--clustering")
    manifest = io.read_manifest(manifest_path)
    detections = _load_detections(detections_path) if detections_path else None
    predictions = _load_tracks(tracks_path) if tracks_path else None
    assignment = pipeline.embedding_from_csv(clusters_path) if clusters_path else None
    report = pipeline.evaluate(
        manifest,
        detections=detections,
        predictions=predictions,
        assignment=assignment,
        families=families,
        group_by=group_by,
    )
    io.write_json(out_path, report)
    click.echo(f"evaluate: {', '.join(families)} -> {out_path}")


@cli.command()
@click.option("--run-dir", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), default=None, help="Defaults to <run-dir>/report.json")
def report(run_dir, out_path):
    """Merge stage outputs found in a run directory into one report."""
    run_dir = Path(run_dir)
    merged: dict = {"schemaVersion": io.SCHEMA_VERSION, "stages": {}}
    for stage in ("detect", "meta", "track", "evaluate"):
        path = run_dir / f"{stage}.json"
        if path.exists():
            merged["stages"][stage] = io.read_json(path)
    for stage in ("embed", "cluster"):
        path = run_dir / f"{stage}.csv"
        if path.exists():
            merged["stages"][stage] = {"path": str(path)}
    eval_doc = merged["stages"].get("evaluate", {})
    tracking = eval_doc.get("tracking")
    if tracking and "ltPerObject" in tracking:
        lt_csv = run_dir / "lt_per_object.csv"
        with open(lt_csv, "w", encoding="utf-8") as fh:
            fh.write("object,lt\n")
            for key, value in tracking["ltPerObject"].items():
                fh.write(f"{key},{value!r}\n")
        merged["tables"] = {"ltPerObject": str(lt_csv)}
    out_path = out_path or run_dir / "report.json"
    io.write_json(out_path, merged)
    click.echo(f"report: -> {out_path}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.ClickException as exc:
        _emit_error("UsageError", exc.format_message())
        return 1
    except click.exceptions.Abort:
        return 1
    except NumericalError as exc:
        _emit_error(type(exc).__name__, str(exc))
        return 3
    except DataError as exc:
        _emit_error(type(exc).__name__, str(exc))
        return 2
    except OodTrackError as exc:
        _emit_error(type(exc).__name__, str(exc))
        return 2


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": {"type": kind, "message": message}}) + "\n")


if __name__ == "__main__":
    sys.exit(main())
