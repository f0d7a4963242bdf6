"""Deterministic synthetic OOD video generator with exact ground truth.

Scenes are simple: a gray background with a VOID border band (the ROI is
everything inside the band), colored disk or rectangle objects moving on
linear trajectories, per-pixel depth decreasing linearly with the image row,
and score maps where on-object scores always dominate the background. The
generator also offers controlled corruptions (score jitter, detection drops,
track-ID swaps) with analytically known metric effects.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import UnknownOp
from .io import (
    DatasetManifest,
    FrameRef,
    SequenceRef,
    write_image,
    write_id_mask,
    write_manifest,
    write_score_map,
    write_semantic_mask,
)
from .model import NOT_OOD, OOD, VOID, SequencePrediction, Track


@dataclass
class SynthObject:
    class_id: int
    shape: str = "disk"  # "disk" or "rectangle"
    radius: float = 6.0  # disk radius or rectangle half-extent (both axes)
    initial_center: tuple[float, float] = (0.0, 0.0)  # (v, h)
    velocity: tuple[float, float] = (0.0, 0.0)  # pixels per frame
    color: tuple[int, int, int] = (200, 60, 60)
    entry_frame: int = 0
    exit_frame: int | None = None  # exclusive; None = until the end


@dataclass
class SynthConfig:
    seed: int = 0
    image_size: tuple[int, int] = (120, 160)  # (H, W)
    frame_count: int = 20
    objects: list[SynthObject] = field(default_factory=list)
    score_noise_sigma: float = 0.0
    fp_blob_rate: float = 0.0  # expected false-positive blobs per frame
    drop_detection_prob: float = 0.0
    labeled_every: int = 1
    void_border: int = 4
    tau: float = 0.72  # on-object scores stay strictly above this
    sequence_id: str = "synth0"
    background_gray: int = 128


def object_mask(
    obj: SynthObject, frame_index: int, shape: tuple[int, int]
) -> np.ndarray:
    """Boolean mask of the object at the given frame (before ROI clipping)."""
    h, w = shape
    cv = obj.initial_center[0] + obj.velocity[0] * frame_index
    ch = obj.initial_center[1] + obj.velocity[1] * frame_index
    vv, hh = np.mgrid[0:h, 0:w]
    if obj.shape == "disk":
        return (vv - cv) ** 2 + (hh - ch) ** 2 <= obj.radius**2
    if obj.shape == "rectangle":
        return (np.abs(vv - cv) <= obj.radius) & (np.abs(hh - ch) <= obj.radius)
    raise UnknownOp(f"unknown object shape {obj.shape!r}")


def depth_by_row(shape: tuple[int, int]) -> np.ndarray:
    """Linear depth model: depth(v) = 20 * (1 - v/H) + 0.5 meters."""
    h, w = shape
    rows = 20.0 * (1.0 - np.arange(h, dtype=np.float64) / h) + 0.5
    return np.repeat(rows[:, None], w, axis=1).astype(np.float32)


def generate(cfg: SynthConfig, out_dir: str | Path) -> DatasetManifest:
    """Write a full synthetic sequence (masks, scores, depth, images, manifest)."""
    out_dir = Path(out_dir)
    seq_dir = out_dir / cfg.sequence_id
    seq_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    h, w = cfg.image_size
    roi = np.zeros((h, w), dtype=bool)
    b = cfg.void_border
    roi[b : h - b, b : w - b] = True
    depth = depth_by_row((h, w))
    on_floor = np.nextafter(np.float32(cfg.tau), np.float32(1.0))

    frames: list[FrameRef] = []
    for t in range(cfg.frame_count):
        semantic = np.where(roi, NOT_OOD, VOID).astype(np.uint8)
        instance = np.zeros((h, w), dtype=np.int32)
        class_ids = np.zeros((h, w), dtype=np.int32)
        image = np.full((h, w, 3), cfg.background_gray, dtype=np.uint8)

        score = np.abs(rng.normal(0.0, cfg.score_noise_sigma, size=(h, w))) if cfg.score_noise_sigma > 0 else np.zeros((h, w))
        score = np.clip(score, 0.0, 1.0 - 1e-6)

        object_pixels = np.zeros((h, w), dtype=bool)
        for idx, obj in enumerate(cfg.objects):
            exit_frame = obj.exit_frame if obj.exit_frame is not None else cfg.frame_count
            dropped = rng.random() < cfg.drop_detection_prob
            if not (obj.entry_frame <= t < exit_frame):
                continue
            mask = object_mask(obj, t, (h, w)) & roi
            if not mask.any():
                continue
            semantic[mask] = OOD
            instance[mask] = idx + 1
            class_ids[mask] = obj.class_id
            image[mask] = obj.color
            object_pixels |= mask
            if not dropped:
                on = 0.95 + rng.normal(0.0, cfg.score_noise_sigma / 4.0, size=int(mask.sum()))
                score[mask] = np.clip(on, on_floor, 1.0)

        n_blobs = rng.poisson(cfg.fp_blob_rate) if cfg.fp_blob_rate > 0 else 0
        for _ in range(n_blobs):
            cv = rng.integers(b, h - b)
            ch = rng.integers(b, w - b)
            radius = int(rng.integers(2, 6))
            color = rng.integers(0, 256, size=3).astype(np.uint8)
            vv, hh = np.mgrid[0:h, 0:w]
            blob = ((vv - cv) ** 2 + (hh - ch) ** 2 <= radius**2) & roi & ~object_pixels
            if not blob.any():
                continue
            on = 0.95 + rng.normal(0.0, cfg.score_noise_sigma / 4.0, size=int(blob.sum()))
            score[blob] = np.clip(on, on_floor, 1.0)
            image[blob] = color

        paths = {
            "score": f"{cfg.sequence_id}/score_{t:04d}.oods",
            "semantic": f"{cfg.sequence_id}/semantic_{t:04d}.png",
            "instance": f"{cfg.sequence_id}/instance_{t:04d}.png",
            "class": f"{cfg.sequence_id}/class_{t:04d}.png",
            "depth": f"{cfg.sequence_id}/depth_{t:04d}.oods",
            "image": f"{cfg.sequence_id}/image_{t:04d}.png",
        }
        write_score_map(out_dir / paths["score"], score.astype(np.float32))
        write_semantic_mask(out_dir / paths["semantic"], semantic)
        write_id_mask(out_dir / paths["instance"], instance)
        write_id_mask(out_dir / paths["class"], class_ids)
        write_score_map(out_dir / paths["depth"], depth)
        write_image(out_dir / paths["image"], image)
        frames.append(
            FrameRef(
                frame_index=t,
                score_path=paths["score"],
                semantic_path=paths["semantic"],
                instance_path=paths["instance"],
                class_path=paths["class"],
                depth_path=paths["depth"],
                image_path=paths["image"],
                labeled=(t % cfg.labeled_every == 0),
            )
        )

    manifest = DatasetManifest(
        sequences=[SequenceRef(sequence_id=cfg.sequence_id, frames=frames, fps=10.0)],
        root=out_dir,
    )
    manifest.validate()
    write_manifest(out_dir / "manifest.json", manifest)
    return manifest


# --- controlled corruptions ---

PERTURB_OPS = ("dropFrames", "swapTrackIds", "jitterScores")


def swap_track_id(pred: SequencePrediction, frame_index: int) -> SequencePrediction:
    """Inject exactly one ID change: the first track spanning frame_index has
    its entries from frame_index on moved to a fresh track id."""
    pred = copy.deepcopy(pred)
    next_id = max((t.track_id for t in pred.tracks), default=0) + 1
    for track in sorted(pred.tracks, key=lambda t: t.track_id):
        before = [(f, s) for f, s in track.entries if f < frame_index]
        after = [(f, s) for f, s in track.entries if f >= frame_index]
        if before and after:
            new_track = Track(track_id=next_id)
            new_track.entries = after
            new_track.centers = [(f, c) for f, c in track.centers if f >= frame_index]
            track.entries = before
            track.centers = [(f, c) for f, c in track.centers if f < frame_index]
            pred.tracks.append(new_track)
            pred.validate()
            return pred
    raise UnknownOp(f"no track spans frame {frame_index}")


def drop_detections(
    pred: SequencePrediction, drops: list[tuple[int, int]]
) -> SequencePrediction:
    """Remove the given (frame index, segment id) detections and their track entries."""
    pred = copy.deepcopy(pred)
    dropped = set(drops)
    pred.frames = [
        [seg for seg in segs if (i, seg.segment_id) not in dropped]
        for i, segs in enumerate(pred.frames)
    ]
    for track in pred.tracks:
        keep = [k for k, e in enumerate(track.entries) if e not in dropped]
        track.entries = [track.entries[k] for k in keep]
        track.centers = [track.centers[k] for k in keep]
    pred.tracks = [t for t in pred.tracks if t.entries]
    pred.validate()
    return pred


def jitter_scores(
    manifest: DatasetManifest, out_dir: str | Path, sigma: float, seed: int = 0
) -> DatasetManifest:
    """Copy the dataset with N(0, sigma) noise added to every score map."""
    from .io import read_float_raster

    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    sequences = []
    for seq in manifest.sequences:
        frames = []
        for frame in seq.frames:
            values = read_float_raster(manifest.resolve(frame.score_path))
            if sigma > 0:
                values = values + rng.normal(0.0, sigma, size=values.shape).astype(np.float32)
            dst = out_dir / frame.score_path
            dst.parent.mkdir(parents=True, exist_ok=True)
            write_score_map(dst, values.astype(np.float32))
            for attr in ("semantic_path", "instance_path", "class_path", "depth_path", "image_path"):
                rel = getattr(frame, attr)
                if rel is not None:
                    target = out_dir / rel
                    target.parent.mkdir(parents=True, exist_ok=True)
                    target.write_bytes(manifest.resolve(rel).read_bytes())
            frames.append(replace(frame))
        sequences.append(SequenceRef(sequence_id=seq.sequence_id, frames=frames, fps=seq.fps))
    new_manifest = DatasetManifest(sequences=sequences, root=out_dir)
    write_manifest(out_dir / "manifest.json", new_manifest)
    return new_manifest


def perturb(op: str, **kwargs):
    """Dispatch a named corruption; raises UnknownOp for anything else."""
    if op == "swapTrackIds":
        return swap_track_id(kwargs["prediction"], kwargs["frame_index"])
    if op == "dropFrames":
        return drop_detections(kwargs["prediction"], kwargs["drops"])
    if op == "jitterScores":
        return jitter_scores(
            kwargs["manifest"], kwargs["out_dir"], kwargs.get("sigma", 0.0), kwargs.get("seed", 0)
        )
    raise UnknownOp(f"unknown perturbation {op!r}; expected one of {PERTURB_OPS}")
