"""Bit-exact readers and writers for the toolkit's file formats.

Formats (the toolkit's public contract):
  * score map / depth raster: magic "OODS", little-endian u32 height, u32
    width, then height*width little-endian float32 values in row-major order
  * semantic mask: single-channel 8-bit PNG, 0=VOID, 1=NOT_OOD, 2=OOD
  * instance / class mask: single-channel 16-bit PNG, 0=background
  * feature file: magic "OODF", u32 count, u32 dim, then count records of
    (u32 frameIndex, u32 segmentId, dim little-endian float32)
  * manifest, stage outputs, reports: JSON, UTF-8
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import BadMagic, DimMismatch, IoError, NonFiniteValue, SizeMismatch
from .model import (
    FrameTruth,
    ScoreMap,
    Segment,
    SequencePrediction,
    Track,
)

SCORE_MAGIC = b"OODS"
FEATURE_MAGIC = b"OODF"
SCHEMA_VERSION = 1


# --- score maps / float rasters ---

def write_score_map(path: str | Path, score: ScoreMap | np.ndarray) -> None:
    values = score.values if isinstance(score, ScoreMap) else np.asarray(score, dtype=np.float32)
    h, w = values.shape
    payload = SCORE_MAGIC + struct.pack("<II", h, w) + values.astype("<f4").tobytes()
    Path(path).write_bytes(payload)


def read_score_map(path: str | Path) -> ScoreMap:
    return ScoreMap(read_float_raster(path))


def read_float_raster(path: str | Path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    if len(raw) < 12 or raw[:4] != SCORE_MAGIC:
        raise BadMagic(f"{path}: not an OODS raster")
    h, w = struct.unpack("<II", raw[4:12])
    expected = 12 + 4 * h * w
    if len(raw) != expected:
        raise DimMismatch(f"{path}: expected {expected} bytes for {h}x{w}, got {len(raw)}")
    values = np.frombuffer(raw[12:], dtype="<f4").reshape(h, w).astype(np.float32)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValue(f"{path}: raster contains non-finite values")
    return values


# --- PNG masks ---

def write_semantic_mask(path: str | Path, semantic: np.ndarray) -> None:
    Image.fromarray(np.asarray(semantic, dtype=np.uint8)).save(path, format="PNG")


def write_id_mask(path: str | Path, ids: np.ndarray) -> None:
    arr = np.asarray(ids)
    if arr.min() < 0 or arr.max() > 0xFFFF:
        raise DimMismatch("id mask values must fit in uint16")
    Image.fromarray(arr.astype(np.uint16)).save(path, format="PNG")


def write_image(path: str | Path, rgb: np.ndarray) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def read_image(path: str | Path) -> np.ndarray:
    try:
        return np.array(Image.open(path).convert("RGB"))
    except OSError as exc:
        raise IoError(str(exc)) from exc


def _read_png(path: str | Path) -> np.ndarray:
    try:
        return np.array(Image.open(path))
    except OSError as exc:
        raise IoError(str(exc)) from exc


def read_masks(
    semantic_path: str | Path,
    instance_path: str | Path,
    class_path: str | Path | None = None,
    depth_path: str | Path | None = None,
) -> FrameTruth:
    """Assemble a FrameTruth from its mask files; validates all invariants."""
    semantic = _read_png(semantic_path).astype(np.uint8)
    instance = _read_png(instance_path).astype(np.int32)
    if semantic.shape != instance.shape:
        raise SizeMismatch(f"{semantic_path} and {instance_path} differ in size")
    if class_path is not None:
        class_ids = _read_png(class_path).astype(np.int32)
        if class_ids.shape != semantic.shape:
            raise SizeMismatch(f"{class_path} size differs from semantic mask")
    else:
        # Single pseudo-class fallback when no class mask ships with the data.
        class_ids = np.where(semantic == 2, 1, 0).astype(np.int32)
    depth = read_float_raster(depth_path) if depth_path is not None else None
    return FrameTruth(semantic=semantic, instance=instance, class_ids=class_ids, depth=depth)


# --- feature files ---

def write_feature_file(
    path: str | Path, features: dict[tuple[int, int], np.ndarray], dim: int | None = None
) -> None:
    items = sorted(features.items())
    if dim is None:
        if not items:
            raise DimMismatch("feature dimension required for an empty feature file")
        dim = int(items[0][1].shape[0])
    chunks = [FEATURE_MAGIC, struct.pack("<II", len(items), dim)]
    for (frame_index, segment_id), vec in items:
        vec = np.asarray(vec, dtype="<f4")
        if vec.shape != (dim,):
            raise DimMismatch(f"feature vector for {(frame_index, segment_id)} has dim {vec.shape}")
        chunks.append(struct.pack("<II", frame_index, segment_id) + vec.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_feature_file(path: str | Path) -> dict[tuple[int, int], np.ndarray]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    if len(raw) < 12 or raw[:4] != FEATURE_MAGIC:
        raise BadMagic(f"{path}: not an OODF feature file")
    count, dim = struct.unpack("<II", raw[4:12])
    if dim < 1:
        raise DimMismatch(f"{path}: feature dimension must be >= 1")
    record = 8 + 4 * dim
    if len(raw) != 12 + count * record:
        raise DimMismatch(f"{path}: record count does not match header")
    out: dict[tuple[int, int], np.ndarray] = {}
    for i in range(count):
        off = 12 + i * record
        frame_index, segment_id = struct.unpack("<II", raw[off : off + 8])
        vec = np.frombuffer(raw[off + 8 : off + record], dtype="<f4").astype(np.float32)
        out[(frame_index, segment_id)] = vec
    return out


# --- manifest ---

@dataclass
class FrameRef:
    frame_index: int
    score_path: str
    semantic_path: str | None = None
    instance_path: str | None = None
    class_path: str | None = None
    depth_path: str | None = None
    image_path: str | None = None
    labeled: bool = False


@dataclass
class SequenceRef:
    sequence_id: str
    frames: list[FrameRef]
    fps: float | None = None


@dataclass
class DatasetManifest:
    sequences: list[SequenceRef]
    root: Path = field(default_factory=Path)

    def validate(self):
        for seq in self.sequences:
            last = -1
            for frame in seq.frames:
                if frame.frame_index <= last:
                    raise DimMismatch(
                        f"sequence {seq.sequence_id}: frame indices not strictly increasing"
                    )
                last = frame.frame_index
                if frame.labeled and (frame.semantic_path is None or frame.instance_path is None):
                    raise DimMismatch(
                        f"sequence {seq.sequence_id}, frame {frame.frame_index}: "
                        "labeled frames need semantic and instance masks"
                    )

    def resolve(self, rel: str) -> Path:
        return self.root / rel


def write_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    doc = {
        "schemaVersion": SCHEMA_VERSION,
        "sequences": [
            {
                "sequenceId": seq.sequence_id,
                "fps": seq.fps,
                "frames": [
                    {
                        "frameIndex": f.frame_index,
                        "scorePath": f.score_path,
                        "semanticPath": f.semantic_path,
                        "instancePath": f.instance_path,
                        "classPath": f.class_path,
                        "depthPath": f.depth_path,
                        "imagePath": f.image_path,
                        "labeled": f.labeled,
                    }
                    for f in seq.frames
                ],
            }
            for seq in manifest.sequences
        ],
    }
    write_json(path, doc)


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    doc = read_json(path)
    try:
        sequences = [
            SequenceRef(
                sequence_id=s["sequenceId"],
                fps=s.get("fps"),
                frames=[
                    FrameRef(
                        frame_index=f["frameIndex"],
                        score_path=f["scorePath"],
                        semantic_path=f.get("semanticPath"),
                        instance_path=f.get("instancePath"),
                        class_path=f.get("classPath"),
                        depth_path=f.get("depthPath"),
                        image_path=f.get("imagePath"),
                        labeled=bool(f.get("labeled", False)),
                    )
                    for f in s["frames"]
                ],
            )
            for s in doc["sequences"]
        ]
    except (KeyError, TypeError) as exc:
        raise DimMismatch(f"{path}: malformed manifest: {exc}") from exc
    manifest = DatasetManifest(sequences=sequences, root=path.parent)
    manifest.validate()
    return manifest


def read_truth(manifest: DatasetManifest, frame: FrameRef) -> FrameTruth:
    return read_masks(
        manifest.resolve(frame.semantic_path),
        manifest.resolve(frame.instance_path),
        manifest.resolve(frame.class_path) if frame.class_path else None,
        manifest.resolve(frame.depth_path) if frame.depth_path else None,
    )


# --- JSON helpers and stage outputs ---

def write_json(path: str | Path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def read_json(path: str | Path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise DimMismatch(f"{path}: invalid JSON: {exc}") from exc


def segment_to_dict(seg: Segment) -> dict:
    return {
        "segmentId": seg.segment_id,
        "rle": [[int(s), int(n)] for s, n in seg.rle],
        "bbox": list(seg.bbox),
        "center": list(seg.center),
        "size": seg.size,
        "meanScore": seg.mean_score,
        "interiorSize": seg.interior_size,
    }


def segment_from_dict(doc: dict, frame_index: int, shape: tuple[int, int]) -> Segment:
    return Segment(
        segment_id=doc["segmentId"],
        frame_index=frame_index,
        rle=np.asarray(doc["rle"], dtype=np.int64).reshape(-1, 2),
        shape=shape,
        bbox=tuple(doc["bbox"]),
        center=tuple(doc["center"]),
        size=doc["size"],
        mean_score=doc["meanScore"],
        interior_size=doc["interiorSize"],
    )


def prediction_to_dict(pred: SequencePrediction, shape: tuple[int, int]) -> dict:
    return {
        "sequenceId": pred.sequence_id,
        "frameCount": pred.frame_count,
        "height": shape[0],
        "width": shape[1],
        "frames": [
            {"frameIndex": i, "segments": [segment_to_dict(s) for s in segs]}
            for i, segs in enumerate(pred.frames)
        ],
        "tracks": [
            {"trackId": t.track_id, "entries": [[f, s] for f, s in t.entries]}
            for t in pred.tracks
        ],
    }


def prediction_from_dict(doc: dict) -> tuple[SequencePrediction, tuple[int, int]]:
    shape = (doc["height"], doc["width"])
    frames: list[list[Segment]] = [[] for _ in range(doc["frameCount"])]
    for fdoc in doc["frames"]:
        i = fdoc["frameIndex"]
        frames[i] = [segment_from_dict(s, i, shape) for s in fdoc["segments"]]
    centers = {
        (i, seg.segment_id): seg.center for i, segs in enumerate(frames) for seg in segs
    }
    tracks = []
    for tdoc in doc.get("tracks", []):
        track = Track(track_id=tdoc["trackId"])
        for f, s in tdoc["entries"]:
            track.add(f, s, centers[(f, s)])
        tracks.append(track)
    pred = SequencePrediction(
        sequence_id=doc["sequenceId"],
        frames=frames,
        tracks=tracks,
        frame_count=doc["frameCount"],
    )
    return pred, shape
