"""Core domain types shared across the pipeline.

All types are plain immutable-by-convention containers: no I/O, no algorithms
beyond construction-time bookkeeping. Pixel coordinates are (row v, column h)
with origin at the top-left corner. Pixel sets are stored run-length encoded
over row-major flattened indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySegment, IllegalLabel, NonFiniteValue, SizeMismatch

# Semantic label codes.
VOID = 0
NOT_OOD = 1
OOD = 2

# Cluster label reserved for DBSCAN noise.
NOISE = 0


def rle_encode(flat_indices: np.ndarray) -> np.ndarray:
    """Run-length encode sorted row-major flat indices into (start, length) rows."""
    idx = np.asarray(flat_indices, dtype=np.int64)
    if idx.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    breaks = np.flatnonzero(np.diff(idx) != 1)
    starts = np.concatenate(([0], breaks + 1))
    ends = np.concatenate((breaks, [idx.size - 1]))
    runs = np.stack([idx[starts], idx[ends] - idx[starts] + 1], axis=1)
    return runs


def rle_decode(runs: np.ndarray) -> np.ndarray:
    """Decode (start, length) rows back into sorted flat indices."""
    runs = np.asarray(runs, dtype=np.int64).reshape(-1, 2)
    if runs.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([np.arange(s, s + n, dtype=np.int64) for s, n in runs])


def geometric_center(coords: np.ndarray) -> tuple[float, float]:
    """Arithmetic mean of (v, h) pixel coordinates.

    Raises EmptySegment on an empty coordinate set.
    """
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    if coords.shape[0] == 0:
        raise EmptySegment("geometric center of empty pixel set")
    v, h = coords.mean(axis=0)
    return float(v), float(h)


@dataclass(frozen=True)
class ScoreMap:
    """Per-pixel OOD score for one frame; higher means more likely OOD."""

    values: np.ndarray  # (H, W) float32

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise SizeMismatch(f"score map must be 2-D and non-empty, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteValue("score map contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class FrameTruth:
    """Per-pixel ground truth for one labeled frame.

    semantic holds VOID / NOT_OOD / OOD codes; instance and class_ids are
    positive exactly on OOD pixels. The region of interest (ROI) is every
    non-VOID pixel. depth is an optional per-pixel distance in meters.
    """

    semantic: np.ndarray  # (H, W) uint8
    instance: np.ndarray  # (H, W) int32, 0 = background
    class_ids: np.ndarray  # (H, W) int32, 0 = background
    depth: np.ndarray | None = None  # (H, W) float32, meters

    def __post_init__(self):
        semantic = np.asarray(self.semantic, dtype=np.uint8)
        instance = np.asarray(self.instance, dtype=np.int32)
        class_ids = np.asarray(self.class_ids, dtype=np.int32)
        if semantic.shape != instance.shape or semantic.shape != class_ids.shape:
            raise SizeMismatch("semantic, instance and class masks must share dimensions")
        if self.depth is not None:
            depth = np.asarray(self.depth, dtype=np.float32)
            if depth.shape != semantic.shape:
                raise SizeMismatch("depth map dimensions differ from masks")
            depth.flags.writeable = False
            object.__setattr__(self, "depth", depth)
        ood = semantic == OOD
        if np.any((instance > 0) != ood):
            raise IllegalLabel("instance ids must be positive exactly on OOD pixels")
        if np.any((class_ids > 0) != ood):
            raise IllegalLabel("class ids must be positive exactly on OOD pixels")
        for arr in (semantic, instance, class_ids):
            arr.flags.writeable = False
        object.__setattr__(self, "semantic", semantic)
        object.__setattr__(self, "instance", instance)
        object.__setattr__(self, "class_ids", class_ids)

    @property
    def shape(self) -> tuple[int, int]:
        return self.semantic.shape

    @property
    def roi(self) -> np.ndarray:
        """Boolean mask of the region of interest (non-VOID pixels)."""
        return self.semantic != VOID

    @property
    def ood_mask(self) -> np.ndarray:
        return self.semantic == OOD

    def instance_ids(self) -> list[int]:
        ids = np.unique(self.instance)
        return [int(i) for i in ids if i > 0]

    def instance_mask(self, instance_id: int) -> np.ndarray:
        return self.instance == instance_id

    def instance_class(self, instance_id: int) -> int:
        mask = self.instance == instance_id
        return int(self.class_ids[mask][0])

    def instance_min_depth(self, instance_id: int) -> float | None:
        """Depth of a ground-truth object: shortest distance over its pixels."""
        if self.depth is None:
            return None
        mask = self.instance == instance_id
        return float(self.depth[mask].min())


@dataclass(frozen=True)
class Segment:
    """One connected predicted OOD component within a frame."""

    segment_id: int
    frame_index: int
    rle: np.ndarray  # (n, 2) int64 runs over row-major flat indices
    shape: tuple[int, int]  # (H, W) of the parent frame
    bbox: tuple[int, int, int, int]  # (v_min, v_max, h_min, h_max), inclusive
    center: tuple[float, float]  # (v_bar, h_bar)
    size: int
    mean_score: float
    interior_size: int

    def __post_init__(self):
        rle = np.asarray(self.rle, dtype=np.int64).reshape(-1, 2)
        rle.flags.writeable = False
        object.__setattr__(self, "rle", rle)
        if self.size < 1:
            raise EmptySegment(f"segment {self.segment_id} has no pixels")
        if self.interior_size > self.size:
            raise SizeMismatch("interior size exceeds segment size")

    def flat_indices(self) -> np.ndarray:
        return rle_decode(self.rle)

    def coords(self) -> np.ndarray:
        """(n, 2) array of (v, h) pixel coordinates."""
        flat = self.flat_indices()
        w = self.shape[1]
        return np.stack([flat // w, flat % w], axis=1)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.shape[0] * self.shape[1], dtype=bool)
        m[self.flat_indices()] = True
        return m.reshape(self.shape)

    @property
    def boundary_size(self) -> int:
        return self.size - self.interior_size


def make_segment(
    segment_id: int,
    frame_index: int,
    flat_indices: np.ndarray,
    shape: tuple[int, int],
    mean_score: float = 0.0,
    interior_size: int | None = None,
) -> Segment:
    """Build a Segment from sorted flat indices, deriving geometry fields."""
    flat = np.sort(np.asarray(flat_indices, dtype=np.int64))
    if flat.size == 0:
        raise EmptySegment("cannot build a segment from an empty pixel set")
    w = shape[1]
    vs, hs = flat // w, flat % w
    if interior_size is None:
        interior_size = _interior_count(flat, shape)
    return Segment(
        segment_id=segment_id,
        frame_index=frame_index,
        rle=rle_encode(flat),
        shape=tuple(shape),
        bbox=(int(vs.min()), int(vs.max()), int(hs.min()), int(hs.max())),
        center=(float(vs.mean()), float(hs.mean())),
        size=int(flat.size),
        mean_score=float(mean_score),
        interior_size=int(interior_size),
    )


def interior_mask(mask: np.ndarray) -> np.ndarray:
    """Pixels whose full 8-neighborhood lies within the mask (frame borders excluded)."""
    m = np.asarray(mask, dtype=bool)
    interior = np.zeros_like(m)
    if m.shape[0] < 3 or m.shape[1] < 3:
        return interior
    core = m[1:-1, 1:-1].copy()
    for dv in (-1, 0, 1):
        for dh in (-1, 0, 1):
            core &= m[1 + dv : m.shape[0] - 1 + dv, 1 + dh : m.shape[1] - 1 + dh]
    interior[1:-1, 1:-1] = core
    return interior


def _interior_count(flat: np.ndarray, shape: tuple[int, int]) -> int:
    m = np.zeros(shape[0] * shape[1], dtype=bool)
    m[flat] = True
    return int(interior_mask(m.reshape(shape)).sum())


@dataclass
class Track:
    """Persistent ID with the per-frame segments it owns across a sequence."""

    track_id: int
    entries: list[tuple[int, int]] = field(default_factory=list)  # (frame_index, segment_id)
    centers: list[tuple[int, tuple[float, float]]] = field(default_factory=list)

    def add(self, frame_index: int, segment_id: int, center: tuple[float, float]):
        if self.entries and frame_index <= self.entries[-1][0]:
            raise SizeMismatch("track entries must have strictly increasing frame indices")
        self.entries.append((frame_index, segment_id))
        self.centers.append((frame_index, center))

    @property
    def length(self) -> int:
        return len(self.entries)

    @property
    def last_frame(self) -> int:
        return self.entries[-1][0]


@dataclass
class SequencePrediction:
    """Per-frame predicted segments plus their track assignment for one sequence."""

    sequence_id: str
    frames: list[list[Segment]]  # index = frame index
    tracks: list[Track]
    frame_count: int

    def validate(self):
        existing = {
            (f, seg.segment_id) for f, segs in enumerate(self.frames) for seg in segs
        }
        owned: set[tuple[int, int]] = set()
        for track in self.tracks:
            for entry in track.entries:
                if entry not in existing:
                    raise SizeMismatch(f"track {track.track_id} references missing segment {entry}")
                if entry in owned:
                    raise SizeMismatch(f"segment {entry} owned by more than one track")
                owned.add(entry)
                if not 0 <= entry[0] < self.frame_count:
                    raise SizeMismatch(f"frame index {entry[0]} out of range")

    def track_of(self) -> dict[tuple[int, int], int]:
        """Map (frame_index, segment_id) -> track_id."""
        return {
            entry: track.track_id for track in self.tracks for entry in track.entries
        }


@dataclass(frozen=True)
class EmbeddingPoint:
    """A segment's 2-D embedding together with its provenance and ground truth."""

    coords2d: tuple[float, float]
    origin: tuple[str, int, int, int]  # (sequence_id, frame_index, segment_id, track_id)
    gt_class: int | None = None
    gt_instance: int | None = None

    def __post_init__(self):
        if not all(np.isfinite(self.coords2d)):
            raise NonFiniteValue("embedding coordinates must be finite")


@dataclass(frozen=True)
class ClusterAssignment:
    """Cluster labels over embedding points; label NOISE marks unclustered points."""

    points: tuple[EmbeddingPoint, ...]
    labels: tuple[int, ...]

    def __post_init__(self):
        if len(self.points) != len(self.labels):
            raise SizeMismatch("labels and points differ in length")

    @property
    def cluster_ids(self) -> list[int]:
        return sorted({lab for lab in self.labels if lab != NOISE})
