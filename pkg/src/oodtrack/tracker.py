"""Overlap/center/regression tracking of OOD segments over a sequence.

Per frame the pipeline runs five steps in order: (1) aggregate nearby
segments, (2, 3) match against the previous frame by overlap first, center
proximity second, (4) bridge gaps via linear regression of track centers,
(5) assign fresh IDs to whatever is left. First-frame IDs come from a seeded
generator, remapped to consecutive positive integers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import Segment, SequencePrediction, Track, make_segment


@dataclass
class TrackerConfig:
    aggregation_dist: float | None = None  # default 0.01 * image diagonal
    center_dist: float | None = None  # default 0.05 * image diagonal
    min_iou: float = 0.35
    regression_window: int = 5
    max_gap: int = 2

    def resolved(self, shape: tuple[int, int]) -> "TrackerConfig":
        diag = math.hypot(shape[0], shape[1])
        return TrackerConfig(
            aggregation_dist=self.aggregation_dist if self.aggregation_dist is not None else 0.01 * diag,
            center_dist=self.center_dist if self.center_dist is not None else 0.05 * diag,
            min_iou=self.min_iou,
            regression_window=self.regression_window,
            max_gap=self.max_gap,
        )


def mask_iou(a: Segment, b: Segment) -> float:
    fa, fb = a.flat_indices(), b.flat_indices()
    inter = np.intersect1d(fa, fb, assume_unique=True).size
    if inter == 0:
        return 0.0
    return inter / (fa.size + fb.size - inter)


def _center_dist(a: tuple[float, float], b: tuple[float, float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def step1_aggregate(segs: list[Segment], aggregation_dist: float) -> list[Segment]:
    """Merge same-frame segments whose centers are closer than aggregation_dist.

    Merging is transitive; a merged segment keeps the smallest constituent id.
    """
    if len(segs) < 2:
        return list(segs)
    n = len(segs)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if _center_dist(segs[i].center, segs[j].center) < aggregation_dist:
                parent[find(i)] = find(j)
    groups: dict[int, list[Segment]] = {}
    for i, seg in enumerate(segs):
        groups.setdefault(find(i), []).append(seg)
    merged = []
    for members in groups.values():
        if len(members) == 1:
            merged.append(members[0])
            continue
        flat = np.concatenate([m.flat_indices() for m in members])
        total = sum(m.size for m in members)
        mean_score = sum(m.mean_score * m.size for m in members) / total
        merged.append(
            make_segment(
                segment_id=min(m.segment_id for m in members),
                frame_index=members[0].frame_index,
                flat_indices=flat,
                shape=members[0].shape,
                mean_score=mean_score,
            )
        )
    merged.sort(key=lambda s: s.segment_id)
    return merged


def step23_match(
    prev_tracked: list[tuple[Track, Segment]],
    curr_segs: list[Segment],
    cfg: TrackerConfig,
) -> dict[int, Track]:
    """Greedy one-to-one matching between consecutive frames.

    Pairs with IoU >= min_iou are matched first (descending IoU), then
    remaining pairs with center distance <= center_dist (ascending distance).
    Returns segment_id -> track.
    """
    assignment: dict[int, Track] = {}
    used_tracks: set[int] = set()

    iou_pairs = []
    dist_pairs = []
    for track, prev_seg in prev_tracked:
        for seg in curr_segs:
            iou = mask_iou(prev_seg, seg)
            if iou >= cfg.min_iou:
                iou_pairs.append((-iou, track.track_id, seg.segment_id, track, seg))
            d = _center_dist(prev_seg.center, seg.center)
            if d <= cfg.center_dist:
                dist_pairs.append((d, track.track_id, seg.segment_id, track, seg))
    for key_pairs in (sorted(iou_pairs, key=lambda p: p[:3]), sorted(dist_pairs, key=lambda p: p[:3])):
        for _, _, _, track, seg in key_pairs:
            if track.track_id in used_tracks or seg.segment_id in assignment:
                continue
            assignment[seg.segment_id] = track
            used_tracks.add(track.track_id)
    return assignment


def step4_regress(
    track: Track, target_frame: int, regression_window: int, max_gap: int
) -> tuple[float, float] | None:
    """OLS-extrapolated center of the track at target_frame, or None.

    Requires at least two center observations within regression_window frames
    of the target and a gap (missed frames since the last match) of at most
    max_gap.
    """
    gap = target_frame - track.last_frame - 1
    if gap < 0 or gap > max_gap:
        return None
    obs = [(f, c) for f, c in track.centers if target_frame - f <= regression_window]
    if len(obs) < 2:
        return None
    t = np.array([f for f, _ in obs], dtype=np.float64)
    vs = np.array([c[0] for _, c in obs], dtype=np.float64)
    hs = np.array([c[1] for _, c in obs], dtype=np.float64)
    a = np.stack([t, np.ones_like(t)], axis=1)
    coef_v, _, _, _ = np.linalg.lstsq(a, vs, rcond=None)
    coef_h, _, _, _ = np.linalg.lstsq(a, hs, rcond=None)
    return (
        float(coef_v[0] * target_frame + coef_v[1]),
        float(coef_h[0] * target_frame + coef_h[1]),
    )


def track_sequence(
    frames: list[list[Segment]],
    cfg: TrackerConfig,
    seed: int = 0,
    sequence_id: str = "",
) -> SequencePrediction:
    """Assign a persistent track ID to every segment in every frame."""
    if not frames:
        return SequencePrediction(sequence_id, [], [], 0)
    shape = None
    for segs in frames:
        if segs:
            shape = segs[0].shape
            break
    rcfg = cfg.resolved(shape) if shape is not None else cfg.resolved((1, 1))

    tracks: list[Track] = []
    last_segment: dict[int, Segment] = {}  # track_id -> segment at its last entry
    out_frames: list[list[Segment]] = []
    rng = np.random.default_rng(seed)
    next_id = 1

    for t, raw_segs in enumerate(frames):
        segs = step1_aggregate(raw_segs, rcfg.aggregation_dist)
        out_frames.append(segs)
        assigned: dict[int, Track] = {}

        if t == 0:
            if segs:
                draws = rng.integers(0, np.iinfo(np.int64).max, size=len(segs))
                ranks = np.argsort(np.argsort(draws, kind="stable"), kind="stable")
                for seg, rank in zip(segs, ranks):
                    track = Track(track_id=int(rank) + 1)
                    tracks.append(track)
                    assigned[seg.segment_id] = track
                next_id = len(segs) + 1
        else:
            prev_tracked = sorted(
                (
                    (trk, last_segment[trk.track_id])
                    for trk in tracks
                    if trk.last_frame == t - 1
                ),
                key=lambda pair: pair[0].track_id,
            )
            assigned.update(step23_match(prev_tracked, segs, rcfg))

            # step 4: bridge gaps for still-unmatched segments
            matched_ids = {trk.track_id for trk in assigned.values()}
            open_tracks = [
                trk
                for trk in tracks
                if trk.track_id not in matched_ids
                and 0 <= t - trk.last_frame - 1 <= rcfg.max_gap
            ]
            candidates = []
            for trk in open_tracks:
                pred = step4_regress(trk, t, rcfg.regression_window, rcfg.max_gap)
                if pred is None:
                    continue
                for seg in segs:
                    if seg.segment_id in assigned:
                        continue
                    d = _center_dist(pred, seg.center)
                    if d <= rcfg.center_dist:
                        candidates.append((d, trk.track_id, seg.segment_id, trk, seg))
            used = set(matched_ids)
            for _, _, _, trk, seg in sorted(candidates, key=lambda c: c[:3]):
                if trk.track_id in used or seg.segment_id in assigned:
                    continue
                assigned[seg.segment_id] = trk
                used.add(trk.track_id)

            # step 5: new IDs
            for seg in segs:
                if seg.segment_id not in assigned:
                    track = Track(track_id=next_id)
                    next_id += 1
                    tracks.append(track)
                    assigned[seg.segment_id] = track

        for seg in segs:
            track = assigned[seg.segment_id]
            track.add(t, seg.segment_id, seg.center)
            last_segment[track.track_id] = seg

    pred = SequencePrediction(
        sequence_id=sequence_id,
        frames=out_frames,
        tracks=sorted(tracks, key=lambda trk: trk.track_id),
        frame_count=len(frames),
    )
    pred.validate()
    return pred
