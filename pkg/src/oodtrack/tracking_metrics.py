"""CLEAR-MOT style evaluation of OOD tracking.

MOTA = 1 - (FP + FN + mismatches) / total ground-truth object-frames,
MOTP = mean Euclidean distance between geometric centers of matched pairs,
plus MT/PT/ML coverage classes and the tracking-length metric, which also
credits unlabeled frames bracketed between labeled occurrences when the
matched track ID persists through them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoGtObjects
from .model import FrameTruth, SequencePrediction, geometric_center


@dataclass
class FrameObjects:
    """Ground-truth objects and tracked predictions of one labeled frame."""

    frame_index: int
    gt: dict[int, np.ndarray]  # instance id -> flat pixel indices
    preds: dict[int, np.ndarray]  # track id -> flat pixel indices
    shape: tuple[int, int]

    def gt_center(self, instance_id: int) -> tuple[float, float]:
        return _center(self.gt[instance_id], self.shape)

    def pred_center(self, track_id: int) -> tuple[float, float]:
        return _center(self.preds[track_id], self.shape)


def _center(flat: np.ndarray, shape: tuple[int, int]) -> tuple[float, float]:
    w = shape[1]
    return geometric_center(np.stack([flat // w, flat % w], axis=1))


def _iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.intersect1d(a, b, assume_unique=True).size
    if inter == 0:
        return 0.0
    return inter / (a.size + b.size - inter)


@dataclass
class MatchOutcome:
    matches: list[dict[int, int]]  # per labeled frame: instance id -> track id
    fp: int = 0
    fn: int = 0
    mme: int = 0
    gt_frames: int = 0
    distances: list[float] = field(default_factory=list)


def match_frames(frames: list[FrameObjects]) -> MatchOutcome:
    """Frame-by-frame correspondence with persistence, overlap gate IoU > 0.

    A correspondence from the previous labeled frame persists while both sides
    are present and still overlap; remaining pairs are matched greedily by
    descending mask IoU. A ground-truth object matched to a different track id
    than in its previous match counts one mismatch.
    """
    outcome = MatchOutcome(matches=[])
    prev_corr: dict[int, int] = {}
    last_matched: dict[int, int] = {}
    for frame in frames:
        corr: dict[int, int] = {}
        used_tracks: set[int] = set()
        for instance_id, track_id in prev_corr.items():
            if instance_id in frame.gt and track_id in frame.preds:
                if _iou(frame.gt[instance_id], frame.preds[track_id]) > 0.0:
                    corr[instance_id] = track_id
                    used_tracks.add(track_id)
        candidates = []
        for instance_id in sorted(frame.gt):
            if instance_id in corr:
                continue
            for track_id in sorted(frame.preds):
                iou = _iou(frame.gt[instance_id], frame.preds[track_id])
                if iou > 0.0:
                    candidates.append((-iou, instance_id, track_id))
        for _, instance_id, track_id in sorted(candidates):
            if instance_id in corr or track_id in used_tracks:
                continue
            corr[instance_id] = track_id
            used_tracks.add(track_id)

        for instance_id, track_id in sorted(corr.items()):
            if instance_id in last_matched and last_matched[instance_id] != track_id:
                outcome.mme += 1
            last_matched[instance_id] = track_id
            gv, gh = frame.gt_center(instance_id)
            pv, ph = frame.pred_center(track_id)
            outcome.distances.append(float(np.hypot(gv - pv, gh - ph)))
        outcome.gt_frames += len(frame.gt)
        outcome.fn += len(frame.gt) - len(corr)
        outcome.fp += len(frame.preds) - len(corr)
        outcome.matches.append(corr)
        prev_corr = corr
    return outcome


def mota_motp(outcome: MatchOutcome) -> tuple[float, float, float]:
    """(MOTA, mismatch ratio, MOTP in pixels) from accumulated counts."""
    g = outcome.gt_frames
    if g == 0:
        raise NoGtObjects("tracking metrics need at least one ground-truth object-frame")
    mota = 1.0 - (outcome.fp + outcome.fn + outcome.mme) / g
    mme_ratio = outcome.mme / g
    motp = float(np.mean(outcome.distances)) if outcome.distances else 0.0
    return mota, mme_ratio, motp


def coverage_class(matched: int, occurrences: int) -> str:
    """MT if tracked >= 80% of occurrence frames, ML if < 20%, else PT."""
    frac = matched / occurrences
    if frac >= 0.8:
        return "MT"
    if frac < 0.2:
        return "ML"
    return "PT"


def tracking_length(
    occurrence_frames: list[int],
    matches: dict[int, int],
    labeled: set[int],
    track_presence: dict[int, set[int]],
) -> float:
    """Fraction of an object's frames covered by its matched track.

    occurrence_frames: labeled frames where the object occurs. matches maps a
    labeled frame to the matched track id. Unlabeled frames strictly between
    consecutive labeled occurrences enter the denominator; they enter the
    numerator when the track matched at the earlier occurrence is present.
    """
    occ = sorted(occurrence_frames)
    num = sum(1 for f in occ if f in matches)
    den = len(occ)
    for t, t_next in zip(occ, occ[1:]):
        between = [u for u in range(t + 1, t_next) if u not in labeled]
        den += len(between)
        if t in matches:
            track_frames = track_presence.get(matches[t], set())
            num += sum(1 for u in between if u in track_frames)
    return num / den if den > 0 else 0.0


@dataclass
class TrackingEvalResult:
    mota: float
    mme_ratio: float
    motp: float
    gt_count: int
    mt: int
    pt: int
    ml: int
    lt_per_object: dict[str, float]
    lt_mean: float
    fp: int
    fn: int
    mme: int
    gt_frames: int


def frame_objects_from(
    pred: SequencePrediction, truths: dict[int, FrameTruth]
) -> list[FrameObjects]:
    """Build per-labeled-frame object sets from a prediction and ground truth."""
    track_of = pred.track_of()
    frames = []
    for frame_index in sorted(truths):
        truth = truths[frame_index]
        gt = {
            instance_id: np.flatnonzero((truth.instance == instance_id).ravel())
            for instance_id in truth.instance_ids()
        }
        preds = {}
        if frame_index < pred.frame_count:
            for seg in pred.frames[frame_index]:
                preds[track_of[(frame_index, seg.segment_id)]] = seg.flat_indices()
        frames.append(FrameObjects(frame_index, gt, preds, truth.shape))
    return frames


def evaluate_tracking(
    runs: list[tuple[SequencePrediction, dict[int, FrameTruth]]],
) -> TrackingEvalResult:
    """Aggregate CLEAR-MOT metrics over sequences.

    Each run pairs a SequencePrediction with ground truth for its labeled
    frames (frame index -> FrameTruth).
    """
    total = MatchOutcome(matches=[])
    mt = pt = ml = gt_count = 0
    lt_per_object: dict[str, float] = {}
    for pred, truths in runs:
        frames = frame_objects_from(pred, truths)
        outcome = match_frames(frames)
        total.fp += outcome.fp
        total.fn += outcome.fn
        total.mme += outcome.mme
        total.gt_frames += outcome.gt_frames
        total.distances.extend(outcome.distances)

        labeled = set(truths)
        track_presence: dict[int, set[int]] = {
            t.track_id: {f for f, _ in t.entries} for t in pred.tracks
        }
        per_object_occ: dict[int, list[int]] = {}
        per_object_matches: dict[int, dict[int, int]] = {}
        for frame, corr in zip(frames, outcome.matches):
            for instance_id in frame.gt:
                per_object_occ.setdefault(instance_id, []).append(frame.frame_index)
            for instance_id, track_id in corr.items():
                per_object_matches.setdefault(instance_id, {})[frame.frame_index] = track_id
        for instance_id, occ in sorted(per_object_occ.items()):
            matches = per_object_matches.get(instance_id, {})
            cls = coverage_class(len(matches), len(occ))
            gt_count += 1
            mt += cls == "MT"
            pt += cls == "PT"
            ml += cls == "ML"
            lt = tracking_length(occ, matches, labeled, track_presence)
            lt_per_object[f"{pred.sequence_id}/{instance_id}"] = lt

    mota, mme_ratio, motp = mota_motp(total)
    lt_values = list(lt_per_object.values())
    return TrackingEvalResult(
        mota=mota,
        mme_ratio=mme_ratio,
        motp=motp,
        gt_count=gt_count,
        mt=mt,
        pt=pt,
        ml=ml,
        lt_per_object=lt_per_object,
        lt_mean=float(np.mean(lt_values)) if lt_values else 0.0,
        fp=total.fp,
        fn=total.fn,
        mme=total.mme,
        gt_frames=total.gt_frames,
    )
