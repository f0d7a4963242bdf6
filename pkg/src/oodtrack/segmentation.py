"""Turning a score map into predicted OOD segments.

ROI masking, score thresholding (strict inequality, score > tau) and
8-connected component extraction. Default thresholds follow the shipped
dataset presets: tau=0.72 (SOS-style) and tau=0.81 (CWL-style).
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import OutOfBounds
from .model import ScoreMap, Segment, interior_mask, make_segment

TAU_SOS = 0.72
TAU_CWL = 0.81

_EIGHT = np.ones((3, 3), dtype=int)


def threshold_mask(score: ScoreMap, roi: np.ndarray, tau: float) -> np.ndarray:
    """Binary mask: pixel marked iff inside the ROI and score strictly above tau."""
    return np.asarray(roi, dtype=bool) & (score.values > tau)


def connected_components(
    mask: np.ndarray, frame_index: int = 0, min_size: int = 1, score: ScoreMap | None = None
) -> list[Segment]:
    """Maximal 8-connected components of the mask, sized at least min_size.

    Segment ids are assigned 1..m in row-major scan order of each component's
    first pixel, which makes the output deterministic.
    """
    mask = np.asarray(mask, dtype=bool)
    labeled, count = ndimage.label(mask, structure=_EIGHT)
    segments: list[Segment] = []
    flat_labels = labeled.ravel()
    order = np.argsort(flat_labels, kind="stable")
    boundaries = np.searchsorted(flat_labels[order], np.arange(1, count + 2))
    next_id = 1
    first_pixels = []
    for lab in range(1, count + 1):
        flat = order[boundaries[lab - 1] : boundaries[lab]]
        if flat.size < min_size:
            continue
        first_pixels.append((int(flat.min()), flat))
    first_pixels.sort(key=lambda item: item[0])
    for _, flat in first_pixels:
        mean_score = float(score.values.ravel()[flat].mean()) if score is not None else 0.0
        segments.append(
            make_segment(next_id, frame_index, flat, mask.shape, mean_score=mean_score)
        )
        next_id += 1
    return segments


def segment_score_stats(seg: Segment, score: ScoreMap) -> tuple[float, float, float, float]:
    """(mean, variance, mean boundary score, mean interior score) over the segment.

    Boundary and interior statistics fall back to whole-segment statistics
    when the respective pixel subset is empty.
    """
    if seg.shape != score.shape:
        raise OutOfBounds("segment and score map dimensions differ")
    flat = seg.flat_indices()
    if flat.max() >= score.height * score.width:
        raise OutOfBounds("segment pixels exceed score map bounds")
    values = score.values.ravel()[flat]
    mean = float(values.mean())
    var = float(values.var())
    inner = interior_mask(seg.mask()).ravel()[flat]
    interior_vals = values[inner]
    boundary_vals = values[~inner]
    mean_interior = float(interior_vals.mean()) if interior_vals.size else mean
    mean_boundary = float(boundary_vals.mean()) if boundary_vals.size else mean
    return mean, var, mean_boundary, mean_interior


def extract_segments(
    score: ScoreMap, roi: np.ndarray, tau: float, min_size: int = 1, frame_index: int = 0
) -> list[Segment]:
    """Threshold then extract components, populating per-segment mean scores."""
    mask = threshold_mask(score, roi, tau)
    return connected_components(mask, frame_index=frame_index, min_size=min_size, score=score)
