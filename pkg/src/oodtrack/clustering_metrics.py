"""Cluster-quality scores for retrieved OOD segments.

Three scores over non-noise clusters: instance cohesion (fraction of each
instance's segments captured by its best cluster), per-cluster semantic class
impurity, and per-class fragmentation across clusters. Noise points and
segments without ground-truth overlap are excluded; optionally false-positive
segments contribute a reserved pseudo-class to the impurity score.
"""

from __future__ import annotations

import numpy as np

from .errors import NoClasses, NoClusters, NoInstances, SizeMismatch
from .model import NOISE, ClusterAssignment, FrameTruth, Segment

FALSE_POSITIVE_CLASS = -1


def assign_gt(segment: Segment, truth: FrameTruth) -> tuple[int, int] | None:
    """(class id, instance id) of the ground-truth object with maximal pixel
    overlap, or None when the segment overlaps no object. Ties break toward
    the smaller instance id."""
    if segment.shape != truth.shape:
        raise SizeMismatch("segment and ground truth dimensions differ")
    flat = segment.flat_indices()
    instance = truth.instance.ravel()[flat]
    best_id, best_count = None, 0
    for instance_id in sorted(int(i) for i in np.unique(instance) if i > 0):
        count = int(np.sum(instance == instance_id))
        if count > best_count:
            best_id, best_count = instance_id, count
    if best_id is None:
        return None
    return truth.instance_class(best_id), best_id


def _clustered(assignment: ClusterAssignment):
    return [
        (point, label)
        for point, label in zip(assignment.points, assignment.labels)
        if label != NOISE
    ]


def cs_inst(assignment: ClusterAssignment) -> float:
    """Mean over instances of the largest in-cluster share of that instance."""
    counts: dict[int, dict[int, int]] = {}  # instance -> cluster -> count
    for point, label in _clustered(assignment):
        if point.gt_instance is None:
            continue
        per_cluster = counts.setdefault(point.gt_instance, {})
        per_cluster[label] = per_cluster.get(label, 0) + 1
    if not counts:
        raise NoInstances("no clustered segment carries a ground-truth instance")
    shares = [max(c.values()) / sum(c.values()) for c in counts.values()]
    return float(np.mean(shares))


def cs_imp(assignment: ClusterAssignment, count_false_positive_class: bool = False) -> float:
    """Mean over clusters of the number of distinct ground-truth classes present."""
    classes: dict[int, set[int]] = {}
    for point, label in _clustered(assignment):
        if point.gt_class is not None:
            classes.setdefault(label, set()).add(point.gt_class)
        elif count_false_positive_class:
            classes.setdefault(label, set()).add(FALSE_POSITIVE_CLASS)
    if not classes:
        raise NoClusters("no cluster contains a ground-truth-labeled segment")
    return float(np.mean([len(s) for s in classes.values()]))


def cs_frag(assignment: ClusterAssignment) -> float:
    """Mean over represented classes of the number of clusters containing them."""
    clusters_per_class: dict[int, set[int]] = {}
    for point, label in _clustered(assignment):
        if point.gt_class is None:
            continue
        clusters_per_class.setdefault(point.gt_class, set()).add(label)
    if not clusters_per_class:
        raise NoClasses("no clustered segment carries a ground-truth class")
    return float(np.mean([len(s) for s in clusters_per_class.values()]))


def clustering_scores(
    assignment: ClusterAssignment, count_false_positive_class: bool = False
) -> dict[str, float]:
    return {
        "csInst": cs_inst(assignment),
        "csImp": cs_imp(assignment, count_false_positive_class),
        "csFrag": cs_frag(assignment),
    }
