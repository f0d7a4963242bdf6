"""Toolkit for detecting, tracking and retrieving out-of-distribution (OOD)
objects in video: score-map segmentation, false-positive removal via meta
classification, overlap/regression tracking, embedding-based retrieval, and
an evaluation suite for all of it."""

__version__ = "0.1.0"

from .errors import DataError, NumericalError, OodTrackError
from .model import (
    NOISE,
    NOT_OOD,
    OOD,
    VOID,
    ClusterAssignment,
    EmbeddingPoint,
    FrameTruth,
    ScoreMap,
    Segment,
    SequencePrediction,
    Track,
    make_segment,
)
from .segmentation import TAU_CWL, TAU_SOS, extract_segments
from .tracker import TrackerConfig, track_sequence
from .retrieval import DBSCAN_EPSILON, DBSCAN_MIN_PTS, RetrievalConfig, TsneConfig

__all__ = [
    "DataError",
    "NumericalError",
    "OodTrackError",
    "NOISE",
    "NOT_OOD",
    "OOD",
    "VOID",
    "ClusterAssignment",
    "EmbeddingPoint",
    "FrameTruth",
    "ScoreMap",
    "Segment",
    "SequencePrediction",
    "Track",
    "make_segment",
    "TAU_CWL",
    "TAU_SOS",
    "extract_segments",
    "TrackerConfig",
    "track_sequence",
    "DBSCAN_EPSILON",
    "DBSCAN_MIN_PTS",
    "RetrievalConfig",
    "TsneConfig",
    "__version__",
]
