"""False-positive removal via hand-crafted segment features and L1 logistic regression.

The feature vector has 15 fixed entries (see FEATURE_NAMES). Training
minimizes mean logistic loss plus lambda * ||w||_1 (intercept unpenalized)
on standardized features with proximal gradient descent (ISTA) and
backtracking line search.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateData, NoConvergence, OutOfBounds, SizeMismatch, TooFewSequences
from .model import FrameTruth, ScoreMap, Segment, interior_mask
from .segmentation import segment_score_stats

FEATURE_NAMES = [
    "size",
    "interior_size",
    "boundary_size",
    "boundary_ratio",
    "mean_score",
    "var_score",
    "mean_boundary_score",
    "mean_interior_score",
    "interior_boundary_gap",
    "center_v_rel",
    "center_h_rel",
    "bbox_width_rel",
    "bbox_height_rel",
    "bbox_aspect",
    "touches_roi_border",
]

N_FEATURES = len(FEATURE_NAMES)

LAMBDA_GRID = tuple(np.logspace(-4, 0, 9))


def extract_meta_features(seg: Segment, score: ScoreMap, roi: np.ndarray) -> np.ndarray:
    """Deterministic 15-entry feature vector for one segment (FEATURE_NAMES order)."""
    h, w = seg.shape
    if score.shape != (h, w) or np.asarray(roi).shape != (h, w):
        raise OutOfBounds("segment, score map and ROI dimensions differ")
    mean, var, mean_boundary, mean_interior = segment_score_stats(seg, score)
    boundary = seg.size - seg.interior_size
    v_min, v_max, h_min, h_max = seg.bbox
    bbox_w = h_max - h_min + 1
    bbox_h = v_max - v_min + 1
    touches = _touches_roi_border(seg, np.asarray(roi, dtype=bool))
    return np.array(
        [
            float(seg.size),
            float(seg.interior_size),
            float(boundary),
            boundary / seg.size,
            mean,
            var,
            mean_boundary,
            mean_interior,
            mean_interior - mean_boundary,
            seg.center[0] / h,
            seg.center[1] / w,
            bbox_w / w,
            bbox_h / h,
            bbox_w / bbox_h,
            1.0 if touches else 0.0,
        ],
        dtype=np.float64,
    )


def _touches_roi_border(seg: Segment, roi: np.ndarray) -> bool:
    # A pixel touches the ROI border if any 8-neighbor (including positions
    # outside the frame) lies outside the ROI.
    inner = interior_mask(roi)
    coords = seg.coords()
    return not bool(inner[coords[:, 0], coords[:, 1]].all())


@dataclass
class MetaModel:
    weights: np.ndarray  # (15,)
    intercept: float
    feature_means: np.ndarray
    feature_stds: np.ndarray
    lam: float
    decision_threshold: float = 0.5

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(features) - self.feature_means) / self.feature_stds

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        z = self.standardize(features) @ self.weights + self.intercept
        return _sigmoid(z)

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "featureMeans": self.feature_means.tolist(),
            "featureStds": self.feature_stds.tolist(),
            "lambda": self.lam,
            "decisionThreshold": self.decision_threshold,
            "featureNames": FEATURE_NAMES,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MetaModel":
        return cls(
            weights=np.asarray(doc["weights"], dtype=np.float64),
            intercept=float(doc["intercept"]),
            feature_means=np.asarray(doc["featureMeans"], dtype=np.float64),
            feature_stds=np.asarray(doc["featureStds"], dtype=np.float64),
            lam=float(doc["lambda"]),
            decision_threshold=float(doc["decisionThreshold"]),
        )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss(w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray) -> float:
    """Mean logistic loss; y in {0, 1}, x already standardized."""
    z = x @ w + b
    # log(1 + exp(z)) - y*z, computed stably
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def logistic_gradient(
    w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, float]:
    z = x @ w + b
    r = _sigmoid(z) - y
    return x.T @ r / len(y), float(np.mean(r))


def l1_objective(w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray, lam: float) -> float:
    return logistic_loss(w, b, x, y) + lam * float(np.abs(w).sum())


def _soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def train_meta(
    features: np.ndarray,
    labels: np.ndarray,
    lam: float,
    tol: float = 1e-8,
    max_iter: int = 10_000,
    decision_threshold: float = 0.5,
) -> MetaModel:
    """Fit L1-penalized logistic regression with ISTA and backtracking line search."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).ravel()
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise SizeMismatch("features and labels disagree in sample count")
    if y.min() == y.max():
        raise DegenerateData("training requires at least one sample of each class")
    means = x.mean(axis=0)
    stds = x.std(axis=0)
    stds[stds == 0.0] = 1.0  # constant features carry no signal; keep stds positive
    xs = (x - means) / stds

    w = np.zeros(x.shape[1])
    b = 0.0
    obj = l1_objective(w, b, xs, y, lam)
    step = 1.0
    for _ in range(max_iter):
        gw, gb = logistic_gradient(w, b, xs, y)
        loss = logistic_loss(w, b, xs, y)
        while True:
            w_new = _soft_threshold(w - step * gw, lam * step)
            b_new = b - step * gb
            dw, db = w_new - w, b_new - b
            quad = loss + gw @ dw + gb * db + (dw @ dw + db * db) / (2.0 * step)
            if logistic_loss(w_new, b_new, xs, y) <= quad + 1e-15:
                break
            step *= 0.5
        w, b = w_new, b_new
        obj_new = l1_objective(w, b, xs, y, lam)
        if obj - obj_new < tol:
            obj = obj_new
            break
        obj = obj_new
        step *= 1.2  # allow the step to recover after backtracking
    else:
        raise NoConvergence(f"ISTA did not converge within {max_iter} iterations")
    return MetaModel(
        weights=w,
        intercept=float(b),
        feature_means=means,
        feature_stds=stds,
        lam=float(lam),
        decision_threshold=decision_threshold,
    )


def kkt_residual(model: MetaModel, features: np.ndarray, labels: np.ndarray) -> float:
    """Max violation of the L1 optimality conditions at the fitted point."""
    xs = model.standardize(np.asarray(features, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64).ravel()
    gw, gb = logistic_gradient(model.weights, model.intercept, xs, y)
    res = np.where(
        model.weights != 0.0,
        np.abs(gw + model.lam * np.sign(model.weights)),
        np.maximum(np.abs(gw) - model.lam, 0.0),
    )
    return float(max(res.max(), abs(gb)))


def apply_meta(
    model: MetaModel, segs: list[Segment], score: ScoreMap, roi: np.ndarray
) -> list[Segment]:
    """Keep segments whose predicted TP probability reaches the decision threshold."""
    kept = []
    for seg in segs:
        proba = float(model.predict_proba(extract_meta_features(seg, score, roi))[0])
        if proba >= model.decision_threshold:
            kept.append(seg)
    return kept


def label_segments_for_training(pred_segs: list[Segment], truth: FrameTruth) -> np.ndarray:
    """Boolean TP labels: a segment is TP iff it overlaps ground-truth OOD."""
    ood = truth.ood_mask.ravel()
    labels = np.zeros(len(pred_segs), dtype=bool)
    for i, seg in enumerate(pred_segs):
        if seg.shape != truth.shape:
            raise SizeMismatch("segment frame dimensions differ from ground truth")
        labels[i] = bool(ood[seg.flat_indices()].any())
    return labels


def select_lambda(
    features: np.ndarray,
    labels: np.ndarray,
    grid=LAMBDA_GRID,
    folds: int = 5,
    seed: int = 0,
) -> float:
    """Pick lambda by k-fold cross-validated F1 of the TP/FP classification."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=bool).ravel()
    n = len(y)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    folds = min(folds, n)
    best_lam, best_f1 = float(grid[0]), -1.0
    for lam in grid:
        tp = fp = fn = 0
        for k in range(folds):
            test = order[k::folds]
            train = np.setdiff1d(order, test)
            if y[train].min() == y[train].max():
                continue
            model = train_meta(x[train], y[train], float(lam))
            pred = model.predict_proba(x[test]) >= model.decision_threshold
            tp += int(np.sum(pred & y[test]))
            fp += int(np.sum(pred & ~y[test]))
            fn += int(np.sum(~pred & y[test]))
        f1 = 2 * tp / (2 * tp + fn + fp) if (2 * tp + fn + fp) > 0 else 0.0
        if f1 > best_f1:
            best_f1, best_lam = f1, float(lam)
    return best_lam


# --- training protocols ---

SequenceSamples = dict[str, tuple[np.ndarray, np.ndarray]]  # seq id -> (features, labels)


def run_protocol(
    dataset_a: SequenceSamples,
    dataset_b: SequenceSamples | None,
    protocol: str,
    lam: float | None = None,
    decision_threshold: float = 0.5,
) -> tuple[dict[str, MetaModel], dict[str, np.ndarray]]:
    """Train meta models under protocol M1 (leave-one-sequence-out on dataset_a)
    or M2 (train on dataset_b, predict dataset_a).

    Returns (models keyed by held-out sequence or "all", per-sequence TP
    probabilities on dataset_a).
    """
    if protocol == "M1":
        if len(dataset_a) < 2:
            raise TooFewSequences("protocol M1 needs at least two sequences")
        models: dict[str, MetaModel] = {}
        predictions: dict[str, np.ndarray] = {}
        for held_out in sorted(dataset_a):
            train_x = np.concatenate(
                [dataset_a[s][0] for s in sorted(dataset_a) if s != held_out]
            )
            train_y = np.concatenate(
                [dataset_a[s][1] for s in sorted(dataset_a) if s != held_out]
            )
            model = _fit(train_x, train_y, lam, decision_threshold)
            models[held_out] = model
            predictions[held_out] = model.predict_proba(dataset_a[held_out][0])
        return models, predictions
    if protocol == "M2":
        if dataset_b is None or not dataset_b:
            raise TooFewSequences("protocol M2 needs a second dataset to train on")
        train_x = np.concatenate([dataset_b[s][0] for s in sorted(dataset_b)])
        train_y = np.concatenate([dataset_b[s][1] for s in sorted(dataset_b)])
        model = _fit(train_x, train_y, lam, decision_threshold)
        predictions = {s: model.predict_proba(dataset_a[s][0]) for s in sorted(dataset_a)}
        return {"all": model}, predictions
    raise ValueError(f"unknown protocol {protocol!r}")


def _fit(x: np.ndarray, y: np.ndarray, lam: float | None, decision_threshold: float) -> MetaModel:
    if lam is None:
        lam = select_lambda(x, y)
    model = train_meta(x, y, lam, decision_threshold=decision_threshold)
    return model
