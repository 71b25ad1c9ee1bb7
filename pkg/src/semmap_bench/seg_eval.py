"""Point association, confusion matrices and segmentation metrics.

Conventions:

* association runs GT -> prediction: every GT point takes the class of its
  nearest predicted point within ``radius``; ties go to the lowest point index.
* ``-1`` in a matched-prediction array means "no prediction" (no point in
  range, or the nearest predicted point is void). Such GT points are false
  negatives of their class.
* mAcc is mean per-class recall, TP / (TP + FN), over classes with GT points.
* f-mIoU weights each class IoU by its GT point count n_c.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .conditions import ConditionKind
from .errors import ContractError, SchemaError, UndefinedMetricError
from .ingest.cloud import LabeledPointCloud

DEFAULT_RADIUS = 0.05
NO_MATCH = -1
METRICS = ("macc", "fmiou")


def associate_points(gt: LabeledPointCloud, pred: LabeledPointCloud,
                     radius: float = DEFAULT_RADIUS) -> np.ndarray:
    """Predicted class for each GT point, ``NO_MATCH`` where nothing is in range."""
    if not radius > 0:
        raise ContractError(f"radius must be positive, got {radius}")
    n = len(gt)
    out = np.full(n, NO_MATCH, dtype=np.int64)
    if n == 0 or len(pred) == 0:
        return out
    gt_pts = np.asarray(gt.points, dtype=np.float64)
    pred_pts = np.asarray(pred.points, dtype=np.float64)
    tree = cKDTree(pred_pts)
    r2 = radius * radius
    # Slightly inflated bounds so the tree never drops a point the exact
    # squared-distance test below would accept.
    dist, idx = tree.query(gt_pts, k=1, distance_upper_bound=radius * (1 + 1e-9) + 1e-12)
    hit = np.flatnonzero(np.isfinite(dist))
    if hit.size == 0:
        return out
    nearest = idx[hit]
    # Resolve equal-distance ties explicitly; the tree's choice among them is arbitrary.
    shells = tree.query_ball_point(gt_pts[hit], dist[hit] * (1 + 1e-9) + 1e-12)
    for k, g in enumerate(hit):
        cand = shells[k]
        if len(cand) > 1:
            cand = np.sort(np.asarray(cand))
            d2 = ((pred_pts[cand] - gt_pts[g]) ** 2).sum(axis=1)
            nearest[k] = cand[int(np.argmin(d2))]
    d2 = ((pred_pts[nearest] - gt_pts[hit]) ** 2).sum(axis=1)
    ok = d2 <= r2
    out[hit[ok]] = pred.class_ids[nearest[ok]]
    out[out < 0] = NO_MATCH
    return out


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows are GT classes, columns predicted classes; ``unmatched`` holds
    GT points that received no prediction."""

    counts: np.ndarray
    unmatched: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        unmatched = np.asarray(self.unmatched, dtype=np.int64)
        c = counts.shape[0] if counts.ndim == 2 else -1
        if counts.ndim != 2 or counts.shape != (c, c) or unmatched.shape != (c,):
            raise ContractError("counts must be C x C and unmatched length C")
        if (counts < 0).any() or (unmatched < 0).any():
            raise ContractError("confusion entries must be non-negative")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "unmatched", unmatched)

    @property
    def class_count(self) -> int:
        return self.counts.shape[0]

    @property
    def true_positives(self) -> np.ndarray:
        return np.diag(self.counts)

    @property
    def gt_totals(self) -> np.ndarray:
        """n_c: number of GT points of each class."""
        return self.counts.sum(axis=1) + self.unmatched

    @property
    def false_negatives(self) -> np.ndarray:
        return self.gt_totals - self.true_positives

    @property
    def false_positives(self) -> np.ndarray:
        return self.counts.sum(axis=0) - self.true_positives

    def __eq__(self, other):
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return (np.array_equal(self.counts, other.counts)
                and np.array_equal(self.unmatched, other.unmatched))

    def __add__(self, other):
        return ConfusionMatrix(self.counts + other.counts, self.unmatched + other.unmatched)

    def to_dict(self) -> dict:
        return {"counts": self.counts.tolist(), "unmatched": self.unmatched.tolist()}


def build_confusion(gt_classes, matched_pred, num_classes: int) -> ConfusionMatrix:
    gt = np.asarray(gt_classes, dtype=np.int64)
    pred = np.asarray(matched_pred, dtype=np.int64)
    if gt.shape != pred.shape or gt.ndim != 1:
        raise ContractError("gt_classes and matched_pred must be 1-D of equal length")
    if num_classes < 1:
        raise ContractError("num_classes must be >= 1")
    if gt.size and (gt.min() < 0 or gt.max() >= num_classes):
        raise ContractError("GT class id out of range (void points must be removed first)")
    if pred.size and (pred.min() < NO_MATCH or pred.max() >= num_classes):
        raise ContractError("predicted class id out of range")
    matched = pred != NO_MATCH
    flat = gt[matched] * num_classes + pred[matched]
    counts = np.bincount(flat, minlength=num_classes * num_classes)
    counts = counts.reshape(num_classes, num_classes)
    unmatched = np.bincount(gt[~matched], minlength=num_classes)
    return ConfusionMatrix(counts, unmatched)


def compute_macc(cm: ConfusionMatrix) -> float:
    n = cm.gt_totals
    present = n > 0
    if not present.any():
        raise UndefinedMetricError("mAcc undefined: no class has GT points")
    recall = cm.true_positives[present] / n[present]
    return float(recall.mean())


def compute_iou_per_class(cm: ConfusionMatrix) -> np.ndarray:
    """IoU per class; NaN where TP + FP + FN == 0."""
    tp = cm.true_positives
    denom = tp + cm.false_positives + cm.false_negatives
    iou = np.full(cm.class_count, np.nan)
    ok = denom > 0
    iou[ok] = tp[ok] / denom[ok]
    return iou


def compute_fmiou(cm: ConfusionMatrix) -> float:
    n = cm.gt_totals
    present = n > 0
    if not present.any():
        raise UndefinedMetricError("f-mIoU undefined: all n_c are zero")
    iou = compute_iou_per_class(cm)
    return float((n[present] * iou[present]).sum() / n[present].sum())


def compute_degradation(baseline: float, condition: float) -> float:
    """Relative change in percent: (condition - baseline) / baseline * 100."""
    if baseline == 0:
        raise UndefinedMetricError("degradation undefined for a zero baseline")
    return (condition - baseline) / baseline * 100.0


@dataclass(frozen=True)
class SegmentationResult:
    macc: float
    fmiou: float
    per_class_iou: tuple  # float or None per class
    class_point_counts: tuple
    condition: ConditionKind
    scene_id: str
    method: str = ""
    confusion: Optional[ConfusionMatrix] = field(default=None, compare=False)
    params: dict = field(default_factory=dict, compare=False)

    def metric(self, name: str) -> float:
        return getattr(self, name)

    def to_dict(self) -> dict:
        doc = {
            "method": self.method,
            "scene_id": self.scene_id,
            "condition": self.condition.value,
            "macc": self.macc,
            "fmiou": self.fmiou,
            "per_class_iou": list(self.per_class_iou),
            "class_point_counts": list(self.class_point_counts),
            "params": dict(self.params),
        }
        if self.confusion is not None:
            doc["confusion"] = self.confusion.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc) -> "SegmentationResult":
        try:
            cm = doc.get("confusion")
            return cls(
                macc=float(doc["macc"]),
                fmiou=float(doc["fmiou"]),
                per_class_iou=tuple(None if v is None else float(v) for v in doc["per_class_iou"]),
                class_point_counts=tuple(int(v) for v in doc["class_point_counts"]),
                condition=ConditionKind.parse(doc["condition"]),
                scene_id=str(doc["scene_id"]),
                method=str(doc.get("method", "")),
                confusion=None if cm is None else ConfusionMatrix(cm["counts"], cm["unmatched"]),
                params=dict(doc.get("params", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed segmentation result: {exc}") from None


def result_from_confusion(cm: ConfusionMatrix, condition, scene_id: str, method: str = "",
                          params=None) -> SegmentationResult:
    iou = compute_iou_per_class(cm)
    return SegmentationResult(
        macc=compute_macc(cm),
        fmiou=compute_fmiou(cm),
        per_class_iou=tuple(None if math.isnan(v) else float(v) for v in iou),
        class_point_counts=tuple(int(v) for v in cm.gt_totals),
        condition=ConditionKind.parse(condition),
        scene_id=scene_id,
        method=method,
        confusion=cm,
        params=dict(params or {}),
    )


def evaluate_clouds(gt: LabeledPointCloud, pred: LabeledPointCloud, num_classes: int,
                    condition, scene_id: str, method: str = "",
                    radius: float = DEFAULT_RADIUS, params=None) -> SegmentationResult:
    """Associate, tally and score one (scene, condition, method) pair.

    ``pred.class_ids`` must already be expressed in the GT vocabulary.
    """
    matched = associate_points(gt, pred, radius)
    keep = gt.class_ids >= 0
    cm = build_confusion(gt.class_ids[keep], matched[keep], num_classes)
    params = {"radius": radius, **(params or {})}
    return result_from_confusion(cm, condition, scene_id, method, params)


def write_result(path, result: SegmentationResult) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def read_result(path) -> SegmentationResult:
    return SegmentationResult.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class Aggregate:
    minimum: float
    maximum: float
    average: float
    per_condition: dict  # ConditionKind -> scene-averaged value


def aggregate_conditions(results) -> dict:
    """Min / max / mean across conditions, keyed by ``(method, metric)``.

    Results for several scenes under one condition are first averaged into a
    single per-condition value.
    """
    results = list(results)
    if not results:
        raise ContractError("aggregate_conditions needs at least one result")
    buckets = defaultdict(list)
    for r in results:
        for metric in METRICS:
            buckets[(r.method, metric, r.condition)].append(r.metric(metric))
    per_key = defaultdict(dict)
    for (method, metric, cond), values in buckets.items():
        per_key[(method, metric)][cond] = fmean(values)
    out = {}
    for key, by_cond in sorted(per_key.items()):
        values = list(by_cond.values())
        out[key] = Aggregate(min(values), max(values), fmean(values), dict(by_cond))
    return out
