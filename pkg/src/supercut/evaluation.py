"""Class-agnostic instance-segmentation AP.

Protocol: ground-truth instances with reserved ids (floor/wall by
default) are dropped, and unannotated points never count.  Predictions
are first trimmed to non-excluded points, then dropped entirely when
nothing remains or when at least half of their original points lay in
excluded regions.  Remaining predictions are ranked by confidence
(ties by instance id) and greedily matched to the unmatched GT instance
of highest IoU at each threshold; AP integrates the precision envelope
over recall (all-point interpolation).  mAP averages IoU thresholds
0.50:0.05:0.95; AP50 and AP25 are the single-threshold values.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import (
    FLOOR_ID,
    NONE_ID,
    WALL_ID,
    InstanceSegmentation,
    SceneGeometry,
    ValidationError,
)

MAP_THRESHOLDS = [0.5 + 0.05 * i for i in range(10)]
DEFAULT_EXCLUSIONS = frozenset({FLOOR_ID, WALL_ID})

EXCLUSION_RULE = (
    "predictions are trimmed to non-excluded points, then dropped when empty "
    "or when >= 50% of their points lie in excluded regions"
)


@dataclass
class ApReport:
    map: float
    ap50: float
    ap25: float
    per_threshold: list[tuple[float, float]]
    warning: str | None = None
    metadata: dict = field(default_factory=lambda: {"exclusion_rule": EXCLUSION_RULE})

    def to_dict(self) -> dict:
        return {
            "map": self.map,
            "ap50": self.ap50,
            "ap25": self.ap25,
            "per_threshold": [[t, ap] for t, ap in self.per_threshold],
            "warning": self.warning,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ApReport":
        return cls(
            map=float(d["map"]),
            ap50=float(d["ap50"]),
            ap25=float(d["ap25"]),
            per_threshold=[(float(t), float(ap)) for t, ap in d["per_threshold"]],
            warning=d.get("warning"),
            metadata=d.get("metadata", {}),
        )


def save_report(report: ApReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=1, sort_keys=True)


def load_report(path: str | Path) -> ApReport:
    with open(path, "r", encoding="utf-8") as f:
        return ApReport.from_dict(json.load(f))


def mask_iou(pred: np.ndarray, gt: np.ndarray, excluded: np.ndarray | None = None) -> float:
    """IoU of two point-index sets after removing excluded points; 0 if both empty."""
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if excluded is not None:
        pred = pred[~excluded[pred]]
        gt = gt[~excluded[gt]]
    if pred.size == 0 and gt.size == 0:
        return 0.0
    inter = np.intersect1d(pred, gt, assume_unique=True).size
    union = pred.size + gt.size - inter
    return inter / union if union else 0.0


def _average_precision(recalls: np.ndarray, precisions: np.ndarray) -> float:
    """All-point interpolation: integrate the precision envelope over recall."""
    if recalls.size == 0:
        return 0.0
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recalls, envelope):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


def _ap_at_threshold(
    preds: list[tuple[int, float, np.ndarray]],
    gt_masks: list[np.ndarray],
    num_points: int,
    threshold: float,
) -> float:
    """Greedy confidence-ordered matching, then AP of the resulting PR curve."""
    num_gt = len(gt_masks)
    if num_gt == 0:
        return 0.0
    gt_bool = np.zeros((num_gt, num_points), dtype=bool)
    gt_sizes = np.zeros(num_gt, dtype=np.int64)
    for i, g in enumerate(gt_masks):
        gt_bool[i, g] = True
        gt_sizes[i] = g.size
    matched = np.zeros(num_gt, dtype=bool)
    tps = []
    for _inst_id, _conf, points in preds:
        inter = gt_bool[:, points].sum(axis=1)
        union = gt_sizes + points.size - inter
        with np.errstate(invalid="ignore", divide="ignore"):
            ious = np.where(union > 0, inter / union, 0.0)
        ious[matched] = -1.0
        best = int(np.argmax(ious))  # ties: lowest GT index
        if ious[best] >= threshold:
            matched[best] = True
            tps.append(1)
        else:
            tps.append(0)
    tp_cum = np.cumsum(tps)
    ranks = np.arange(1, len(tps) + 1)
    recalls = tp_cum / num_gt
    precisions = tp_cum / ranks
    return _average_precision(recalls, precisions)


def evaluate(
    pred: InstanceSegmentation,
    scene: SceneGeometry,
    exclusions: frozenset[int] | set[int] = DEFAULT_EXCLUSIONS,
) -> ApReport:
    """Score a predicted segmentation against scene.gt_instance."""
    if scene.gt_instance is None:
        raise ValidationError("scene has no gt_instance labels")
    gt = scene.gt_instance
    excluded = np.isin(gt, sorted(set(exclusions) | {NONE_ID}))

    gt_ids = sorted(set(np.unique(gt).tolist()) - set(exclusions) - {NONE_ID})
    gt_masks = [np.nonzero(gt == gid)[0] for gid in gt_ids]

    preds: list[tuple[int, float, np.ndarray]] = []
    for inst in pred.instances:
        points = pred.points_of(inst.instance_id)
        if points.size == 0:
            continue
        inside = excluded[points]
        trimmed = points[~inside]
        if trimmed.size < 1 or inside.mean() >= 0.5:
            continue
        preds.append((inst.instance_id, inst.confidence, trimmed))
    preds.sort(key=lambda item: (-item[1], item[0]))

    warning = None
    if not gt_masks:
        warning = "no ground-truth instances remain after exclusions"
        warnings.warn(warning, stacklevel=2)
        per = [(0.25, 0.0)] + [(t, 0.0) for t in MAP_THRESHOLDS]
        return ApReport(map=0.0, ap50=0.0, ap25=0.0, per_threshold=per, warning=warning)

    num_points = scene.num_points
    ap_by_t = {
        t: _ap_at_threshold(preds, gt_masks, num_points, t) for t in [0.25] + MAP_THRESHOLDS
    }
    per = sorted(ap_by_t.items())
    return ApReport(
        map=float(np.mean([ap_by_t[t] for t in MAP_THRESHOLDS])),
        ap50=ap_by_t[0.5],
        ap25=ap_by_t[0.25],
        per_threshold=per,
        warning=warning,
    )
