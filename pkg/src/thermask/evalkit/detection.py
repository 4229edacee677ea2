"""Detection matching, precision-recall curves and AP@IoU."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from thermask.dataset import MASK, Annotation, BoundingBox, Label
from thermask.evalkit.boxes import iou


@dataclass(frozen=True)
class Detection:
    image_id: str
    box: BoundingBox
    confidence: float
    class_label: Label = MASK

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class MatchResult:
    """TP flags in the input order of the detections, and per-gt matched flags."""

    tp: np.ndarray
    gt_matched: np.ndarray
    ious: np.ndarray


def confidence_order(confidences) -> np.ndarray:
    """Indices by descending confidence; ties keep input order."""
    conf = np.asarray(confidences, dtype=np.float64)
    return np.argsort(-conf, kind="stable")


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[Annotation],
    iou_threshold: float = 0.5,
    class_aware: bool = False,
) -> MatchResult:
    """Greedy confidence-ordered matching, each ground truth used at most once.

    A detection is a true positive when the unmatched ground truth in the same
    image with which it has the highest IoU reaches ``iou_threshold``.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1), got {iou_threshold}")
    gts_by_image = defaultdict(list)
    for j, g in enumerate(gts):
        gts_by_image[g.image_id].append(j)

    tp = np.zeros(len(dets), dtype=bool)
    best_ious = np.zeros(len(dets), dtype=np.float64)
    matched = np.zeros(len(gts), dtype=bool)
    for i in confidence_order([d.confidence for d in dets]):
        det = dets[i]
        best_j, best = -1, 0.0
        for j in gts_by_image.get(det.image_id, ()):
            if matched[j]:
                continue
            if class_aware and gts[j].class_label != det.class_label:
                continue
            overlap = iou(det.box, gts[j].box)
            if overlap > best:
                best_j, best = j, overlap
        best_ious[i] = best
        if best_j >= 0 and best >= iou_threshold:
            tp[i] = True
            matched[best_j] = True
    return MatchResult(tp, matched, best_ious)


def precision_recall_curve(tp_flags, confidences, n_gt: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cumulative (precision, recall, confidence) after each ranked detection."""
    if n_gt <= 0:
        raise ValueError("n_gt must be positive")
    tp = np.asarray(tp_flags, dtype=bool)
    conf = np.asarray(confidences, dtype=np.float64)
    if tp.shape != conf.shape:
        raise ValueError("flags and confidences must have equal length")
    order = confidence_order(conf)
    tp_sorted = tp[order]
    ctp = np.cumsum(tp_sorted)
    cfp = np.cumsum(~tp_sorted)
    recall = ctp / n_gt
    precision = ctp / np.maximum(ctp + cfp, 1)
    return precision, recall, conf[order]


def average_precision(tp_flags, confidences, n_gt: int) -> float:
    """Area under the all-points interpolated precision-recall curve."""
    precision, recall, _ = precision_recall_curve(tp_flags, confidences, n_gt)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    # precision envelope, non-increasing in recall
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    steps = np.where(mrec[1:] != mrec[:-1])[0]
    # fsum: correctly rounded, so the result does not depend on summation order
    return math.fsum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1])


@dataclass
class DetectionReport:
    """Single-run detection metrics.

    ``precision``/``recall`` are taken at ``conf_threshold``; ``map50`` is AP
    at ``iou_threshold`` over the full curve (one class, so mAP50 == AP50).
    """

    precision: float
    recall: float
    map50: float
    iou_threshold: float = 0.5
    conf_threshold: float = 0.5
    n_gt: int = 0
    n_det: int = 0
    curve_precision: list[float] = field(default_factory=list)
    curve_recall: list[float] = field(default_factory=list)
    curve_confidence: list[float] = field(default_factory=list)

    kind = "detection"

    def metrics(self) -> dict[str, float]:
        return {"precision": self.precision, "recall": self.recall, "map50": self.map50}

    def to_dict(self) -> dict:
        return {
            "schema": "v1",
            "kind": self.kind,
            **self.metrics(),
            "iou_threshold": self.iou_threshold,
            "conf_threshold": self.conf_threshold,
            "n_gt": self.n_gt,
            "n_det": self.n_det,
            "curve": {
                "precision": self.curve_precision,
                "recall": self.curve_recall,
                "confidence": self.curve_confidence,
            },
        }


def evaluate_detections(
    dets: Sequence[Detection],
    gts: Sequence[Annotation],
    iou_threshold: float = 0.5,
    conf_threshold: float = 0.5,
) -> DetectionReport:
    if not gts:
        raise ValueError("cannot evaluate detections without ground truth")
    match = match_detections(dets, gts, iou_threshold)
    conf = np.array([d.confidence for d in dets], dtype=np.float64)
    ap = average_precision(match.tp, conf, len(gts))
    precision, recall, ranked_conf = precision_recall_curve(match.tp, conf, len(gts))

    kept = conf >= conf_threshold
    n_tp = int(np.sum(match.tp & kept))
    n_kept = int(np.sum(kept))
    return DetectionReport(
        precision=n_tp / n_kept if n_kept else 0.0,
        recall=n_tp / len(gts),
        map50=ap,
        iou_threshold=iou_threshold,
        conf_threshold=conf_threshold,
        n_gt=len(gts),
        n_det=len(dets),
        curve_precision=[float(x) for x in precision],
        curve_recall=[float(x) for x in recall],
        curve_confidence=[float(x) for x in ranked_conf],
    )
