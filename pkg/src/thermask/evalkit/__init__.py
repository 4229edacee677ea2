from thermask.evalkit.aggregate import AggregateReport, aggregate_runs, mean_std
from thermask.evalkit.boxes import ciou_loss, intersection_area, iou, iou_matrix, smooth_l1
from thermask.evalkit.classification import ClassificationReport, classification_report, f1_score
from thermask.evalkit.detection import (
    Detection,
    DetectionReport,
    MatchResult,
    average_precision,
    evaluate_detections,
    match_detections,
    precision_recall_curve,
)

__all__ = [
    "AggregateReport",
    "ClassificationReport",
    "Detection",
    "DetectionReport",
    "MatchResult",
    "aggregate_runs",
    "average_precision",
    "ciou_loss",
    "classification_report",
    "evaluate_detections",
    "f1_score",
    "intersection_area",
    "iou",
    "iou_matrix",
    "match_detections",
    "mean_std",
    "precision_recall_curve",
    "smooth_l1",
]
