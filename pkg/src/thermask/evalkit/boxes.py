"""Box overlap and box-regression losses."""

from __future__ import annotations

import math

import numpy as np

from thermask.dataset import BoundingBox


def intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a: BoundingBox, b: BoundingBox) -> float:
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def iou_matrix(boxes_a, boxes_b) -> np.ndarray:
    """Pairwise IoU for (N, 4) and (M, 4) corner arrays."""
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(inter > 0, inter / union, 0.0)
    return out


def ciou_loss(pred: BoundingBox, gt: BoundingBox) -> float:
    """Complete-IoU loss: ``1 - IoU + rho^2 / c^2 + alpha * v``.

    ``rho`` is the distance between box centers, ``c`` the diagonal of the
    smallest enclosing box and ``v`` the arctan aspect-ratio discrepancy.
    ``alpha`` is taken as 0 when ``v`` is 0 so identical boxes score exactly 0.
    """
    overlap = iou(pred, gt)
    (pcx, pcy), (gcx, gcy) = pred.center, gt.center
    rho2 = (pcx - gcx) ** 2 + (pcy - gcy) ** 2
    cw = max(pred.x_max, gt.x_max) - min(pred.x_min, gt.x_min)
    ch = max(pred.y_max, gt.y_max) - min(pred.y_min, gt.y_min)
    c2 = cw * cw + ch * ch
    v = (4.0 / math.pi**2) * (math.atan(gt.width / gt.height) - math.atan(pred.width / pred.height)) ** 2
    alpha = 0.0 if v == 0.0 else v / ((1.0 - overlap) + v)
    return (1.0 - overlap) + rho2 / c2 + alpha * v


def smooth_l1(pred, target, beta: float = 1.0) -> float:
    """Summed Smooth-L1 (Huber-style) loss between two equal-length vectors."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    p = np.atleast_1d(np.asarray(pred, dtype=np.float64))
    t = np.atleast_1d(np.asarray(target, dtype=np.float64))
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    d = np.abs(p - t)
    per_elem = np.where(d < beta, 0.5 * d * d / beta, d - 0.5 * beta)
    return float(per_elem.sum())
