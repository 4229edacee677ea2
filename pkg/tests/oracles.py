"""Independent reference computations used by the tests."""

import math

import numpy as np
import torch


def raster_iou(a, b, grid: int = 1000) -> float:
    """IoU of two integer-corner boxes by counting covered cells of a grid x grid canvas."""
    canvas_a = np.zeros((grid, grid), dtype=bool)
    canvas_b = np.zeros((grid, grid), dtype=bool)
    canvas_a[a[1] : a[3], a[0] : a[2]] = True
    canvas_b[b[1] : b[3], b[0] : b[2]] = True
    union = np.count_nonzero(canvas_a | canvas_b)
    return np.count_nonzero(canvas_a & canvas_b) / union if union else 0.0


def threshold_sweep_ap(flags, confidences, n_gt: int) -> float:
    """AP from precision/recall evaluated at every distinct confidence threshold.

    For each threshold t (highest first) the detections with confidence >= t
    are counted; the precision envelope at recall r is the best precision at
    any threshold reaching recall >= r.
    """
    points = []
    for t in sorted(set(confidences), reverse=True):
        kept = [f for f, c in zip(flags, confidences) if c >= t]
        tp = sum(1 for f in kept if f)
        points.append((tp / n_gt, tp / len(kept)))
    terms = []
    previous_recall = 0.0
    for k, (recall, _) in enumerate(points):
        if recall == previous_recall:
            continue
        best = max(p for _, p in points[k:])
        terms.append((recall - previous_recall) * best)
        previous_recall = recall
    return math.fsum(terms)


def finite_difference_check(model, x, eps=1e-6):
    """Max relative error between autograd and central differences over every parameter entry."""
    loss_fn = lambda: torch.nn.functional.binary_cross_entropy(model(x), x)  # noqa: E731
    model.zero_grad()
    loss_fn().backward()
    worst = {}
    for name, p in model.named_parameters():
        analytic = p.grad.detach().clone().flatten()
        numeric = torch.empty_like(analytic)
        flat = p.data.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
            numeric[i] = (up - down) / (2 * eps)
        denom = torch.clamp(analytic.abs() + numeric.abs(), min=1e-7)
        worst[name] = float(((analytic - numeric).abs() / denom).max())
    return worst
