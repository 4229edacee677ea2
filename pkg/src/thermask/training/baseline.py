"""Intensity-segmentation mask detector used as the reference DetectorAdapter.

Thermal masks sit between background and skin temperature. The detector
finds the warmest foreground blob (the head), keeps its moderately cool
pixels below the eye line, cleans them morphologically and boxes each
remaining region. It has a handful of tunable thresholds, split into a
"backbone" (head segmentation) and a "head" (mask region extraction), so the
transfer-learning scenarios have something to initialise, freeze and fit.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Sequence

import numpy as np
from scipy import ndimage

from thermask.dataset import MASK, Annotation, BoundingBox
from thermask.evalkit.detection import Detection, evaluate_detections

BACKBONE_PARAMS = ("fg_thresh", "warm_thresh")
HEAD_PARAMS = ("open_radius", "min_area_frac", "eye_margin", "contrast_gain")

# Search grids used by BaselineAdapter.fit and by random initialisation.
PARAM_GRID = {
    "fg_thresh": (0.06, 0.08, 0.1, 0.12, 0.15),
    "warm_thresh": (0.55, 0.6, 0.65, 0.7, 0.75),
    "open_radius": (1, 2, 3),
    "min_area_frac": (0.02, 0.05, 0.08, 0.12),
    "eye_margin": (0.0, 0.05, 0.1),
    "contrast_gain": (1.5, 2.0, 2.5),
}


@dataclass(frozen=True)
class BaselineParams:
    fg_thresh: float = 0.1
    warm_thresh: float = 0.65
    open_radius: int = 2
    min_area_frac: float = 0.05
    eye_margin: float = 0.05
    contrast_gain: float = 2.0

    @classmethod
    def random(cls, rng: np.random.Generator) -> "BaselineParams":
        return cls(**{k: grid[int(rng.integers(len(grid)))] for k, grid in PARAM_GRID.items()})

    def to_dict(self) -> dict:
        return asdict(self)


def _normalize(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    lo, hi = np.percentile(img, [1.0, 99.5])
    if hi - lo <= 1e-12:
        return np.zeros_like(img)
    return np.clip((img - lo) / (hi - lo), 0.0, 1.0)


def _disk(radius: int) -> np.ndarray:
    yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    return xx * xx + yy * yy <= radius * radius


def baseline_detect(image: np.ndarray, image_id: str = "", params: BaselineParams | None = None) -> list[Detection]:
    """Detect cool mask regions on the warmest blob of a grayscale thermal image."""
    p = params or BaselineParams()
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale image, got shape {img.shape}")
    f = _normalize(img)
    if not f.any():
        return []

    warm = f > p.warm_thresh
    labels, n = ndimage.label(f > p.fg_thresh)
    if n == 0 or not warm.any():
        return []
    warm_counts = np.bincount(labels[warm], minlength=n + 1)
    warm_counts[0] = 0
    blob_id = int(np.argmax(warm_counts))
    if warm_counts[blob_id] == 0:
        return []
    blob = ndimage.binary_fill_holes(labels == blob_id)
    blob_warm = blob & warm

    rows = np.flatnonzero(blob.any(axis=1))
    blob_h = rows[-1] - rows[0] + 1
    # eye line: row with the hottest smoothed pixels inside the blob
    smooth = ndimage.uniform_filter(np.where(blob, f, 0.0), size=3)
    eye_row = int(np.unravel_index(np.argmax(smooth), smooth.shape)[0])
    below = np.zeros_like(blob)
    below[min(eye_row + int(p.eye_margin * blob_h), f.shape[0]) :, :] = True

    candidates = blob & ~warm & below
    if p.open_radius > 0:
        candidates = ndimage.binary_opening(candidates, structure=_disk(int(p.open_radius)))
    cand_labels, n_cand = ndimage.label(candidates)
    if n_cand == 0:
        return []

    warm_level = float(f[blob_warm].mean()) if blob_warm.any() else 1.0
    bg = ~blob
    bg_level = float(f[bg].mean()) if bg.any() else 0.0
    span = max(warm_level - bg_level, 1e-6)
    face_area = float(blob.sum())

    detections = []
    for k, sl in enumerate(ndimage.find_objects(cand_labels), start=1):
        region = cand_labels[sl] == k
        area = float(region.sum())
        if area < p.min_area_frac * face_area:
            continue
        contrast = (warm_level - float(f[sl][region].mean())) / span
        size_term = min(1.0, area / (0.1 * face_area))
        confidence = float(np.clip(p.contrast_gain * contrast, 0.0, 1.0) * size_term)
        box = BoundingBox(float(sl[1].start), float(sl[0].start), float(sl[1].stop), float(sl[0].stop))
        detections.append(Detection(image_id, box, confidence, MASK))
    return detections


class BaselineAdapter:
    """DetectorAdapter around :func:`baseline_detect` with fit-by-search.

    Weight sources: ``"generic"`` (hand-set defaults) and any name registered
    in ``pretrained`` (e.g. ``"masked_faces"`` params fitted on a synthetic
    masked-face set). ``load_weights(None)`` draws random parameters.
    """

    name = "baseline"

    def __init__(self, pretrained: dict[str, BaselineParams] | None = None, fit_images: int = 40, sweeps: int = 2):
        self.pretrained = dict(pretrained or {})
        self.fit_images = fit_images
        self.sweeps = sweeps
        self.params = BaselineParams()
        self.frozen = False
        self._rng = np.random.default_rng(0)

    @property
    def weight_sources(self) -> set[str]:
        return {"generic", *self.pretrained}

    def reseed(self, seed: int) -> None:
        self._rng = np.random.default_rng(seed)

    def load_weights(self, source: str | None) -> None:
        if source is None:
            self.params = BaselineParams.random(self._rng)
        elif source == "generic":
            self.params = BaselineParams()
        elif source in self.pretrained:
            self.params = self.pretrained[source]
        else:
            raise KeyError(f"unknown weight source {source!r}; available: {sorted(self.weight_sources)}")

    def freeze_backbone(self, flag: bool) -> None:
        self.frozen = bool(flag)

    def backbone_state(self) -> dict:
        return {k: getattr(self.params, k) for k in BACKBONE_PARAMS}

    def head_state(self) -> dict:
        return {k: getattr(self.params, k) for k in HEAD_PARAMS}

    def predict(self, image: np.ndarray, image_id: str = "") -> list[Detection]:
        return baseline_detect(image, image_id, self.params)

    def _score(self, params: BaselineParams, images, gts) -> tuple[float, float]:
        dets = [d for image_id, img in images for d in baseline_detect(img, image_id, params)]
        report = evaluate_detections(dets, gts)
        return report.map50, report.precision

    def fit(self, images: Sequence[tuple[str, np.ndarray]], annotations: Sequence[Annotation]) -> BaselineParams:
        """Coordinate search over the parameter grid, maximising (AP50, precision).

        Backbone parameters are skipped while frozen. Uses a seeded subsample
        of at most ``fit_images`` training images.
        """
        images = list(images)
        if len(images) > self.fit_images:
            keep = np.sort(self._rng.choice(len(images), self.fit_images, replace=False))
            images = [images[i] for i in keep]
        ids = {image_id for image_id, _ in images}
        gts = [a for a in annotations if a.image_id in ids]
        if not gts:
            raise ValueError("no annotations for the fitting images")

        tunable = [f.name for f in fields(BaselineParams) if not (self.frozen and f.name in BACKBONE_PARAMS)]
        best = self.params
        best_score = self._score(best, images, gts)
        for _ in range(self.sweeps):
            improved = False
            for name in tunable:
                for value in PARAM_GRID[name]:
                    if value == getattr(best, name):
                        continue
                    trial = replace(best, **{name: value})
                    score = self._score(trial, images, gts)
                    if score > best_score:
                        best, best_score, improved = trial, score, True
            if not improved:
                break
        self.params = best
        return best
