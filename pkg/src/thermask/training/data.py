"""Face cropping, in-memory image sets and batch augmentation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from thermask.dataset import (
    Annotation,
    BoundingBox,
    DatasetManifest,
    ImageRecord,
    MaskClass,
    Split,
)
from thermask.training.spec import Augment, TrainSpec

log = logging.getLogger(__name__)

CROP_SIZE = 128
NO_LABEL = -1


@dataclass
class ImageSet:
    """Stacked single-channel images in [0, 1] with optional class labels.

    ``labels`` holds MaskClass indices, ``NO_LABEL`` where unknown.
    """

    manifest: DatasetManifest
    images: np.ndarray  # (N, H, W) float32
    labels: np.ndarray  # (N,) int64
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_ids(self) -> list[str]:
        return [r.image_id for r in self.manifest.records]

    def indices(self, split: Split | None) -> np.ndarray:
        if split is None or not self.manifest.split:
            return np.arange(len(self))
        return np.array([i for i, r in enumerate(self.manifest.records) if self.manifest.split.get(r.image_id) == split], dtype=np.int64)

    def take(self, idx) -> "ImageSet":
        idx = np.asarray(idx, dtype=np.int64)
        records = [self.manifest.records[i] for i in idx]
        keep = {r.image_id for r in records}
        manifest = DatasetManifest(
            records,
            [a for a in self.manifest.annotations if a.image_id in keep],
            {k: v for k, v in self.manifest.split.items() if k in keep},
            self.manifest.split_kind,
        )
        return ImageSet(manifest, self.images[idx], self.labels[idx])

    def split(self, split: Split) -> "ImageSet":
        return self.take(self.indices(split))

    def tensor(self, idx=None) -> torch.Tensor:
        arr = self.images if idx is None else self.images[np.asarray(idx)]
        return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32)).unsqueeze(1)

    def has_labels(self) -> bool:
        return len(self) > 0 and bool(np.all(self.labels >= 0))


def minmax(arr: np.ndarray) -> np.ndarray:
    arr = arr.astype(np.float32)
    lo, hi = float(arr.min()), float(arr.max())
    if hi - lo <= 0:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def resize(arr: np.ndarray, size: int) -> np.ndarray:
    img = Image.fromarray(np.ascontiguousarray(arr, dtype=np.float32))
    return np.asarray(img.resize((size, size), Image.BILINEAR), dtype=np.float32)


def _mask_label(annotations: list[Annotation]) -> int:
    for a in annotations:
        if isinstance(a.class_label, MaskClass):
            return int(a.class_label)
    return NO_LABEL


def crop_faces(
    manifest: DatasetManifest,
    face_boxes: Mapping[str, BoundingBox],
    rasters: Mapping[str, np.ndarray],
    size: int = CROP_SIZE,
) -> ImageSet:
    """Crop each image to its face box, resize to ``size`` x ``size`` and min-max normalise.

    Records without a face box are skipped and counted in ``skipped``. Mask
    annotations are mapped into crop coordinates.
    """
    records, annotations, crops, labels = [], [], [], []
    skipped = 0
    for r in manifest.records:
        box = face_boxes.get(r.image_id)
        if box is None or not box.is_valid():
            skipped += 1
            continue
        raster = np.asarray(rasters[r.image_id])
        h, w = raster.shape[:2]
        b = box.clamp(w, h)
        x0, y0 = int(math.floor(b.x_min)), int(math.floor(b.y_min))
        x1, y1 = max(int(math.ceil(b.x_max)), x0 + 1), max(int(math.ceil(b.y_max)), y0 + 1)
        crop = raster[y0:y1, x0:x1].astype(np.float32)
        crops.append(minmax(resize(minmax(crop), size)))
        sx, sy = size / (x1 - x0), size / (y1 - y0)
        own = manifest.annotations_for(r.image_id)
        labels.append(_mask_label(own))
        for a in own:
            m = a.box
            moved = BoundingBox((m.x_min - x0) * sx, (m.y_min - y0) * sy, (m.x_max - x0) * sx, (m.y_max - y0) * sy)
            annotations.append(Annotation(a.image_id, a.class_label, moved.clamp(size, size)))
        records.append(ImageRecord(r.image_id, r.path, size, size, r.bit_depth, r.camera, r.subject_id))
    if skipped:
        log.warning("crop_faces: skipped %d record(s) without a face box", skipped)
    split = {r.image_id: manifest.split[r.image_id] for r in records if r.image_id in manifest.split}
    cropped = DatasetManifest(records, annotations, split, manifest.split_kind)
    images = np.stack(crops) if crops else np.zeros((0, size, size), dtype=np.float32)
    return ImageSet(cropped, images, np.asarray(labels, dtype=np.int64), skipped)


def full_frames(manifest: DatasetManifest, rasters: Mapping[str, np.ndarray], size: int = CROP_SIZE) -> ImageSet:
    """Whole images resized and min-max normalised (no face cropping)."""
    images = [minmax(resize(minmax(np.asarray(rasters[r.image_id])), size)) for r in manifest.records]
    labels = [_mask_label(manifest.annotations_for(r.image_id)) for r in manifest.records]
    records = [ImageRecord(r.image_id, r.path, size, size, r.bit_depth, r.camera, r.subject_id) for r in manifest.records]
    return ImageSet(
        DatasetManifest(records, (), manifest.split, manifest.split_kind),
        np.stack(images).astype(np.float32),
        np.asarray(labels, dtype=np.int64),
    )


def augment_batch(x: torch.Tensor, spec: TrainSpec, generator: torch.Generator) -> torch.Tensor:
    """Random flips / crops / rotations of an (N, C, H, W) batch, drawn from ``generator``."""
    augs = spec.augmentation or frozenset()
    if not augs:
        return x
    n, _, h, w = x.shape
    if Augment.H_FLIP in augs:
        flip = torch.rand(n, generator=generator) < 0.5
        x = torch.where(flip[:, None, None, None], x.flip(-1), x)
    if Augment.RANDOM_CROP in augs:
        lo, hi = spec.crop_scale
        scales = lo + (hi - lo) * torch.rand(n, generator=generator)
        offsets = torch.rand(n, 2, generator=generator)
        out = []
        for i in range(n):
            ch, cw = max(1, int(round(h * float(scales[i])))), max(1, int(round(w * float(scales[i]))))
            top = int(float(offsets[i, 0]) * (h - ch))
            left = int(float(offsets[i, 1]) * (w - cw))
            patch = x[i : i + 1, :, top : top + ch, left : left + cw]
            out.append(F.interpolate(patch, size=(h, w), mode="bilinear", align_corners=False))
        x = torch.cat(out)
    if Augment.ROTATION in augs:
        angles = (torch.rand(n, generator=generator) * 2 - 1) * math.radians(spec.rotation_degrees)
        cos, sin = torch.cos(angles), torch.sin(angles)
        theta = torch.zeros(n, 2, 3)
        theta[:, 0, 0], theta[:, 0, 1] = cos, -sin
        theta[:, 1, 0], theta[:, 1, 1] = sin, cos
        grid = F.affine_grid(theta, list(x.shape), align_corners=False)
        x = F.grid_sample(x, grid, mode="bilinear", padding_mode="zeros", align_corners=False)
    return x
