"""Data model, YOLO label I/O, manifest JSON and dataset splitting."""

from __future__ import annotations

import enum
import json
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Union

import numpy as np
from PIL import Image

SCHEMA_VERSION = "v1"
IMAGE_SUFFIXES = (".png", ".pgm", ".tif", ".tiff", ".jpg", ".jpeg", ".bmp")
ALLOWED_BIT_DEPTHS = (8, 14, 16)


class MaskClass(enum.IntEnum):
    FFP2 = 0
    SURGERY = 1
    CLOTH = 2


# Type-agnostic detection class; label files use index 3 for it.
MASK = "MASK"
MASK_INDEX = 3

Label = Union[MaskClass, str]


class Split(str, enum.Enum):
    TRAIN = "TRAIN"
    TEST = "TEST"


class LabelParseError(ValueError):
    """A label file line could not be parsed."""

    def __init__(self, path, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = Path(path)
        self.line_no = line_no


class SplitError(ValueError):
    pass


def label_from_index(index: int) -> Label:
    if index == MASK_INDEX:
        return MASK
    return MaskClass(index)


def label_to_index(label: Label) -> int:
    if label == MASK:
        return MASK_INDEX
    return int(MaskClass(label))


def label_name(label: Label) -> str:
    return MASK if label == MASK else MaskClass(label).name


def label_from_name(name: str) -> Label:
    return MASK if name == MASK else MaskClass[name]


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in continuous pixel corners, origin top-left.

    Degenerate boxes can be constructed so that :func:`validate` is able to
    report them; use :meth:`is_valid` before doing geometry on untrusted data.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return max(self.width, 0.0) * max(self.height, 0.0)

    @property
    def center(self) -> tuple[float, float]:
        return (self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0

    def is_valid(self) -> bool:
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        return all(math.isfinite(c) for c in coords) and self.x_min < self.x_max and self.y_min < self.y_max

    def clamp(self, width: float, height: float) -> "BoundingBox":
        return BoundingBox(
            min(max(self.x_min, 0.0), width),
            min(max(self.y_min, 0.0), height),
            min(max(self.x_max, 0.0), width),
            min(max(self.y_max, 0.0), height),
        )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @classmethod
    def from_normalized_center(cls, cx, cy, w, h, img_w, img_h) -> "BoundingBox":
        return cls(
            (cx - w / 2.0) * img_w,
            (cy - h / 2.0) * img_h,
            (cx + w / 2.0) * img_w,
            (cy + h / 2.0) * img_h,
        )

    def to_normalized_center(self, img_w, img_h) -> tuple[float, float, float, float]:
        cx, cy = self.center
        return cx / img_w, cy / img_h, self.width / img_w, self.height / img_h


@dataclass(frozen=True)
class Annotation:
    image_id: str
    class_label: Label
    box: BoundingBox


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    path: str
    width: int
    height: int
    bit_depth: int = 8
    camera: str = "unknown"
    subject_id: str | None = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"{self.image_id}: image size must be positive, got {self.width}x{self.height}")
        if self.bit_depth not in ALLOWED_BIT_DEPTHS:
            raise ValueError(f"{self.image_id}: bit depth {self.bit_depth} not in {ALLOWED_BIT_DEPTHS}")


@dataclass(frozen=True)
class DatasetManifest:
    """Image records, their annotations and an optional TRAIN/TEST assignment.

    ``split`` is empty until one of the split functions has been applied.
    ``split_kind`` records which one ("ratio" or "subject") so that
    :func:`validate` knows whether subject leakage is a violation.
    """

    records: tuple[ImageRecord, ...]
    annotations: tuple[Annotation, ...] = ()
    split: Mapping[str, Split] = field(default_factory=dict)
    split_kind: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "annotations", tuple(self.annotations))
        object.__setattr__(self, "split", dict(self.split))

    def record(self, image_id: str) -> ImageRecord:
        return self._index()[image_id]

    def _index(self) -> dict[str, ImageRecord]:
        return {r.image_id: r for r in self.records}

    def annotations_for(self, image_id: str) -> list[Annotation]:
        return [a for a in self.annotations if a.image_id == image_id]

    def image_ids(self, split: Split | None = None) -> list[str]:
        if split is None:
            return [r.image_id for r in self.records]
        return [r.image_id for r in self.records if self.split.get(r.image_id) == split]

    def subset(self, split: Split) -> "DatasetManifest":
        keep = set(self.image_ids(split))
        return DatasetManifest(
            records=[r for r in self.records if r.image_id in keep],
            annotations=[a for a in self.annotations if a.image_id in keep],
            split={k: v for k, v in self.split.items() if k in keep},
            split_kind=self.split_kind,
        )

    # JSON ---------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "split_kind": self.split_kind,
            "records": [
                {
                    "image_id": r.image_id,
                    "path": r.path,
                    "width": r.width,
                    "height": r.height,
                    "bit_depth": r.bit_depth,
                    "camera": r.camera,
                    "subject_id": r.subject_id,
                }
                for r in self.records
            ],
            "annotations": [
                {
                    "image_id": a.image_id,
                    "class": label_name(a.class_label),
                    "box": list(a.box.as_tuple()),
                }
                for a in self.annotations
            ],
            "split": [{"image_id": k, "subset": v.value} for k, v in sorted(self.split.items())],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetManifest":
        if data.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported manifest schema {data.get('schema')!r}, expected {SCHEMA_VERSION!r}")
        records = [ImageRecord(**r) for r in data["records"]]
        annotations = [
            Annotation(a["image_id"], label_from_name(a["class"]), BoundingBox(*a["box"]))
            for a in data["annotations"]
        ]
        split = {s["image_id"]: Split(s["subset"]) for s in data.get("split", [])}
        return cls(records, annotations, split, data.get("split_kind"))


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(manifest.to_dict(), indent=1, sort_keys=True) + "\n")
    os.replace(tmp, path)


def load_manifest(path) -> DatasetManifest:
    return DatasetManifest.from_dict(json.loads(Path(path).read_text()))


# YOLO label files -------------------------------------------------------

def _image_info(path: Path) -> tuple[int, int, int]:
    with Image.open(path) as im:
        width, height = im.size
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            depth = 16
        else:
            depth = 8
    return width, height, depth


def parse_label_file(path, image_id: str, width: int, height: int) -> list[Annotation]:
    """Parse ``class cx cy w h`` lines (normalized) into pixel-corner annotations."""
    annotations = []
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        parts = stripped.split()
        if len(parts) != 5:
            raise LabelParseError(path, line_no, f"expected 5 fields, got {len(parts)}")
        try:
            index = int(parts[0])
            cx, cy, w, h = (float(p) for p in parts[1:])
        except ValueError as exc:
            raise LabelParseError(path, line_no, str(exc)) from None
        for name, value in zip(("cx", "cy", "w", "h"), (cx, cy, w, h)):
            if not (0.0 <= value <= 1.0):
                raise LabelParseError(path, line_no, f"{name}={value} outside [0, 1]")
        if w == 0.0 or h == 0.0:
            raise LabelParseError(path, line_no, "zero-size box")
        try:
            label = label_from_index(index)
        except ValueError:
            raise LabelParseError(path, line_no, f"unknown class index {index}") from None
        box = BoundingBox.from_normalized_center(cx, cy, w, h, width, height)
        annotations.append(Annotation(image_id, label, box))
    return annotations


def load_labels(label_dir, image_dir, camera: str = "unknown") -> DatasetManifest:
    """Build a manifest from an image directory and its sibling YOLO label files.

    Images without a label file get a record and no annotations.
    """
    label_dir, image_dir = Path(label_dir), Path(image_dir)
    records, annotations = [], []
    for image_path in sorted(p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES):
        image_id = image_path.stem
        width, height, depth = _image_info(image_path)
        records.append(ImageRecord(image_id, str(image_path), width, height, depth, camera))
        label_path = label_dir / f"{image_id}.txt"
        if label_path.exists():
            annotations.extend(parse_label_file(label_path, image_id, width, height))
    return DatasetManifest(records, annotations)


def format_label_line(annotation: Annotation, width: int, height: int, precision: int = 6) -> str:
    values = annotation.box.clamp(width, height).to_normalized_center(width, height)
    coords = " ".join(f"{v:.{precision}f}" for v in values)
    return f"{label_to_index(annotation.class_label)} {coords}"


def save_labels(manifest: DatasetManifest, label_dir, precision: int = 6) -> None:
    label_dir = Path(label_dir)
    label_dir.mkdir(parents=True, exist_ok=True)
    by_image = defaultdict(list)
    for a in manifest.annotations:
        by_image[a.image_id].append(a)
    for r in manifest.records:
        lines = [format_label_line(a, r.width, r.height, precision) for a in by_image.get(r.image_id, [])]
        (label_dir / f"{r.image_id}.txt").write_text("".join(line + "\n" for line in lines))


# Splitting ----------------------------------------------------------------

def split_by_ratio(
    manifest: DatasetManifest,
    train_fraction: float | Mapping[str, float],
    seed: int,
) -> DatasetManifest:
    """Per-camera stratified TRAIN/TEST split.

    ``train_fraction`` is either one ratio for every camera or a mapping
    camera -> ratio (Table-1-style uneven groups). Each camera group gets
    ``round(fraction * n)`` training images, clipped so both subsets are
    nonempty.
    """
    groups: dict[str, list[str]] = defaultdict(list)
    for r in manifest.records:
        groups[r.camera].append(r.image_id)

    split: dict[str, Split] = {}
    rng = np.random.default_rng(seed)
    for camera in sorted(groups):
        fraction = train_fraction[camera] if isinstance(train_fraction, Mapping) else train_fraction
        if not 0.0 < fraction < 1.0:
            raise SplitError(f"train_fraction for camera {camera!r} must be in (0, 1), got {fraction}")
        ids = sorted(groups[camera])
        n = len(ids)
        if n < 2:
            raise SplitError(f"camera {camera!r} has {n} image(s); need at least 2 to stratify")
        n_train = min(max(int(math.floor(fraction * n + 0.5)), 1), n - 1)
        order = rng.permutation(n)
        for rank, idx in enumerate(order):
            split[ids[idx]] = Split.TRAIN if rank < n_train else Split.TEST
    return replace(manifest, split=split, split_kind="ratio")


def split_by_subject(manifest: DatasetManifest, test_subjects: Iterable[str]) -> DatasetManifest:
    test_subjects = set(test_subjects)
    missing = [r.image_id for r in manifest.records if r.subject_id is None]
    if missing:
        raise SplitError(f"{len(missing)} record(s) lack subject_id, e.g. {missing[0]!r}")
    subjects = {r.subject_id for r in manifest.records}
    unknown = test_subjects - subjects
    if unknown:
        raise SplitError(f"unknown subject id(s): {sorted(unknown)}")
    if not test_subjects:
        raise SplitError("test_subjects is empty; TEST split would be empty")
    if test_subjects == subjects:
        raise SplitError("all subjects selected for TEST; TRAIN split would be empty")
    split = {r.image_id: Split.TEST if r.subject_id in test_subjects else Split.TRAIN for r in manifest.records}
    return replace(manifest, split=split, split_kind="subject")


# Validation -----------------------------------------------------------------

def validate(manifest: DatasetManifest) -> list[str]:
    """Return human-readable violations; an empty list means the manifest is clean."""
    violations = []
    index = manifest._index()
    if len(index) != len(manifest.records):
        violations.append("duplicate image_id in records")

    for i, a in enumerate(manifest.annotations):
        record = index.get(a.image_id)
        if record is None:
            violations.append(f"annotation {i}: image_id {a.image_id!r} not in records")
            continue
        b = a.box
        if not b.is_valid():
            violations.append(f"annotation {i} ({a.image_id}): non-positive area box {b.as_tuple()}")
            continue
        if b.x_max <= 0 or b.y_max <= 0 or b.x_min >= record.width or b.y_min >= record.height:
            violations.append(f"annotation {i} ({a.image_id}): box {b.as_tuple()} outside image bounds")

    if manifest.split:
        for image_id in manifest.split:
            if image_id not in index:
                violations.append(f"split entry {image_id!r} not in records")
        unassigned = [r.image_id for r in manifest.records if r.image_id not in manifest.split]
        if unassigned:
            violations.append(f"{len(unassigned)} record(s) missing from split, e.g. {unassigned[0]!r}")
        if manifest.split_kind == "subject":
            subjects = defaultdict(set)
            for image_id, subset in manifest.split.items():
                if image_id in index:
                    subjects[subset].add(index[image_id].subject_id)
            for s in sorted(subjects[Split.TRAIN] & subjects[Split.TEST], key=str):
                violations.append(f"subject {s!r} appears in both TRAIN and TEST")
    return violations
