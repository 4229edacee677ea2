"""Masked-face image synthesis.

Two paths are provided: :func:`overlay_mask` composites a mask template onto
a real face photo given a face box (the WIKI-style pipeline, followed by
:func:`to_grayscale`), and :func:`generate_synthetic_dataset` renders fully
procedural thermal-looking faces so experiments can run without any data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from thermask.dataset import (
    Annotation,
    BoundingBox,
    DatasetManifest,
    ImageRecord,
    MaskClass,
    save_labels,
    save_manifest,
    split_by_subject,
)


@dataclass(frozen=True)
class MaskTemplate:
    """Grayscale mask sprite with alpha, placed relative to a face box.

    ``image`` is uint8 of shape (H, W, 2): intensity and alpha. ``anchor`` is
    (left, top, right, bottom) as fractions of the face box width/height.
    """

    template_id: str
    class_label: MaskClass
    image: np.ndarray
    anchor: tuple[float, float, float, float]

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.ndim != 3 or img.shape[2] != 2:
            raise ValueError(f"template {self.template_id}: image must be (H, W, 2), got {img.shape}")
        left, top, right, bottom = self.anchor
        if not all(0.0 <= f <= 1.0 for f in self.anchor) or left >= right or top >= bottom:
            raise ValueError(f"template {self.template_id}: bad anchor {self.anchor}")
        if not np.any(img[..., 1] >= 128):
            raise ValueError(f"template {self.template_id}: no opaque pixels")

    @property
    def opaque(self) -> np.ndarray:
        return self.image[..., 1] >= 128


@dataclass(frozen=True)
class SynthConfig:
    n_images: int = 600
    image_size: int = 128
    class_mix: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    noise_sigma: float = 2.0  # in 8-bit intensity units
    blur_radius: float = 1.0
    seed: int = 0
    mask_contrast: float = 0.8  # fraction of the skin-background gap the mask sits below skin
    n_subjects: int = 10
    cameras: tuple[str, ...] = ("synth-a", "synth-b", "synth-c")
    bit_depth: int = 8
    id_prefix: str = "img"

    def __post_init__(self):
        if self.n_images <= 0:
            raise ValueError(f"n_images must be positive, got {self.n_images}")
        if self.image_size < 32:
            raise ValueError(f"image_size must be at least 32, got {self.image_size}")
        if len(self.class_mix) != len(MaskClass) or any(p < 0 for p in self.class_mix):
            raise ValueError(f"class_mix must hold {len(MaskClass)} nonnegative probabilities")
        if not math.isclose(sum(self.class_mix), 1.0, abs_tol=1e-6):
            raise ValueError(f"class_mix must sum to 1, got {sum(self.class_mix)}")
        if self.noise_sigma < 0 or self.blur_radius < 0:
            raise ValueError("noise_sigma and blur_radius must be nonnegative")
        if not 0.0 < self.mask_contrast < 1.0:
            raise ValueError(f"mask_contrast must be in (0, 1), got {self.mask_contrast}")
        if self.n_subjects <= 0 or not self.cameras:
            raise ValueError("need at least one subject and one camera")
        if self.bit_depth not in (8, 16):
            raise ValueError(f"bit_depth must be 8 or 16, got {self.bit_depth}")


class SyntheticDataset(NamedTuple):
    manifest: DatasetManifest
    rasters: dict[str, np.ndarray]
    face_boxes: dict[str, BoundingBox]


# Raster helpers -------------------------------------------------------------

def _dtype_max(raster: np.ndarray) -> float:
    if np.issubdtype(raster.dtype, np.integer):
        return float(np.iinfo(raster.dtype).max)
    return 1.0


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """Luminosity-weighted grayscale of an 8-bit RGB image, rounded half up."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) RGB input, got shape {rgb.shape}")
    if rgb.dtype != np.uint8:
        raise ValueError(f"expected uint8 input, got {rgb.dtype}")
    c = rgb.astype(np.float64)
    gray = 0.299 * c[..., 0] + 0.587 * c[..., 1] + 0.114 * c[..., 2]
    return np.clip(np.floor(gray + 0.5), 0, 255).astype(np.uint8)


def thermalize(gray: np.ndarray, noise_sigma: float, blur_radius: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian blur (sigma = ``blur_radius``) then additive Gaussian noise.

    ``noise_sigma`` is in the raster's own intensity units. Integer rasters
    are rounded and clamped back to their dtype range, float rasters to [0, 1].
    """
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale raster, got shape {gray.shape}")
    if noise_sigma < 0 or blur_radius < 0:
        raise ValueError("noise_sigma and blur_radius must be nonnegative")
    if noise_sigma == 0 and blur_radius == 0:
        return gray.copy()
    out = gray.astype(np.float64)
    if blur_radius > 0:
        out = ndimage.gaussian_filter(out, sigma=blur_radius, mode="nearest")
    if noise_sigma > 0:
        out = out + rng.normal(0.0, noise_sigma, size=out.shape)
    hi = _dtype_max(gray)
    if np.issubdtype(gray.dtype, np.integer):
        return np.clip(np.floor(out + 0.5), 0, hi).astype(gray.dtype)
    return np.clip(out, 0.0, hi).astype(gray.dtype)


def _resize_nearest(img: np.ndarray, height: int, width: int) -> np.ndarray:
    rows = np.minimum((np.arange(height) + 0.5) * img.shape[0] / height, img.shape[0] - 1).astype(int)
    cols = np.minimum((np.arange(width) + 0.5) * img.shape[1] / width, img.shape[1] - 1).astype(int)
    return img[rows][:, cols]


def anchor_region(face_box: BoundingBox, anchor) -> tuple[int, int, int, int]:
    """Integer pixel region [x0, x1) x [y0, y1) lying inside the anchor rectangle."""
    left, top, right, bottom = anchor
    x0 = math.ceil(face_box.x_min + left * face_box.width - 1e-9)
    y0 = math.ceil(face_box.y_min + top * face_box.height - 1e-9)
    x1 = math.floor(face_box.x_min + right * face_box.width + 1e-9)
    y1 = math.floor(face_box.y_min + bottom * face_box.height + 1e-9)
    return x0, y0, x1, y1


def overlay_mask(
    face_image: np.ndarray,
    face_box: BoundingBox,
    template: MaskTemplate,
    rng: np.random.Generator,
    image_id: str = "",
    jitter: float = 0.1,
) -> tuple[np.ndarray, Annotation]:
    """Composite ``template`` (fully opaque) into the anchored part of ``face_box``.

    The sprite is shrunk by up to ``jitter`` of the anchor size and shifted
    randomly, always staying inside the anchor rectangle. The returned
    annotation is the tight box of the pixels actually written.
    """
    face_image = np.asarray(face_image)
    if face_image.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale raster, got shape {face_image.shape}")
    if not face_box.is_valid():
        raise ValueError(f"degenerate face box {face_box.as_tuple()}")
    h, w = face_image.shape
    if face_box.x_min < 0 or face_box.y_min < 0 or face_box.x_max > w or face_box.y_max > h:
        raise ValueError(f"face box {face_box.as_tuple()} exceeds image {w}x{h}")
    if not np.any(template.opaque):
        raise ValueError(f"template {template.template_id} has no opaque pixels")

    x0, y0, x1, y1 = anchor_region(face_box, template.anchor)
    region_w, region_h = x1 - x0, y1 - y0
    if region_w < 1 or region_h < 1:
        raise ValueError(f"face box {face_box.as_tuple()} too small for template {template.template_id}")
    scale = 1.0 - jitter * rng.random()
    sprite_w = max(1, int(round(region_w * scale)))
    sprite_h = max(1, int(round(region_h * scale)))
    ox = x0 + int(rng.integers(0, region_w - sprite_w + 1))
    oy = y0 + int(rng.integers(0, region_h - sprite_h + 1))

    sprite = _resize_nearest(template.image, sprite_h, sprite_w)
    opaque = sprite[..., 1] >= 128
    if not opaque.any():
        # Heavily shrunk sprites can lose all opaque samples; fall back to full size.
        sprite = _resize_nearest(template.image, region_h, region_w)
        ox, oy, sprite_w, sprite_h = x0, y0, region_w, region_h
        opaque = sprite[..., 1] >= 128

    out = face_image.copy()
    scale_to = _dtype_max(out) / 255.0
    values = sprite[..., 0].astype(np.float64) * scale_to
    if np.issubdtype(out.dtype, np.integer):
        values = np.floor(values + 0.5)
    window = out[oy : oy + sprite_h, ox : ox + sprite_w]
    window[opaque] = values[opaque].astype(out.dtype)

    rows = np.flatnonzero(opaque.any(axis=1))
    cols = np.flatnonzero(opaque.any(axis=0))
    box = BoundingBox(float(ox + cols[0]), float(oy + rows[0]), float(ox + cols[-1] + 1), float(oy + rows[-1] + 1))
    return out, Annotation(image_id, template.class_label, box)


# Templates --------------------------------------------------------------------

def _sprite(shape_fn, texture_fn, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    u = (xx + 0.5) / size
    v = (yy + 0.5) / size
    alpha = np.where(shape_fn(u, v), 255, 0).astype(np.uint8)
    intensity = np.clip(texture_fn(u, v), 0, 255).astype(np.uint8)
    return np.stack([intensity, alpha], axis=-1)


def default_templates(size: int = 64, include_scarf: bool = True) -> list[MaskTemplate]:
    """Procedural sprites: FFP2 duck-bill wedge, pleated surgical rectangle,
    rounded cloth trapezoid and (optionally) a scarf-like cloth wrap.

    Intensities are centred on 128; the generator re-tints them per image.
    """

    def ffp2_shape(u, v):
        # pentagon: flat top, straight sides, pointed chin
        upper = (v >= 0.04) & (v <= 0.55) & (np.abs(u - 0.5) <= 0.46)
        lower = (v > 0.55) & (np.abs(u - 0.5) <= 0.46 * (1.0 - (v - 0.55) / 0.43))
        return upper | lower

    def ffp2_texture(u, v):
        # warm central fold line, cooler sides
        fold = np.exp(-((v - 0.45) ** 2) / 0.002) * 70.0
        ridge = np.exp(-((u - 0.5) ** 2) / 0.004) * 45.0
        return 110.0 + fold + ridge - 35.0 * np.abs(u - 0.5)

    def surgery_shape(u, v):
        return (np.abs(u - 0.5) <= 0.48) & (v >= 0.08) & (v <= 0.82)

    def surgery_texture(u, v):
        pleats = 38.0 * (np.sin(v * 2 * np.pi * 4.5) > 0.55)
        return 120.0 - pleats

    def cloth_shape(u, v):
        half = 0.34 + 0.14 * v
        inside = (np.abs(u - 0.5) <= half) & (v >= 0.1) & (v <= 0.95)
        corner = (v > 0.75) & (((np.abs(u - 0.5) - (half - 0.2)) / 0.2) ** 2 + ((v - 0.75) / 0.2) ** 2 > 1.0)
        corner &= np.abs(u - 0.5) > half - 0.2
        return inside & ~corner

    def cloth_texture(u, v):
        return 128.0 + 12.0 * np.cos(u * 2 * np.pi * 6) * np.cos(v * 2 * np.pi * 6)

    def scarf_shape(u, v):
        return (v >= 0.05 + 0.1 * np.abs(u - 0.5)) & (np.abs(u - 0.5) <= 0.5)

    def scarf_texture(u, v):
        return 128.0 + 25.0 * (np.sin((u + v) * 2 * np.pi * 5) > 0.3)

    templates = [
        MaskTemplate("ffp2-duckbill", MaskClass.FFP2, _sprite(ffp2_shape, ffp2_texture, size), (0.10, 0.48, 0.90, 0.99)),
        MaskTemplate("surgical-pleated", MaskClass.SURGERY, _sprite(surgery_shape, surgery_texture, size), (0.08, 0.55, 0.92, 0.93)),
        MaskTemplate("cloth-rounded", MaskClass.CLOTH, _sprite(cloth_shape, cloth_texture, size), (0.12, 0.52, 0.88, 0.98)),
    ]
    if include_scarf:
        templates.append(
            MaskTemplate("cloth-scarf", MaskClass.CLOTH, _sprite(scarf_shape, scarf_texture, size), (0.04, 0.60, 0.96, 1.00))
        )
    return templates


def tint_template(template: MaskTemplate, base: float, spread: float) -> MaskTemplate:
    """Re-map sprite intensities around ``base`` (0-255); texture amplitude scaled by ``spread``."""
    img = template.image.copy()
    tinted = base + (img[..., 0].astype(np.float64) - 128.0) * spread
    img[..., 0] = np.clip(np.floor(tinted + 0.5), 0, 255).astype(np.uint8)
    return MaskTemplate(template.template_id, template.class_label, img, template.anchor)


# Procedural generator ---------------------------------------------------------

def sample_class(config: SynthConfig, index: int) -> MaskClass:
    """Class drawn for image ``index``; first draw of that image's RNG stream."""
    rng = np.random.default_rng([config.seed, index])
    return MaskClass(int(rng.choice(len(MaskClass), p=np.asarray(config.class_mix, dtype=np.float64))))


def _subject_traits(seed: int, subject: int) -> dict:
    rng = np.random.default_rng([seed, 1_000_003, subject])
    return {
        "half_w": rng.uniform(0.25, 0.30),
        "half_h": rng.uniform(0.33, 0.38),
        "skin": rng.uniform(0.74, 0.84),
        "hair": rng.uniform(0.0, 0.6),
    }


def _render_face(size: int, traits: dict, rng: np.random.Generator, background: float):
    """Float image in [0, 1] with an elliptical warm face; returns image and face box."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    img = background + 0.02 * (yy / size) + rng.normal(0, 0.01) * (xx / size - 0.5)

    cx = size * (0.5 + rng.uniform(-0.06, 0.06))
    cy = size * (0.47 + rng.uniform(-0.05, 0.05))
    a = size * traits["half_w"] * rng.uniform(0.95, 1.05)
    b = size * traits["half_h"] * rng.uniform(0.95, 1.05)

    # neck under the face
    neck = (np.abs(xx - cx) <= 0.55 * a) & (yy >= cy + 0.6 * b)
    img = np.where(neck, traits["skin"] - 0.08, img)

    r2 = ((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2
    face = r2 <= 1.0
    skin = traits["skin"] * (1.0 - 0.04 * r2)
    img = np.where(face, skin, img)

    # cooler hair cap over the forehead
    hair = face & (yy < cy - b * (0.75 - 0.25 * traits["hair"]))
    img = np.where(hair, background + 0.1, img)

    # warm inner eye corners
    for side in (-1, 1):
        ex, ey = cx + side * 0.38 * a, cy - 0.22 * b
        img += 0.03 * np.exp(-(((xx - ex) ** 2 + (yy - ey) ** 2) / (0.005 * size * size)))

    box = BoundingBox(max(cx - a, 0.0), max(cy - b, 0.0), min(cx + a, size), min(cy + b, size))
    return np.clip(img, 0.0, 1.0), box, float(np.mean(skin[face]))


def render_image(config: SynthConfig, index: int, templates_by_class: dict[MaskClass, list[MaskTemplate]]):
    """Render image ``index``: raster (uint8/uint16), annotation, face box, record."""
    rng = np.random.default_rng([config.seed, index])
    label = MaskClass(int(rng.choice(len(MaskClass), p=np.asarray(config.class_mix, dtype=np.float64))))
    candidates = templates_by_class.get(label)
    if not candidates:
        raise ValueError(f"no template for class {label.name}")
    template = candidates[int(rng.integers(len(candidates)))]

    subject = index % config.n_subjects
    traits = _subject_traits(config.seed, subject)
    background = rng.uniform(0.02, 0.08)
    image, face_box, skin_level = _render_face(config.image_size, traits, rng, background)

    mask_level = skin_level - config.mask_contrast * (skin_level - background)
    tinted = tint_template(template, 255.0 * mask_level, rng.uniform(0.8, 1.0))
    image_id = f"{config.id_prefix}{index:06d}"
    image, annotation = overlay_mask(image, face_box, tinted, rng, image_id=image_id)

    hi = 255.0 if config.bit_depth == 8 else 65535.0
    dtype = np.uint8 if config.bit_depth == 8 else np.uint16
    raster = np.floor(image * hi + 0.5).astype(dtype)
    noise = config.noise_sigma * (hi / 255.0)
    raster = thermalize(raster, noise, config.blur_radius, rng)

    suffix = "png"
    record = ImageRecord(
        image_id=image_id,
        path=f"images/{image_id}.{suffix}",
        width=config.image_size,
        height=config.image_size,
        bit_depth=config.bit_depth,
        camera=config.cameras[index % len(config.cameras)],
        subject_id=f"s{config.seed}-{subject:03d}",
    )
    return raster, annotation, face_box, record


def generate_synthetic_dataset(config: SynthConfig, templates: Sequence[MaskTemplate] | None = None) -> SyntheticDataset:
    """Render ``config.n_images`` procedural thermal faces, one mask each.

    Image ``i`` depends only on ``(config, i)``, so generation is
    order-independent and reproducible.
    """
    if templates is None:
        templates = default_templates()
    if not templates:
        raise ValueError("at least one mask template is required")
    by_class: dict[MaskClass, list[MaskTemplate]] = {}
    for t in templates:
        by_class.setdefault(MaskClass(t.class_label), []).append(t)
    for cls, p in zip(MaskClass, config.class_mix):
        if p > 0 and cls not in by_class:
            raise ValueError(f"class {cls.name} has mix probability {p} but no template")

    records, annotations, rasters, faces = [], [], {}, {}
    for i in range(config.n_images):
        raster, annotation, face_box, record = render_image(config, i, by_class)
        records.append(record)
        annotations.append(annotation)
        rasters[record.image_id] = raster
        faces[record.image_id] = face_box
    return SyntheticDataset(DatasetManifest(records, annotations), rasters, faces)


# Disk output ----------------------------------------------------------------------

def write_pgm(path, raster: np.ndarray) -> None:
    raster = np.asarray(raster)
    maxval = 255 if raster.dtype == np.uint8 else 65535
    header = f"P5\n{raster.shape[1]} {raster.shape[0]}\n{maxval}\n".encode()
    body = raster.astype(">u2").tobytes() if maxval > 255 else raster.tobytes()
    Path(path).write_bytes(header + body)


def write_image(path, raster: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        write_pgm(path, raster)
        return
    if raster.dtype == np.uint16:
        Image.fromarray(np.ascontiguousarray(raster, dtype=np.uint16)).save(path)
    else:
        Image.fromarray(np.ascontiguousarray(raster, dtype=np.uint8)).save(path)


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.array(im)
    if arr.dtype == np.int32:
        arr = arr.astype(np.uint16)
    return arr


def save_face_boxes(face_boxes: dict[str, BoundingBox], path) -> None:
    data = {"schema": "v1", "faces": {k: list(v.as_tuple()) for k, v in sorted(face_boxes.items())}}
    Path(path).write_text(json.dumps(data, indent=1) + "\n")


def load_face_boxes(path) -> dict[str, BoundingBox]:
    data = json.loads(Path(path).read_text())
    if data.get("schema") != "v1":
        raise ValueError(f"unsupported face box schema {data.get('schema')!r}")
    return {k: BoundingBox(*v) for k, v in data["faces"].items()}


def save_dataset(dataset: SyntheticDataset, out_dir, image_format: str = "png") -> Path:
    """Write images, YOLO labels, ``manifest.json`` and ``faces.json`` under ``out_dir``."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for r in dataset.manifest.records:
        rel = f"images/{r.image_id}.{image_format}"
        write_image(out_dir / rel, dataset.rasters[r.image_id])
        records.append(ImageRecord(r.image_id, rel, r.width, r.height, r.bit_depth, r.camera, r.subject_id))
    manifest = DatasetManifest(records, dataset.manifest.annotations, dataset.manifest.split, dataset.manifest.split_kind)
    save_labels(manifest, out_dir / "labels")
    save_manifest(manifest, out_dir / "manifest.json")
    save_face_boxes(dataset.face_boxes, out_dir / "faces.json")
    return out_dir / "manifest.json"


def load_rasters(manifest: DatasetManifest, root) -> dict[str, np.ndarray]:
    root = Path(root)
    return {r.image_id: read_image(root / r.path) for r in manifest.records}


def combine_train_test(train: SyntheticDataset, test: SyntheticDataset) -> SyntheticDataset:
    """Merge two generated sets into one with a subject-disjoint TRAIN/TEST split.

    Generate the two halves with different seeds (and id prefixes) so their
    subjects and image ids do not overlap.
    """
    train_ids = {r.image_id for r in train.manifest.records}
    clash = train_ids & {r.image_id for r in test.manifest.records}
    if clash:
        raise ValueError(f"image ids occur in both sets, e.g. {sorted(clash)[0]!r}; use distinct id prefixes")
    test_subjects = {r.subject_id for r in test.manifest.records}
    if test_subjects & {r.subject_id for r in train.manifest.records}:
        raise ValueError("train and test sets share subjects; generate them with different seeds")
    merged = DatasetManifest(
        train.manifest.records + test.manifest.records,
        train.manifest.annotations + test.manifest.annotations,
    )
    return SyntheticDataset(
        split_by_subject(merged, test_subjects),
        {**train.rasters, **test.rasters},
        {**train.face_boxes, **test.face_boxes},
    )
