"""Radiograph ingestion, normalization, fold planning, and augmentation.

A catalog is a line-delimited JSON file, one object per image with fields
{id, path, label, source, width, height, sha256}. Normalized images are
cached as 16-bit grayscale PNGs. The catalog writer is single-writer,
multi-reader; per-item transforms (ingest decode, augment) are pure and safe
to parallelize.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .imageops import apply_affine, read_png_gray, resize_bilinear, sha256_array, write_png_gray16

LABELS = ("covid", "control")
DEFAULT_INPUT_SIZE = 224


@dataclass
class CxrImage:
    """A grayscale radiograph with values in [0,1] plus catalog metadata."""

    id: str
    pixels: np.ndarray
    label: str
    source: str = ""
    original_format: str = "png"

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise ValueError(f"pixels must be 2-D, got shape {self.pixels.shape}")
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise ValueError("pixel values must be within [0,1]")
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class SegMask:
    """Binary mask aligned to a CxrImage, with annotation provenance."""

    image_id: str
    pixels: np.ndarray
    provenance: str = "manual"

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("mask must be binary")
        self.pixels = arr.astype(np.uint8)
        if self.provenance not in ("manual", "model", "collaborative"):
            raise ValueError(f"unknown provenance {self.provenance!r}")


@dataclass
class FoldPlan:
    """Assignment of every catalog id to exactly one test fold."""

    k: int
    seed: int
    assignments: dict
    ratio: float

    def test_ids(self, fold: int) -> list:
        return [i for i, f in self.assignments.items() if f == fold]

    def train_ids(self, fold: int) -> list:
        return [i for i, f in self.assignments.items() if f != fold]

    def to_json(self, **kwargs) -> str:
        return json.dumps(
            {"k": self.k, "seed": self.seed, "ratio": self.ratio, "assignments": self.assignments},
            sort_keys=True,
            **kwargs,
        )

    @classmethod
    def from_json(cls, text: str) -> "FoldPlan":
        d = json.loads(text)
        return cls(k=d["k"], seed=d["seed"], assignments=d["assignments"], ratio=d["ratio"])


@dataclass(frozen=True)
class AugmentParams:
    """Random shift/rotation ranges; sampling is uniform in [-max, +max]."""

    max_shift_fraction: float = 0.10
    max_rotation_deg: float = 10.0
    fill: str = "nearest"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.max_shift_fraction < 1.0:
            raise ValueError(f"max_shift_fraction must be in [0,1), got {self.max_shift_fraction}")
        if self.max_rotation_deg < 0.0:
            raise ValueError(f"max_rotation_deg must be >= 0, got {self.max_rotation_deg}")
        if self.fill != "nearest":
            raise ValueError(f"unsupported fill mode {self.fill!r}")


@dataclass
class IngestError:
    path: str
    reason: str


@dataclass
class IngestResult:
    images: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    duplicate_groups: list = field(default_factory=list)


def decode_image_file(path) -> tuple[np.ndarray, str]:
    """Decode a PNG/JPEG/DICOM-subset file to grayscale [0,1] floats."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".dcm", ".dicom"):
        return _read_dicom_subset(path), "dicom-subset"
    try:
        img = Image.open(path)
        img.load()
    except (UnidentifiedImageError, OSError) as e:
        raise ValueError(f"undecodable image: {e}") from e
    fmt = (img.format or "").lower()
    if fmt not in ("png", "jpeg"):
        raise ValueError(f"unsupported format {fmt!r}")
    if img.mode in ("I;16", "I;16B", "I"):
        arr = np.asarray(img, dtype=np.float64) / 65535.0
    else:
        if img.mode != "L":
            img = img.convert("L")
        arr = np.asarray(img, dtype=np.float64) / 255.0
    return arr, fmt


def _read_dicom_subset(path) -> np.ndarray:
    """Minimal DICOM reader: explicit-VR little-endian, uncompressed monochrome.

    Anything outside that subset (compressed transfer syntax, color,
    unsupported bit depth) raises ValueError and becomes a per-file error.
    """
    data = Path(path).read_bytes()
    if len(data) < 132 or data[128:132] != b"DICM":
        raise ValueError("not a DICOM file (missing DICM marker)")
    pos = 132
    elements = {}
    pixel_data = None
    while pos + 8 <= len(data):
        group, elem = struct.unpack_from("<HH", data, pos)
        vr = data[pos + 4 : pos + 6]
        if vr.isalpha() and vr.isupper():
            if vr in (b"OB", b"OW", b"OF", b"SQ", b"UT", b"UN"):
                (length,) = struct.unpack_from("<I", data, pos + 8)
                body = pos + 12
            else:
                (length,) = struct.unpack_from("<H", data, pos + 6)
                body = pos + 8
        else:
            raise ValueError("implicit-VR DICOM not supported")
        if length == 0xFFFFFFFF:
            raise ValueError("encapsulated (compressed) pixel data not supported")
        value = data[body : body + length]
        if (group, elem) == (0x7FE0, 0x0010):
            pixel_data = value
        else:
            elements[(group, elem)] = value
        pos = body + length

    def _str(tag):
        return elements.get(tag, b"").decode("ascii", "replace").strip("\x00 ").strip()

    def _us(tag):
        raw = elements.get(tag)
        if raw is None or len(raw) < 2:
            raise ValueError(f"missing tag {tag}")
        return struct.unpack("<H", raw[:2])[0]

    syntax = _str((0x0002, 0x0010))
    if syntax and syntax != "1.2.840.10008.1.2.1":
        raise ValueError(f"unsupported transfer syntax {syntax}")
    photometric = _str((0x0028, 0x0004))
    if photometric not in ("MONOCHROME1", "MONOCHROME2"):
        raise ValueError(f"unsupported photometric interpretation {photometric!r}")
    rows, cols = _us((0x0028, 0x0010)), _us((0x0028, 0x0011))
    bits = _us((0x0028, 0x0100))
    if bits not in (8, 16):
        raise ValueError(f"unsupported bits allocated {bits}")
    if pixel_data is None:
        raise ValueError("missing pixel data")
    dtype = np.uint8 if bits == 8 else np.uint16
    expected = rows * cols * (bits // 8)
    if len(pixel_data) < expected:
        raise ValueError("truncated pixel data")
    arr = np.frombuffer(pixel_data[:expected], dtype=dtype).reshape(rows, cols)
    arr = arr.astype(np.float64) / float(2**bits - 1)
    if photometric == "MONOCHROME1":
        arr = 1.0 - arr
    return arr


def ingest_source(path, label: str, source_tag: str, store: "CatalogStore | None" = None,
                  normalize_size: int | None = None) -> IngestResult:
    """Ingest every decodable radiograph under ``path``.

    Undecodable files become per-file error records and ingestion continues;
    a duplicate id is a hard error. Content-hash duplicates are flagged in
    ``duplicate_groups``, not dropped. When ``store`` is given each image is
    normalized (if ``normalize_size``) and persisted as a catalog row.
    """
    root = Path(path)
    if not root.exists():
        raise FileNotFoundError(f"ingest path does not exist: {root}")
    if label not in LABELS:
        raise ValueError(f"label must be one of {LABELS}, got {label!r}")
    files = sorted(p for p in root.rglob("*") if p.is_file())
    result = IngestResult()
    seen_ids = {}
    by_hash = {}
    for f in files:
        try:
            pixels, fmt = decode_image_file(f)
        except ValueError as e:
            result.errors.append(IngestError(path=str(f), reason=str(e)))
            continue
        image_id = f"{source_tag}-{f.stem}" if source_tag else f.stem
        if image_id in seen_ids:
            raise ValueError(f"duplicate image id {image_id!r} ({f} vs {seen_ids[image_id]})")
        seen_ids[image_id] = f
        img = CxrImage(id=image_id, pixels=pixels, label=label, source=source_tag,
                       original_format=fmt)
        digest = sha256_array(img.pixels)
        by_hash.setdefault(digest, []).append(image_id)
        result.images.append(img)
        if store is not None:
            out = normalize(img, normalize_size) if normalize_size else img
            store.add(out)
    result.duplicate_groups = [ids for ids in by_hash.values() if len(ids) > 1]
    return result


def normalize(image: CxrImage, size: int = DEFAULT_INPUT_SIZE) -> CxrImage:
    """Bilinear-resize to size x size; values stay in [0,1]."""
    if size < 8:
        raise ValueError(f"size must be >= 8, got {size}")
    resized = np.clip(resize_bilinear(image.pixels, size, size), 0.0, 1.0)
    return replace(image, pixels=resized)


def make_folds(catalog, k: int, ratio: float | None = None, seed: int = 0) -> FoldPlan:
    """Stratified k-fold assignment over (id, label) pairs.

    Every id lands in exactly one test fold; per-class test counts differ by
    at most one across folds. Deterministic for a given seed and catalog
    order.
    """
    catalog = list(catalog)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    implied = 1.0 - 1.0 / k
    if ratio is None:
        ratio = implied
    elif abs(ratio - implied) > 1e-9:
        raise ValueError(f"ratio {ratio} inconsistent with k={k} (expected {implied})")
    ids = [i for i, _ in catalog]
    if len(set(ids)) != len(ids):
        raise ValueError("catalog contains duplicate ids")
    by_label = {}
    for image_id, label in catalog:
        by_label.setdefault(label, []).append(image_id)
    rng = np.random.default_rng(seed)
    assignments = {}
    for label in sorted(by_label):
        members = by_label[label]
        if len(members) < k:
            raise ValueError(f"class {label!r} has {len(members)} members, fewer than k={k}")
        order = rng.permutation(len(members))
        for pos, idx in enumerate(order):
            assignments[members[idx]] = pos % k
    return FoldPlan(k=k, seed=seed, assignments=assignments, ratio=ratio)


def augment(image: CxrImage, mask: SegMask | None, params: AugmentParams,
            rng: np.random.Generator, aug_id: str | None = None):
    """Apply one random shift+rotation to an image and (optionally) its mask.

    The same sampled transform is applied to both; the mask is re-binarized
    at >= 0.5 after interpolation. Blank regions replicate the nearest edge.
    """
    if mask is not None and mask.pixels.shape != image.pixels.shape:
        raise ValueError("mask is not aligned to image")
    h, w = image.pixels.shape
    shift_r = rng.uniform(-params.max_shift_fraction, params.max_shift_fraction) * h
    shift_c = rng.uniform(-params.max_shift_fraction, params.max_shift_fraction) * w
    angle = rng.uniform(-params.max_rotation_deg, params.max_rotation_deg)
    new_id = aug_id or image.id
    out_pixels = np.clip(apply_affine(image.pixels, shift_r, shift_c, angle), 0.0, 1.0)
    out_image = replace(image, id=new_id, pixels=out_pixels)
    out_mask = None
    if mask is not None:
        warped = apply_affine(mask.pixels.astype(np.float64), shift_r, shift_c, angle)
        out_mask = SegMask(image_id=new_id, pixels=(warped >= 0.5).astype(np.uint8),
                           provenance=mask.provenance)
    return out_image, out_mask


def balance_training_set(fold_train, target_count: int, params: AugmentParams, seed: int = 0):
    """Expand the minority class to ``target_count`` with augmented copies.

    ``fold_train`` is a list of (CxrImage, SegMask-or-None) pairs; originals
    are retained and augmented copies get '~augN' id suffixes.
    """
    fold_train = list(fold_train)
    counts = {}
    for image, _ in fold_train:
        counts[image.label] = counts.get(image.label, 0) + 1
    if not counts:
        raise ValueError("empty training set")
    minority = min(counts, key=lambda lb: (counts[lb], lb))
    current = counts[minority]
    if target_count < current:
        raise ValueError(f"target_count {target_count} below current {minority} count {current}")
    originals = [(im, mk) for im, mk in fold_train if im.label == minority]
    rng = np.random.default_rng(seed)
    out = list(fold_train)
    for n in range(target_count - current):
        src_image, src_mask = originals[int(rng.integers(len(originals)))]
        aug_id = f"{src_image.id}~aug{n}"
        out.append(augment(src_image, src_mask, params, rng, aug_id=aug_id))
    return out


class CatalogStore:
    """Directory-backed catalog: JSONL rows plus 16-bit grayscale PNG cache.

    Appends are single-writer; readers may scan the catalog concurrently.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.images_dir = self.root / "images"
        self.images_dir.mkdir(parents=True, exist_ok=True)
        self.catalog_path = self.root / "catalog.jsonl"

    def add(self, image: CxrImage) -> dict:
        png_path = self.images_dir / f"{image.id}.png"
        write_png_gray16(png_path, image.pixels)
        row = {
            "id": image.id,
            "path": str(png_path.relative_to(self.root)),
            "label": image.label,
            "source": image.source,
            "width": image.width,
            "height": image.height,
            "sha256": sha256_array(image.pixels),
        }
        with open(self.catalog_path, "a") as f:
            f.write(json.dumps(row, sort_keys=True) + "\n")
        return row

    def rows(self) -> list:
        if not self.catalog_path.exists():
            return []
        with open(self.catalog_path) as f:
            return [json.loads(line) for line in f if line.strip()]

    def catalog(self) -> list:
        """(id, label) pairs in insertion order, for fold planning."""
        return [(row["id"], row["label"]) for row in self.rows()]

    def load_image(self, image_id: str) -> CxrImage:
        rows = {row["id"]: row for row in self.rows()}
        if image_id not in rows:
            raise KeyError(f"unknown image id {image_id!r}")
        row = rows[image_id]
        pixels = read_png_gray(self.root / row["path"])
        return CxrImage(id=image_id, pixels=pixels, label=row["label"], source=row["source"])
