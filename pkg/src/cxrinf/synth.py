"""Synthetic desk-scale corpus: bright disks on noisy backgrounds.

Stands in for real radiographs in CPU-only tests: covid samples get one or
two elevated-intensity disks with matching ground-truth masks, control
samples are background noise with an empty mask.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dataset import CxrImage, SegMask
from .imageops import sha256_array, write_png_gray8, write_png_gray16

DEFAULT_SIZE = 64


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    base = 0.35 + 0.05 * rng.standard_normal()
    noise = 0.06 * rng.standard_normal((size, size))
    # A soft vertical gradient so images are not statistically flat.
    grad = np.linspace(-0.05, 0.05, size)[:, None]
    return np.clip(base + grad + noise, 0.0, 1.0)


def _disk(size: int, cy: float, cx: float, radius: float) -> np.ndarray:
    yy, xx = np.ogrid[:size, :size]
    return ((yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2).astype(np.uint8)


def make_sample(rng: np.random.Generator, size: int, with_disk: bool):
    """One (pixels, mask) pair; mask is all-zero for control samples."""
    pixels = _background(rng, size)
    mask = np.zeros((size, size), dtype=np.uint8)
    if with_disk:
        n_disks = int(rng.integers(1, 3))
        for _ in range(n_disks):
            radius = float(rng.uniform(size * 0.10, size * 0.22))
            cy = float(rng.uniform(radius + 1, size - radius - 1))
            cx = float(rng.uniform(radius + 1, size - radius - 1))
            disk = _disk(size, cy, cx, radius)
            pixels = np.clip(pixels + 0.35 * disk, 0.0, 1.0)
            mask |= disk
    return pixels, mask


def make_synthetic_samples(n_covid: int, n_control: int, size: int = DEFAULT_SIZE, seed: int = 7):
    """In-memory corpus: list of (CxrImage, SegMask) pairs, covid first.

    Control masks are empty (all background), so the pairs feed segmentation
    training directly.
    """
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n_covid):
        pixels, mask = make_sample(rng, size, with_disk=True)
        image_id = f"synth-covid-{i:04d}"
        samples.append(
            (
                CxrImage(id=image_id, pixels=pixels, label="covid", source="synth"),
                SegMask(image_id=image_id, pixels=mask, provenance="manual"),
            )
        )
    for i in range(n_control):
        pixels, mask = make_sample(rng, size, with_disk=False)
        image_id = f"synth-control-{i:04d}"
        samples.append(
            (
                CxrImage(id=image_id, pixels=pixels, label="control", source="synth"),
                SegMask(image_id=image_id, pixels=mask, provenance="manual"),
            )
        )
    return samples


def write_corpus(out_dir, n_covid: int, n_control: int, size: int = DEFAULT_SIZE,
                 seed: int = 7) -> dict:
    """Write a corpus directory: images/, masks/, catalog.jsonl.

    Deterministic for a given seed: rerunning produces bit-identical files.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    samples = make_synthetic_samples(n_covid, n_control, size=size, seed=seed)
    rows = []
    for image, mask in samples:
        write_png_gray16(out / "images" / f"{image.id}.png", image.pixels)
        write_png_gray8(out / "masks" / f"{image.id}.png", mask.pixels.astype(np.float64))
        rows.append(
            {
                "id": image.id,
                "path": f"images/{image.id}.png",
                "label": image.label,
                "source": image.source,
                "width": image.width,
                "height": image.height,
                "sha256": sha256_array(image.pixels),
            }
        )
    with open(out / "catalog.jsonl", "w") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    return {"n_covid": n_covid, "n_control": n_control, "size": size, "seed": seed,
            "count": len(rows)}


def load_corpus(corpus_dir):
    """Read back a corpus written by :func:`write_corpus`."""
    from .imageops import read_png_gray

    root = Path(corpus_dir)
    samples = []
    with open(root / "catalog.jsonl") as f:
        for line in f:
            row = json.loads(line)
            pixels = read_png_gray(root / row["path"])
            image = CxrImage(id=row["id"], pixels=pixels, label=row["label"],
                             source=row.get("source", ""))
            mask_path = root / "masks" / f"{row['id']}.png"
            mask = None
            if mask_path.exists():
                mask = SegMask(image_id=row["id"],
                               pixels=(read_png_gray(mask_path) >= 0.5).astype(np.uint8),
                               provenance="manual")
            samples.append((image, mask))
    return samples
