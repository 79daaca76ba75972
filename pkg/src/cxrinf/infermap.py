"""Infection-map rendering and detection from per-pixel probability fields.

The map overlays a jet-colorized probability field on the radiograph in HSV
space: hue and saturation come from the colorized probabilities, the value
channel keeps the radiograph intensity, so anatomy stays readable under the
overlay. Pixels at or below the visibility threshold pass the grayscale
input through untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .imageops import quantize_u8, write_png_gray16, write_png_rgb8

DEFAULT_TAU_VIS = 0.01


@dataclass
class ProbMask:
    """Per-pixel infection probability field in [0,1]."""

    image_id: str
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise ValueError(f"pixels must be 2-D, got shape {self.pixels.shape}")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValueError("probabilities must be within [0,1]")


@dataclass
class InfectionMap:
    image_id: str
    rgb: np.ndarray
    visibility_threshold: float


def jet_colormap(v):
    """Piecewise-linear jet: v in [0,1] -> (r, g, b), each in [0,1].

    r = clip(1.5 - |4v-3|), g = clip(1.5 - |4v-2|), b = clip(1.5 - |4v-1|).
    Fixed as the rendering contract so outputs are bit-reproducible.
    """
    arr = np.asarray(v, dtype=np.float64)
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("jet_colormap input must be within [0,1]")
    r = np.clip(1.5 - np.abs(4.0 * arr - 3.0), 0.0, 1.0)
    g = np.clip(1.5 - np.abs(4.0 * arr - 2.0), 0.0, 1.0)
    b = np.clip(1.5 - np.abs(4.0 * arr - 1.0), 0.0, 1.0)
    if np.isscalar(v) or arr.ndim == 0:
        return float(r), float(g), float(b)
    return np.stack([r, g, b], axis=-1)


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Hexcone RGB -> HSV, channels in [0,1], vectorized over leading dims."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = np.maximum(np.maximum(r, g), b)
    minc = np.minimum(np.minimum(r, g), b)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        safe = np.where(delta > 0, delta, 1.0)
        rc = (maxc - r) / safe
        gc = (maxc - g) / safe
        bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    """Hexcone HSV -> RGB, inverse of :func:`rgb_to_hsv` within 1e-6."""
    hsv = np.asarray(hsv, dtype=np.float64)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(int) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def render_infection_map(image, prob, tau_vis: float = DEFAULT_TAU_VIS) -> InfectionMap:
    """Compose the jet-colorized probability field over a grayscale image.

    Where prob > tau_vis, output HSV takes hue/saturation from jet(prob) and
    value from the image intensity; elsewhere the grayscale pixel is passed
    through as RGB.
    """
    gray = np.asarray(getattr(image, "pixels", image), dtype=np.float64)
    p = np.asarray(getattr(prob, "pixels", prob), dtype=np.float64)
    if gray.shape != p.shape:
        raise ValueError(f"shape mismatch: image {gray.shape} vs prob {p.shape}")
    if not 0.0 <= tau_vis < 1.0:
        raise ValueError(f"tau_vis must be in [0,1), got {tau_vis}")

    jet_hsv = rgb_to_hsv(jet_colormap(p))
    composed = jet_hsv.copy()
    composed[..., 2] = gray
    rgb = hsv_to_rgb(composed)

    shown = p > tau_vis
    out = np.repeat(gray[..., None], 3, axis=-1)
    out[shown] = rgb[shown]
    image_id = getattr(prob, "image_id", None) or getattr(image, "id", "")
    return InfectionMap(image_id=image_id, rgb=out, visibility_threshold=tau_vis)


def detect(prob, threshold: float = 0.5, min_area_px: int = 1) -> bool:
    """Positive iff at least ``min_area_px`` pixels reach ``threshold``."""
    p = np.asarray(getattr(prob, "pixels", prob))
    return int(np.sum(p >= threshold)) >= min_area_px


def pr_curve(probs, gts, thresholds):
    """Pixel-level (precision, recall) at each threshold, pooled over pairs.

    Precision is None where nothing is predicted positive.
    """
    probs = [np.asarray(getattr(p, "pixels", p)) for p in probs]
    gts = [np.asarray(getattr(g, "pixels", g)) for g in gts]
    if len(probs) != len(gts):
        raise ValueError("probs and gts must align")
    for p, g in zip(probs, gts):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    points = []
    for t in thresholds:
        tp = fp = fn = 0
        for p, g in zip(probs, gts):
            pred = p >= t
            pos = g == 1
            tp += int(np.sum(pred & pos))
            fp += int(np.sum(pred & ~pos))
            fn += int(np.sum(~pred & pos))
        precision = tp / (tp + fp) if tp + fp > 0 else None
        recall = tp / (tp + fn) if tp + fn > 0 else None
        points.append((precision, recall))
    return points


def detection_sidecar(prob, threshold: float = 0.5, min_area_px: int = 1) -> dict:
    """JSON-ready detection summary for one probability mask."""
    p = np.asarray(getattr(prob, "pixels", prob))
    positive_px = int(np.sum(p >= threshold))
    return {
        "id": getattr(prob, "image_id", ""),
        "detected": bool(positive_px >= min_area_px),
        "max_prob": float(p.max()) if p.size else 0.0,
        "positive_px": positive_px,
    }


def write_outputs(out_dir, image, prob, tau_vis: float = DEFAULT_TAU_VIS,
                  threshold: float = 0.5, min_area_px: int = 1) -> dict:
    """Write ``<id>_infmap.png``, ``<id>_prob.png`` and the sidecar JSON."""
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    image_id = getattr(prob, "image_id", None) or getattr(image, "id", "image")
    imap = render_infection_map(image, prob, tau_vis)
    paths = {
        "infmap": out_dir / f"{image_id}_infmap.png",
        "prob": out_dir / f"{image_id}_prob.png",
        "sidecar": out_dir / f"{image_id}_detect.json",
    }
    write_png_rgb8(paths["infmap"], imap.rgb)
    write_png_gray16(paths["prob"], np.asarray(getattr(prob, "pixels", prob)))
    sidecar = detection_sidecar(prob, threshold, min_area_px)
    paths["sidecar"].write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return {k: str(v) for k, v in paths.items()}


def quantized_rgb(imap: InfectionMap) -> np.ndarray:
    """8-bit view of the rendered map (round-half-up)."""
    return quantize_u8(imap.rgb)
