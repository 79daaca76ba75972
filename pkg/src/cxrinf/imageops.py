"""Low-level raster operations shared across the toolkit.

All arrays are 2-D float grayscale in [0, 1] unless stated otherwise.
Resampling is bilinear with corner alignment: output corners sample source
corners exactly, and a same-size resize is a bit-identical copy.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage


def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of a 2-D array."""
    if arr.ndim != 2:
        raise ValueError(f"expected 2-D array, got shape {arr.shape}")
    h, w = arr.shape
    if (h, w) == (out_h, out_w):
        return arr.copy()
    arr = np.asarray(arr, dtype=np.float64)
    ys = np.linspace(0.0, h - 1.0, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1.0, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = arr[np.ix_(y0, x0)] * (1 - fx) + arr[np.ix_(y0, x1)] * fx
    bot = arr[np.ix_(y1, x0)] * (1 - fx) + arr[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def apply_affine(
    arr: np.ndarray,
    shift_rows: float = 0.0,
    shift_cols: float = 0.0,
    angle_deg: float = 0.0,
) -> np.ndarray:
    """Rotate about the image center then shift, bilinear, nearest-edge fill.

    ``shift_rows``/``shift_cols`` are in pixels; positive shifts move content
    down/right. Exposed regions replicate the nearest edge value.
    """
    if arr.ndim != 2:
        raise ValueError(f"expected 2-D array, got shape {arr.shape}")
    if shift_rows == 0.0 and shift_cols == 0.0 and angle_deg == 0.0:
        return arr.copy()
    arr = np.asarray(arr, dtype=np.float64)
    theta = np.deg2rad(angle_deg)
    c, s = np.cos(theta), np.sin(theta)
    # affine_transform samples input at (matrix @ out + offset); the forward
    # transform is rotate-about-center then shift, so the inverse map is
    # R^-1 @ (out - center - t) + center.
    rot_inv = np.array([[c, s], [-s, c]])
    center = (np.asarray(arr.shape) - 1) / 2.0
    offset = center - rot_inv @ center - rot_inv @ np.array([shift_rows, shift_cols])
    return ndimage.affine_transform(arr, rot_inv, offset=offset, order=1, mode="nearest")


def quantize_u8(arr01: np.ndarray) -> np.ndarray:
    """[0,1] float to uint8 with round-half-up."""
    return np.floor(np.clip(arr01, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def quantize_u16(arr01: np.ndarray) -> np.ndarray:
    """[0,1] float to uint16 with round-half-up."""
    return np.floor(np.clip(arr01, 0.0, 1.0) * 65535.0 + 0.5).astype(np.uint16)


def write_png_gray8(path, arr01: np.ndarray) -> None:
    Image.fromarray(quantize_u8(arr01), mode="L").save(path)


def write_png_gray16(path, arr01: np.ndarray) -> None:
    Image.fromarray(quantize_u16(arr01)).save(path)


def write_png_rgb8(path, rgb01: np.ndarray) -> None:
    if rgb01.ndim != 3 or rgb01.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) array, got shape {rgb01.shape}")
    Image.fromarray(quantize_u8(rgb01), mode="RGB").save(path)


def read_png_gray(path) -> np.ndarray:
    """Read an 8- or 16-bit grayscale PNG to float [0,1]."""
    img = Image.open(path)
    if img.mode in ("I;16", "I;16B", "I"):
        raw = np.asarray(img, dtype=np.float64)
        return raw / 65535.0
    if img.mode != "L":
        img = img.convert("L")
    return np.asarray(img, dtype=np.float64) / 255.0


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_array(arr: np.ndarray) -> str:
    arr = np.ascontiguousarray(arr)
    h = hashlib.sha256()
    h.update(str(arr.dtype).encode())
    h.update(str(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
