/**
 * Pure pixel compositing: jet-colorized candidate mask over the radiograph.
 *
 * Kept free of canvas so the math is testable byte-for-byte; the app feeds
 * the result into putImageData when a 2D context exists.
 */

import { jetColor } from "./jet.js";
import type { RasterImage } from "./types.js";

export function cloneRaster(img: RasterImage): RasterImage {
  return { width: img.width, height: img.height, data: new Uint8ClampedArray(img.data) };
}

/**
 * Alpha-composite a grayscale probability mask over a base image.
 *
 * Mask probability is the mask's red channel / 255. Pixels with zero
 * probability are untouched; opacity 0 returns a byte-identical copy of the
 * base (compositing identity).
 */
export function compositeOverlay(
  base: RasterImage,
  mask: RasterImage,
  opacity: number,
): RasterImage {
  if (mask.width !== base.width || mask.height !== base.height) {
    throw new Error(
      `mask ${mask.width}x${mask.height} does not match image ${base.width}x${base.height}`,
    );
  }
  if (opacity < 0 || opacity > 1) {
    throw new Error(`opacity must be in [0,1], got ${opacity}`);
  }
  const out = cloneRaster(base);
  if (opacity === 0) {
    return out;
  }
  const n = base.width * base.height;
  for (let i = 0; i < n; i++) {
    const p = mask.data[i * 4] / 255;
    if (p <= 0) continue;
    const [r, g, b] = jetColor(p);
    const a = opacity;
    out.data[i * 4] = Math.round((1 - a) * base.data[i * 4] + a * r * 255);
    out.data[i * 4 + 1] = Math.round((1 - a) * base.data[i * 4 + 1] + a * g * 255);
    out.data[i * 4 + 2] = Math.round((1 - a) * base.data[i * 4 + 2] + a * b * 255);
    out.data[i * 4 + 3] = 255;
  }
  return out;
}

/** Grayscale byte array (one byte per pixel) to an RGBA raster. */
export function grayToRaster(gray: Uint8ClampedArray, width: number, height: number): RasterImage {
  const data = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < width * height; i++) {
    data[i * 4] = gray[i];
    data[i * 4 + 1] = gray[i];
    data[i * 4 + 2] = gray[i];
    data[i * 4 + 3] = 255;
  }
  return { width, height, data };
}
