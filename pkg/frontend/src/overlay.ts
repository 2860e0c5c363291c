/**
 * Stroke-mask overlay blending on raw RGBA buffers. Kept free of canvas
 * types so the arithmetic is testable under node; main.ts feeds it
 * ImageData buffers.
 */

export interface Rgb {
  r: number;
  g: number;
  b: number;
}

export const OVERLAY_COLOR: Rgb = { r: 255, g: 64, b: 64 };

/**
 * Alpha-blend a single-channel mask over an RGBA image.
 *
 * Each pixel moves toward `color` by `opacity * mask/255`. A zero opacity or
 * an all-zero mask leaves the input bytes untouched, so toggling the overlay
 * off never reencodes the view.
 */
export function blendOverlay(
  base: Uint8ClampedArray,
  mask: Uint8ClampedArray,
  width: number,
  height: number,
  opacity: number,
  color: Rgb = OVERLAY_COLOR,
): Uint8ClampedArray {
  if (base.length !== width * height * 4) {
    throw new Error(`image buffer is ${base.length} bytes, expected ${width * height * 4}`);
  }
  if (mask.length !== width * height) {
    throw new Error(`mask buffer is ${mask.length} bytes, expected ${width * height}`);
  }
  const out = new Uint8ClampedArray(base);
  if (opacity <= 0) return out;
  for (let i = 0; i < width * height; i++) {
    const a = (opacity * mask[i]) / 255;
    if (a === 0) continue;
    const o = i * 4;
    out[o] = Math.round(base[o] * (1 - a) + color.r * a);
    out[o + 1] = Math.round(base[o + 1] * (1 - a) + color.g * a);
    out[o + 2] = Math.round(base[o + 2] * (1 - a) + color.b * a);
  }
  return out;
}
