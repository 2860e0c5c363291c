/**
 * Canvas <-> image coordinate mapping.
 *
 * The canvas shows the image scaled by `scale` and shifted by an offset in
 * canvas pixels. All polygon coordinates handed to the service must be in
 * original-image pixel space, so every pointer event goes through
 * canvasToImage before it touches the session.
 */

export interface Point {
  x: number;
  y: number;
}

export interface ViewTransform {
  scale: number;
  offsetX: number;
  offsetY: number;
}

export const IDENTITY: ViewTransform = { scale: 1, offsetX: 0, offsetY: 0 };

export function imageToCanvas(t: ViewTransform, p: Point): Point {
  return { x: p.x * t.scale + t.offsetX, y: p.y * t.scale + t.offsetY };
}

export function canvasToImage(t: ViewTransform, p: Point): Point {
  return { x: (p.x - t.offsetX) / t.scale, y: (p.y - t.offsetY) / t.scale };
}

/** Scale about a fixed canvas point, so the pixel under the cursor stays put. */
export function zoomAt(t: ViewTransform, factor: number, pivot: Point): ViewTransform {
  const scale = clampScale(t.scale * factor);
  const applied = scale / t.scale;
  return {
    scale,
    offsetX: pivot.x - (pivot.x - t.offsetX) * applied,
    offsetY: pivot.y - (pivot.y - t.offsetY) * applied,
  };
}

export function panBy(t: ViewTransform, dx: number, dy: number): ViewTransform {
  return { ...t, offsetX: t.offsetX + dx, offsetY: t.offsetY + dy };
}

/** Center the image in the canvas at the largest scale that fits. */
export function fitImage(
  canvasWidth: number,
  canvasHeight: number,
  imageWidth: number,
  imageHeight: number,
): ViewTransform {
  const scale = clampScale(
    Math.min(canvasWidth / imageWidth, canvasHeight / imageHeight),
  );
  return {
    scale,
    offsetX: (canvasWidth - imageWidth * scale) / 2,
    offsetY: (canvasHeight - imageHeight * scale) / 2,
  };
}

function clampScale(scale: number): number {
  return Math.min(64, Math.max(1 / 64, scale));
}
