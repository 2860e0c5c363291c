"""Shared data model and pure mask/image arithmetic.

Images are H x W x 3 float32 arrays on the internal [-1, 1] range; region and
stroke masks are H x W float32 arrays on [0, 1].  Thresholds and metrics that
speak about pixel differences use the [0, 1] scale (an explicit /2 converts
from the internal range).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

# Stroke binarization threshold: 25/255 on the [0,1] pixel scale.
DEFAULT_STROKE_TAU = 25.0 / 255.0


def validate_image(image: np.ndarray, *, stride: int | None = None) -> np.ndarray:
    """Check an image array against the internal contract (HxWx3, finite, [-1,1])."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"image must be HxWx3, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("image contains non-finite values")
    if arr.min() < -1.0 - 1e-6 or arr.max() > 1.0 + 1e-6:
        raise ValueError("image values must lie in [-1, 1]")
    if stride is not None:
        require_stride_multiple(arr.shape[0], arr.shape[1], stride)
    return arr


def validate_mask(mask: np.ndarray, *, binary: bool = False) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"mask must be HxW, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("mask contains non-finite values")
    if arr.min() < -1e-6 or arr.max() > 1.0 + 1e-6:
        raise ValueError("mask values must lie in [0, 1]")
    if binary and not np.isin(arr, (0.0, 1.0)).all():
        raise ValueError("mask must be binary (every element exactly 0 or 1)")
    return arr


def validate_polygon(polygon, width: int, height: int) -> np.ndarray:
    """Check one polygon: >= 3 finite vertices inside [0, W] x [0, H]."""
    v = np.asarray(polygon, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
        raise ValueError("polygon needs at least 3 (x, y) vertices")
    if not np.isfinite(v).all():
        raise ValueError("polygon vertices must be finite")
    if (v[:, 0] < 0).any() or (v[:, 0] > width).any() or (v[:, 1] < 0).any() or (v[:, 1] > height).any():
        raise ValueError(f"polygon vertices must lie inside [0, {width}] x [0, {height}]")
    return v


def require_stride_multiple(height: int, width: int, stride: int) -> None:
    if height % stride or width % stride:
        raise ValueError(f"spatial size {height}x{width} must be a multiple of {stride}")


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def compute_weight_matrix(
    region_mask: np.ndarray,
    stroke_mask: np.ndarray,
    region_weight: float = 5.0,
    stroke_weight: float = 5.0,
) -> np.ndarray:
    """Per-pixel loss weights: 1 + region_weight*M + stroke_weight*Ms.

    Every element is >= 1, and exactly 1 where both masks are 0.
    """
    m = np.asarray(region_mask, dtype=np.float32)
    ms = np.asarray(stroke_mask, dtype=np.float32)
    _check_same_shape(m, ms, "region/stroke masks")
    if region_weight < 0 or stroke_weight < 0:
        raise ValueError("mask weights must be >= 0")
    return (1.0 + region_weight * m + stroke_weight * ms).astype(np.float32)


def rasterize_polygons(polygons, height: int, width: int) -> np.ndarray:
    """Union fill of polygons: pixel is 1 iff its center (x+0.5, y+0.5) lies
    inside at least one polygon under the nonzero-winding rule."""
    if height <= 0 or width <= 0:
        raise ValueError("mask dimensions must be positive")
    mask = np.zeros((height, width), dtype=np.float32)
    for polygon in polygons:
        v = np.asarray(polygon, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ValueError("polygon needs at least 3 (x, y) vertices")
        if not np.isfinite(v).all():
            raise ValueError("polygon vertices must be finite")
        x0 = max(int(np.floor(v[:, 0].min())) - 1, 0)
        x1 = min(int(np.ceil(v[:, 0].max())) + 1, width - 1)
        y0 = max(int(np.floor(v[:, 1].min())) - 1, 0)
        y1 = min(int(np.ceil(v[:, 1].max())) + 1, height - 1)
        if x1 < x0 or y1 < y0:
            continue
        cx = (np.arange(x0, x1 + 1, dtype=np.float64) + 0.5)[None, :]
        cy = (np.arange(y0, y1 + 1, dtype=np.float64) + 0.5)[:, None]
        winding = np.zeros((y1 - y0 + 1, x1 - x0 + 1), dtype=np.int32)
        closed = np.vstack([v, v[:1]])
        for (ax, ay), (bx, by) in zip(closed[:-1], closed[1:]):
            # cross > 0 means the pixel center is left of the directed edge a->b
            cross = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay)
            winding += ((ay <= cy) & (by > cy) & (cross > 0)).astype(np.int32)
            winding -= ((by <= cy) & (ay > cy) & (cross < 0)).astype(np.int32)
        mask[y0 : y1 + 1, x0 : x1 + 1][winding != 0] = 1.0
    return mask


def binarize_stroke_diff(image: np.ndarray, clean: np.ndarray, tau: float = DEFAULT_STROKE_TAU) -> np.ndarray:
    """Ground-truth stroke mask from a text/clean pair.

    A pixel is marked iff the max-channel absolute difference, converted to
    the [0, 1] scale, strictly exceeds tau.
    """
    a = np.asarray(image, dtype=np.float64)
    b = np.asarray(clean, dtype=np.float64)
    _check_same_shape(a, b, "image pair")
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    diff = np.abs(a - b).max(axis=-1) / 2.0
    return (diff > tau).astype(np.float32)


def composite(image: np.ndarray, region_mask: np.ndarray, output: np.ndarray) -> np.ndarray:
    """Paste `output` inside the mask, keeping `image` untouched elsewhere."""
    a = np.asarray(image, dtype=np.float32)
    b = np.asarray(output, dtype=np.float32)
    m = np.asarray(region_mask, dtype=np.float32)
    _check_same_shape(a, b, "image/output")
    if m.shape != a.shape[:2]:
        raise ValueError(f"mask shape {m.shape} does not match image {a.shape[:2]}")
    m3 = m[..., None]
    return (a * (1.0 - m3) + b * m3).astype(np.float32)


# ---------------------------------------------------------------------------
# serialization: 8-bit PNGs for images/masks, JSON vertex lists for polygons

def load_image_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 127.5 - 1.0


def save_image_png(path, image: np.ndarray) -> None:
    arr = np.asarray(image, dtype=np.float64)
    u8 = np.clip(np.rint((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(path, format="PNG")


def load_mask_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float32)
    return arr / 255.0


def save_mask_png(path, mask: np.ndarray) -> None:
    arr = np.asarray(mask, dtype=np.float64)
    u8 = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8, mode="L").save(path, format="PNG")


def parse_polygons(obj) -> list[np.ndarray]:
    """Accept either one polygon ([[x,y],...]) or a list of polygons."""
    if not isinstance(obj, (list, tuple)) or len(obj) == 0:
        raise ValueError("polygon JSON must be a non-empty list")
    first = obj[0]
    if isinstance(first, (list, tuple)) and len(first) == 2 and isinstance(first[0], (int, float)):
        obj = [obj]
    return [np.asarray(p, dtype=np.float64) for p in obj]


def load_polygons_json(path) -> list[np.ndarray]:
    with open(path, "r", encoding="utf-8") as f:
        return parse_polygons(json.load(f))


def save_polygons_json(path, polygons) -> None:
    data = [np.asarray(p, dtype=np.float64).tolist() for p in polygons]
    Path(path).write_text(json.dumps(data), encoding="utf-8")
