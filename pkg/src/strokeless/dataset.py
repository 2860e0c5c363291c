"""Paired-sample datasets: synthetic generation with exact stroke ground
truth, construction from raw image pairs, disk layout, and batching.

Disk layout is fixed: `text/`, `clean/`, `region_masks/`, `stroke_masks/`,
`polygons/` with shared basenames, plus `manifest.json` holding
`{version, samples: [{id, split}], tau, seed}`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy import ndimage

from .core import (
    DEFAULT_STROKE_TAU,
    binarize_stroke_diff,
    load_image_png,
    load_mask_png,
    load_polygons_json,
    rasterize_polygons,
    save_image_png,
    save_mask_png,
    save_polygons_json,
)
from .errors import DatasetBuildError

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SUBDIRS = ("text", "clean", "region_masks", "stroke_masks", "polygons")


@dataclass
class Sample:
    """One paired training example.

    `image` and `clean` are H x W x 3 in [-1, 1]; `region` and `strokes` are
    binary H x W masks.  `polygons` carries the per-string region outlines
    when known.
    """

    id: str
    image: np.ndarray
    clean: np.ndarray
    region: np.ndarray
    strokes: np.ndarray
    polygons: list[list[list[float]]] | None = None


def validate_sample(sample: Sample) -> None:
    h, w = sample.image.shape[:2]
    if sample.image.shape != (h, w, 3) or sample.clean.shape != (h, w, 3):
        raise ValueError(f"{sample.id}: image/clean must both be {h}x{w}x3")
    if sample.region.shape != (h, w) or sample.strokes.shape != (h, w):
        raise ValueError(f"{sample.id}: masks must be {h}x{w}")
    for name, m in (("region", sample.region), ("strokes", sample.strokes)):
        if not np.isin(m, (0.0, 1.0)).all():
            raise ValueError(f"{sample.id}: {name} mask must be binary")
    if np.any(sample.strokes > sample.region):
        raise ValueError(f"{sample.id}: stroke pixels outside the region mask")


# ---------------------------------------------------------------------------
# synthetic generation

# Each glyph is a list of line segments (x1, y1, x2, y2) in a unit box,
# y pointing down.  Shapes only need to be distinct and pixel-exact.
_GLYPHS: dict[str, tuple[tuple[float, float, float, float], ...]] = {
    "A": ((0, 1, 0.5, 0), (0.5, 0, 1, 1), (0.2, 0.6, 0.8, 0.6)),
    "B": ((0, 0, 0, 1), (0, 0, 0.7, 0.25), (0.7, 0.25, 0, 0.5),
          (0, 0.5, 0.7, 0.75), (0.7, 0.75, 0, 1)),
    "C": ((1, 0.15, 0.5, 0), (0.5, 0, 0, 0.3), (0, 0.3, 0, 0.7),
          (0, 0.7, 0.5, 1), (0.5, 1, 1, 0.85)),
    "D": ((0, 0, 0, 1), (0, 0, 0.6, 0.1), (0.6, 0.1, 1, 0.5),
          (1, 0.5, 0.6, 0.9), (0.6, 0.9, 0, 1)),
    "E": ((0, 0, 0, 1), (0, 0, 1, 0), (0, 0.5, 0.8, 0.5), (0, 1, 1, 1)),
    "F": ((0, 0, 0, 1), (0, 0, 1, 0), (0, 0.5, 0.8, 0.5)),
    "G": ((1, 0.15, 0.5, 0), (0.5, 0, 0, 0.3), (0, 0.3, 0, 0.7),
          (0, 0.7, 0.5, 1), (0.5, 1, 1, 0.85), (1, 0.85, 1, 0.55),
          (1, 0.55, 0.55, 0.55)),
    "H": ((0, 0, 0, 1), (1, 0, 1, 1), (0, 0.5, 1, 0.5)),
    "I": ((0.5, 0, 0.5, 1), (0.2, 0, 0.8, 0), (0.2, 1, 0.8, 1)),
    "J": ((0.8, 0, 0.8, 0.8), (0.8, 0.8, 0.5, 1), (0.5, 1, 0.1, 0.9)),
    "K": ((0, 0, 0, 1), (1, 0, 0, 0.5), (0, 0.5, 1, 1)),
    "L": ((0, 0, 0, 1), (0, 1, 1, 1)),
    "M": ((0, 1, 0, 0), (0, 0, 0.5, 0.5), (0.5, 0.5, 1, 0), (1, 0, 1, 1)),
    "N": ((0, 1, 0, 0), (0, 0, 1, 1), (1, 1, 1, 0)),
    "O": ((0, 0.2, 0, 0.8), (0, 0.8, 0.5, 1), (0.5, 1, 1, 0.8),
          (1, 0.8, 1, 0.2), (1, 0.2, 0.5, 0), (0.5, 0, 0, 0.2)),
    "P": ((0, 0, 0, 1), (0, 0, 0.9, 0.2), (0.9, 0.2, 0, 0.45)),
    "Q": ((0, 0.2, 0, 0.8), (0, 0.8, 0.5, 1), (0.5, 1, 1, 0.8),
          (1, 0.8, 1, 0.2), (1, 0.2, 0.5, 0), (0.5, 0, 0, 0.2),
          (0.6, 0.7, 1, 1)),
    "R": ((0, 0, 0, 1), (0, 0, 0.9, 0.2), (0.9, 0.2, 0, 0.45),
          (0.2, 0.45, 1, 1)),
    "S": ((1, 0.1, 0.3, 0), (0.3, 0, 0, 0.25), (0, 0.25, 1, 0.7),
          (1, 0.7, 0.6, 1), (0.6, 1, 0, 0.9)),
    "T": ((0.5, 0, 0.5, 1), (0, 0, 1, 0)),
    "U": ((0, 0, 0, 0.8), (0, 0.8, 0.5, 1), (0.5, 1, 1, 0.8), (1, 0.8, 1, 0)),
    "V": ((0, 0, 0.5, 1), (0.5, 1, 1, 0)),
    "W": ((0, 0, 0.25, 1), (0.25, 1, 0.5, 0.4), (0.5, 0.4, 0.75, 1),
          (0.75, 1, 1, 0)),
    "X": ((0, 0, 1, 1), (1, 0, 0, 1)),
    "Y": ((0, 0, 0.5, 0.5), (1, 0, 0.5, 0.5), (0.5, 0.5, 0.5, 1)),
    "Z": ((0, 0, 1, 0), (1, 0, 0, 1), (0, 1, 1, 1)),
    "0": ((0, 0.2, 0, 0.8), (0, 0.8, 0.5, 1), (0.5, 1, 1, 0.8),
          (1, 0.8, 1, 0.2), (1, 0.2, 0.5, 0), (0.5, 0, 0, 0.2),
          (0.3, 0.8, 0.7, 0.2)),
    "1": ((0.5, 0, 0.5, 1), (0.3, 0.2, 0.5, 0), (0.25, 1, 0.75, 1)),
    "2": ((0, 0.2, 0.4, 0), (0.4, 0, 1, 0.2), (1, 0.2, 0, 1), (0, 1, 1, 1)),
    "3": ((0, 0, 1, 0), (1, 0, 0.4, 0.45), (0.4, 0.45, 1, 0.7),
          (1, 0.7, 0.5, 1), (0.5, 1, 0, 0.85)),
    "4": ((0.7, 1, 0.7, 0), (0.7, 0, 0, 0.7), (0, 0.7, 1, 0.7)),
    "5": ((1, 0, 0, 0), (0, 0, 0, 0.45), (0, 0.45, 0.8, 0.5),
          (0.8, 0.5, 0.9, 0.8), (0.9, 0.8, 0.4, 1), (0.4, 1, 0, 0.9)),
    "6": ((0.8, 0, 0.2, 0.4), (0.2, 0.4, 0, 0.75), (0, 0.75, 0.4, 1),
          (0.4, 1, 0.9, 0.8), (0.9, 0.8, 0.75, 0.5), (0.75, 0.5, 0.1, 0.55)),
    "7": ((0, 0, 1, 0), (1, 0, 0.3, 1)),
    "8": ((0.5, 0, 0.2, 0.25), (0.2, 0.25, 0.5, 0.5), (0.5, 0.5, 0.8, 0.25),
          (0.8, 0.25, 0.5, 0), (0.5, 0.5, 0.1, 0.75), (0.1, 0.75, 0.5, 1),
          (0.5, 1, 0.9, 0.75), (0.9, 0.75, 0.5, 0.5)),
    "9": ((0.2, 1, 0.8, 0.6), (0.8, 0.6, 1, 0.25), (1, 0.25, 0.6, 0),
          (0.6, 0, 0.1, 0.2), (0.1, 0.2, 0.25, 0.5), (0.25, 0.5, 0.9, 0.45)),
}


@dataclass
class SynthSpec:
    """Knobs for the synthetic paired-data generator."""

    count: int
    size: int = 256
    seed: int = 42
    glyphs: str = "".join(sorted(_GLYPHS))
    glyph_height: tuple[int, int] = (12, 28)
    background_range: tuple[float, float] = (0.3, 0.7)
    max_strings: int = 4

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.size % 64:
            raise ValueError("size must be divisible by 64")
        if not self.glyphs or any(c not in _GLYPHS for c in self.glyphs):
            raise ValueError("glyphs must be a non-empty subset of " + "".join(sorted(_GLYPHS)))
        lo, hi = self.background_range
        if not (0.0 <= lo < hi <= 1.0):
            raise ValueError("background_range must be an increasing pair inside [0, 1]")


def _quantize_unit(u: np.ndarray | float) -> np.ndarray | float:
    """Snap [0,1] values to the 8-bit grid so PNG round trips are exact."""
    return np.round(np.asarray(u) * 255.0) / 255.0


def _unit_to_internal(u: np.ndarray) -> np.ndarray:
    """[0,1] grid values -> [-1,1] float32, bit-identical to load_image_png."""
    u8 = np.rint(np.asarray(u) * 255.0).astype(np.float32)
    return u8 / 127.5 - 1.0


def _render_glyph(char: str, height: int, thickness: float) -> np.ndarray:
    """Boolean pixel coverage for one glyph: centers within thickness/2 of
    any of its segments."""
    width = max(3, round(0.65 * height))
    margin = thickness / 2.0 + 1.0
    xs = np.arange(width) + 0.5
    ys = np.arange(height) + 0.5
    cx, cy = np.meshgrid(xs, ys)
    covered = np.zeros((height, width), dtype=bool)
    sx = lambda x: margin + x * (width - 2.0 * margin)
    sy = lambda y: margin + y * (height - 2.0 * margin)
    for x1, y1, x2, y2 in _GLYPHS[char]:
        ax, ay, bx, by = sx(x1), sy(y1), sx(x2), sy(y2)
        dx, dy = bx - ax, by - ay
        norm2 = dx * dx + dy * dy
        if norm2 == 0:
            dist = np.hypot(cx - ax, cy - ay)
        else:
            t = np.clip(((cx - ax) * dx + (cy - ay) * dy) / norm2, 0.0, 1.0)
            dist = np.hypot(cx - (ax + t * dx), cy - (ay + t * dy))
        covered |= dist < thickness / 2.0
    return covered


def _render_string(chars: str, height: int, thickness: float) -> np.ndarray:
    spacing = max(2, round(0.2 * height))
    tiles = [_render_glyph(c, height, thickness) for c in chars]
    width = sum(t.shape[1] for t in tiles) + spacing * (len(tiles) - 1)
    out = np.zeros((height, width), dtype=bool)
    x = 0
    for t in tiles:
        out[:, x:x + t.shape[1]] |= t
        x += t.shape[1] + spacing
    return out


def _background(rng: np.random.Generator, size: int, lo: float, hi: float) -> np.ndarray:
    """Smooth gradient plus low-frequency noise, clipped to [lo, hi] and
    snapped to the 8-bit grid; H x W x 3 on the [0, 1] scale."""
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    base = rng.uniform(lo + 0.1, hi - 0.1, size=3)
    gx = rng.uniform(-0.2, 0.2, size=3)
    gy = rng.uniform(-0.2, 0.2, size=3)
    bg = base[None, None, :] + gx * xx[:, :, None] + gy * yy[:, :, None]
    coarse = rng.uniform(-0.12, 0.12, size=(5, 5, 3))
    bg = bg + ndimage.zoom(coarse, (size / 5, size / 5, 1), order=3)
    return _quantize_unit(np.clip(bg, lo, hi))


def synth_generate(spec: SynthSpec) -> list[Sample]:
    """Generate paired samples with exact ground truth.

    The text image equals the clean image everywhere except the stamped
    stroke pixels, whose contrast against the background exceeds twice the
    default binarization threshold in every channel.  The stroke mask is the
    exact stamp set; the region mask is the union of per-string bounding
    polygons (stamp bounding box expanded by 2 px, clamped to the canvas).
    """
    samples = []
    children = np.random.SeedSequence(spec.seed).spawn(spec.count)
    lo, hi = spec.background_range
    for idx in range(spec.count):
        rng = np.random.default_rng(children[idx])
        size = spec.size
        clean_unit = _background(rng, size, lo, hi)
        image_unit = clean_unit.copy()
        strokes = np.zeros((size, size), dtype=bool)
        polygons: list[list[list[float]]] = []
        margin = 3
        for _ in range(int(rng.integers(1, spec.max_strings + 1))):
            hmin, hmax = spec.glyph_height
            hmax = min(hmax, size // 3)
            height = int(rng.integers(hmin, max(hmin, hmax) + 1))
            thickness = max(1.6, 0.16 * height)
            advance = max(3, round(0.65 * height)) + max(2, round(0.2 * height))
            max_chars = max(1, (size - 2 * margin) // advance)
            n_chars = int(rng.integers(1, min(6, max_chars) + 1))
            text = "".join(rng.choice(list(spec.glyphs), size=n_chars))
            stamp = _render_string(text, height, thickness)
            sh, sw = stamp.shape
            if sw > size - 2 * margin or sh > size - 2 * margin or not stamp.any():
                continue
            y0 = int(rng.integers(margin, size - sh - margin + 1))
            x0 = int(rng.integers(margin, size - sw - margin + 1))
            if rng.random() < 0.5:
                color = float(_quantize_unit(rng.uniform(0.0, 0.05)))
            else:
                color = float(_quantize_unit(rng.uniform(0.95, 1.0)))
            image_unit[y0:y0 + sh, x0:x0 + sw][stamp] = color
            strokes[y0:y0 + sh, x0:x0 + sw] |= stamp
            ys, xs = np.nonzero(stamp)
            px0 = max(0.0, x0 + xs.min() - 2.0)
            py0 = max(0.0, y0 + ys.min() - 2.0)
            px1 = min(float(size), x0 + xs.max() + 3.0)
            py1 = min(float(size), y0 + ys.max() + 3.0)
            polygons.append([[px0, py0], [px1, py0], [px1, py1], [px0, py1]])
        region = rasterize_polygons(polygons, size, size)
        samples.append(Sample(
            id=f"synth_{idx:06d}",
            image=_unit_to_internal(image_unit),
            clean=_unit_to_internal(clean_unit),
            region=region,
            strokes=strokes.astype(np.float32),
            polygons=polygons,
        ))
    return samples


# ---------------------------------------------------------------------------
# disk layout

def write_dataset(
    samples: Sequence[Sample],
    root: Path | str,
    tau: float | None = None,
    seed: int | None = None,
) -> Path:
    """Write samples and a manifest under `root`; every sample starts in the
    train split (see `assign_splits`)."""
    root = Path(root)
    for sub in SUBDIRS:
        (root / sub).mkdir(parents=True, exist_ok=True)
    for s in samples:
        save_image_png(root / "text" / f"{s.id}.png", s.image)
        save_image_png(root / "clean" / f"{s.id}.png", s.clean)
        save_mask_png(root / "region_masks" / f"{s.id}.png", s.region)
        save_mask_png(root / "stroke_masks" / f"{s.id}.png", s.strokes)
        if s.polygons is not None:
            save_polygons_json(root / "polygons" / f"{s.id}.json", s.polygons)
    manifest = {
        "version": MANIFEST_VERSION,
        "samples": [{"id": s.id, "split": "train"} for s in samples],
        "tau": tau,
        "seed": seed,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return root


def load_manifest(root: Path | str) -> dict:
    path = Path(root) / "manifest.json"
    if not path.is_file():
        raise DatasetBuildError(f"missing manifest: {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("version") != MANIFEST_VERSION:
        raise DatasetBuildError(
            f"unsupported manifest version {manifest.get('version')!r} in {path}"
        )
    return manifest


def load_sample(root: Path | str, sample_id: str) -> Sample:
    root = Path(root)
    try:
        image = load_image_png(root / "text" / f"{sample_id}.png")
        clean = load_image_png(root / "clean" / f"{sample_id}.png")
        region = load_mask_png(root / "region_masks" / f"{sample_id}.png")
        strokes = load_mask_png(root / "stroke_masks" / f"{sample_id}.png")
    except Exception as exc:
        raise DatasetBuildError(f"failed to load sample {sample_id!r}: {exc}") from exc
    poly_path = root / "polygons" / f"{sample_id}.json"
    polygons = load_polygons_json(poly_path) if poly_path.is_file() else None
    return Sample(sample_id, image, clean, region, strokes, polygons)


def load_dataset(root: Path | str, split: str | None = None) -> list[Sample]:
    manifest = load_manifest(root)
    entries = manifest["samples"]
    if split is not None:
        entries = [e for e in entries if e["split"] == split]
    return [load_sample(root, e["id"]) for e in entries]


def assign_splits(root: Path | str, train_frac: float, seed: int) -> dict:
    """Reassign train/test splits in place, keeping manifest order."""
    if not (0.0 <= train_frac <= 1.0):
        raise ValueError("train_frac must be in [0, 1]")
    root = Path(root)
    manifest = load_manifest(root)
    ids = [e["id"] for e in manifest["samples"]]
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = int(round(train_frac * len(ids)))
    train_ids = {ids[i] for i in order[:n_train]}
    for e in manifest["samples"]:
        e["split"] = "train" if e["id"] in train_ids else "test"
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


# ---------------------------------------------------------------------------
# pair-based construction

def build_from_pairs(pairs_dir: Path | str, tau: float = DEFAULT_STROKE_TAU) -> list[dict]:
    """Derive stroke masks from aligned text/clean pairs.

    Expects `text/`, `clean/`, `region_masks/` PNGs with matching basenames;
    writes `stroke_masks/` and `manifest.json` into the same directory.
    Stroke pixels falling outside the region mask are clipped and logged.
    Returns per-sample records with stroke and clipped pixel counts.
    """
    root = Path(pairs_dir)
    stems = {}
    for sub in ("text", "clean", "region_masks"):
        d = root / sub
        if not d.is_dir():
            raise DatasetBuildError(f"missing directory: {d}")
        stems[sub] = {p.stem for p in d.glob("*.png")}
    all_ids = sorted(set().union(*stems.values()))
    orphans = [
        f"{sid} (missing {', '.join(sub for sub in stems if sid not in stems[sub])})"
        for sid in all_ids
        if any(sid not in stems[sub] for sub in stems)
    ]
    if orphans:
        raise DatasetBuildError("unpaired files: " + "; ".join(orphans))
    if not all_ids:
        raise DatasetBuildError(f"no samples found under {root}")

    (root / "stroke_masks").mkdir(exist_ok=True)
    records = []
    for sid in all_ids:
        image = load_image_png(root / "text" / f"{sid}.png")
        clean = load_image_png(root / "clean" / f"{sid}.png")
        region = load_mask_png(root / "region_masks" / f"{sid}.png")
        if clean.shape != image.shape or region.shape != image.shape[:2]:
            raise DatasetBuildError(
                f"{sid}: sizes disagree (text {image.shape[:2]}, "
                f"clean {clean.shape[:2]}, region {region.shape})"
            )
        strokes = binarize_stroke_diff(image, clean, tau)
        clipped = int(np.count_nonzero(strokes * (1.0 - region)))
        if clipped:
            log.warning("%s: clipped %d stroke pixels outside the region mask", sid, clipped)
            strokes = strokes * region
        n_stroke = int(np.count_nonzero(strokes))
        if n_stroke == 0:
            log.warning("%s: text and clean images are identical under tau=%g", sid, tau)
        save_mask_png(root / "stroke_masks" / f"{sid}.png", strokes)
        records.append({"id": sid, "stroke_pixels": n_stroke, "clipped_pixels": clipped})

    manifest = {
        "version": MANIFEST_VERSION,
        "samples": [{"id": sid, "split": "train"} for sid in all_ids],
        "tau": tau,
        "seed": None,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return records


# ---------------------------------------------------------------------------
# batching

def load_batches(
    samples: Sequence[Sample],
    batch_size: int,
    shuffle_seed: int | None = None,
    training: bool = True,
) -> Iterator[list[Sample]]:
    """Yield batches of samples; shuffled when a seed is given.  The last
    partial batch is dropped in training mode and kept in eval mode."""
    if not samples:
        raise ValueError("dataset is empty")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(samples))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(samples))
    end = len(samples) - (len(samples) % batch_size) if training else len(samples)
    for start in range(0, end, batch_size):
        chunk = order[start:start + batch_size]
        yield [samples[i] for i in chunk]
