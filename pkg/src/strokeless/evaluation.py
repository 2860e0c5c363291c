"""Quality metrics over erased images and stroke masks.

Images arrive on the internal [-1, 1] range; every metric is defined on the
[0, 1] scale after an explicit conversion.  Aggregation is per-sample then
mean.  Infinite PSNR samples (exact reconstructions) are counted separately
and excluded from the mean.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy import ndimage
from shapely.geometry import Polygon as ShapelyPolygon

from .core import composite as composite_images
from .dataset import Sample

DETECTION_PROTOCOL = "greedy one-to-one IoU matching at threshold 0.5"


def _check_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape {a.shape} does not match {b.shape}")


def mae(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute error as a percentage of the full [0, 1] range."""
    _check_shape(a, b, "mae")
    return float(np.mean(np.abs(a.astype(np.float64) - b.astype(np.float64)) / 2.0) * 100.0)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB on the [0, 1] scale; inf when equal."""
    _check_shape(a, b, "psnr")
    diff = (a.astype(np.float64) - b.astype(np.float64)) / 2.0
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(a: np.ndarray, b: np.ndarray, k1: float = 0.01, k2: float = 0.03) -> float:
    """Single-scale structural similarity.

    11x11 Gaussian window with sigma 1.5 on the [0, 1] scale, dynamic range 1;
    the map is averaged over valid window positions and channels.
    """
    _check_shape(a, b, "ssim")
    if min(a.shape[0], a.shape[1]) < 11:
        raise ValueError(f"ssim needs min(H, W) >= 11, got {a.shape[:2]}")
    x = (a.astype(np.float64) + 1.0) / 2.0
    y = (b.astype(np.float64) + 1.0) / 2.0
    if x.ndim == 2:
        x = x[:, :, None]
        y = y[:, :, None]
    window = _gaussian_window()
    c1 = k1 ** 2
    c2 = k2 ** 2
    margin = 5
    values = []
    for ch in range(x.shape[2]):
        xc, yc = x[:, :, ch], y[:, :, ch]
        filt = lambda im: ndimage.correlate(im, window, mode="constant")[
            margin:-margin, margin:-margin
        ]
        mu_x = filt(xc)
        mu_y = filt(yc)
        xx = filt(xc * xc) - mu_x * mu_x
        yy = filt(yc * yc) - mu_y * mu_y
        xy = filt(xc * yc) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)
        values.append(np.mean(num / den))
    return float(np.mean(values))


def tmae(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean absolute error between stroke masks, as a percentage."""
    _check_shape(pred, target, "tmae")
    return float(np.mean(np.abs(pred.astype(np.float64) - target.astype(np.float64))) * 100.0)


def stroke_iou(pred: np.ndarray, target: np.ndarray, threshold: float = 0.5) -> float:
    """Intersection over union of the thresholded stroke mask against the
    binary target; 1.0 when both are empty."""
    _check_shape(pred, target, "stroke_iou")
    p = pred > threshold
    t = target > 0.5
    union = np.count_nonzero(p | t)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(p & t) / union)


# ---------------------------------------------------------------------------
# detection metrics

def _to_shapely(box) -> ShapelyPolygon:
    flat = np.asarray(box, dtype=np.float64).reshape(-1)
    if flat.size == 4:
        x1, y1, x2, y2 = flat
        poly = ShapelyPolygon([(x1, y1), (x2, y1), (x2, y2), (x1, y2)])
    elif flat.size >= 6 and flat.size % 2 == 0:
        poly = ShapelyPolygon(flat.reshape(-1, 2))
    else:
        raise ValueError(f"box must have 4 or >=6 even coordinates, got {flat.size}")
    if not poly.is_valid:
        poly = poly.buffer(0)
    if poly.area <= 0:
        raise ValueError("box has non-positive area")
    return poly


def detection_metrics(pred: Sequence, gt: Sequence, iou_thresh: float = 0.5) -> dict[str, float]:
    """Greedy one-to-one IoU matching in descending IoU order.

    Returns recall, precision and f_measure in percent; precision is 0 when
    there are no predictions, and f_measure is 0 when both are 0.
    """
    pred_polys = [_to_shapely(b) for b in pred]
    gt_polys = [_to_shapely(b) for b in gt]
    candidates = []
    for i, p in enumerate(pred_polys):
        for j, g in enumerate(gt_polys):
            inter = p.intersection(g).area
            union = p.union(g).area
            iou = inter / union if union > 0 else 0.0
            if iou >= iou_thresh:
                candidates.append((iou, i, j))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    used_pred, used_gt = set(), set()
    matched = 0
    for _, i, j in candidates:
        if i in used_pred or j in used_gt:
            continue
        used_pred.add(i)
        used_gt.add(j)
        matched += 1
    recall = 100.0 * matched / len(gt_polys) if gt_polys else 0.0
    precision = 100.0 * matched / len(pred_polys) if pred_polys else 0.0
    f = 2.0 * recall * precision / (recall + precision) if recall + precision > 0 else 0.0
    return {"recall": recall, "precision": precision, "f_measure": f}


# ---------------------------------------------------------------------------
# dataset evaluation

class ForwardFn(Protocol):
    def __call__(self, sample: Sample) -> tuple[np.ndarray, np.ndarray | None]:
        """Return (erased H x W x 3 in [-1, 1], stroke map H x W in [0, 1] or None)."""


@dataclass
class EvalReport:
    mae: float
    psnr: float
    ssim: float
    tmae: float | None
    n_samples: int
    psnr_inf_count: int = 0
    detection: dict[str, float] | None = None
    detection_protocol: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        data = self.to_dict()
        # keep the document valid JSON: infinite psnr serializes as "inf"
        if isinstance(data["psnr"], float) and math.isinf(data["psnr"]):
            data["psnr"] = "inf"
        return json.dumps(data, indent=2, allow_nan=False)

    def format_table(self) -> str:
        rows = [
            ("samples", str(self.n_samples)),
            ("mae %", f"{self.mae:.4f}"),
            ("psnr dB", "inf" if math.isinf(self.psnr) else f"{self.psnr:.4f}"),
            ("ssim", f"{self.ssim:.6f}"),
        ]
        if self.psnr_inf_count:
            rows.append(("psnr inf samples", str(self.psnr_inf_count)))
        if self.tmae is not None:
            rows.append(("tmae %", f"{self.tmae:.4f}"))
        if self.detection is not None:
            rows.append(("detection protocol", self.detection_protocol or ""))
            for k in ("recall", "precision", "f_measure"):
                rows.append((f"detection {k} %", f"{self.detection[k]:.2f}"))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def evaluate(
    forward_fn: ForwardFn,
    samples: Sequence[Sample],
    composite: bool = False,
    detections: dict[str, list] | None = None,
    iou_thresh: float = 0.5,
) -> EvalReport:
    """Run the model over every sample and aggregate per-sample metrics.

    Metrics compare the raw network output against the clean image unless
    `composite` pastes the output back inside the region mask first.  When a
    detections mapping (image id -> box list) is given, per-sample detection
    metrics against the sample polygons are averaged over samples that have
    ground-truth polygons.
    """
    if not samples:
        raise ValueError("dataset is empty")
    maes, psnrs, ssims, tmaes = [], [], [], []
    inf_count = 0
    det_scores: list[dict[str, float]] = []
    for sample in samples:
        erased, stroke = forward_fn(sample)
        if composite:
            erased = composite_images(sample.image, sample.region, erased)
        maes.append(mae(erased, sample.clean))
        p = psnr(erased, sample.clean)
        if math.isinf(p):
            inf_count += 1
        else:
            psnrs.append(p)
        ssims.append(ssim(erased, sample.clean))
        if stroke is not None:
            tmaes.append(tmae(stroke, sample.strokes))
        if detections is not None and sample.polygons:
            pred = detections.get(sample.id, [])
            det_scores.append(detection_metrics(pred, sample.polygons, iou_thresh))
    if psnrs:
        psnr_mean = float(np.mean(psnrs))
    else:
        psnr_mean = math.inf
    detection = None
    if det_scores:
        detection = {
            k: float(np.mean([d[k] for d in det_scores]))
            for k in ("recall", "precision", "f_measure")
        }
    return EvalReport(
        mae=float(np.mean(maes)),
        psnr=psnr_mean,
        ssim=float(np.mean(ssims)),
        tmae=float(np.mean(tmaes)) if tmaes else None,
        n_samples=len(samples),
        psnr_inf_count=inf_count,
        detection=detection,
        detection_protocol=DETECTION_PROTOCOL if detection is not None else None,
    )
