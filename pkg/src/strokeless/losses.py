"""Training objectives: stroke L1, weighted removal L1, and the mask-weighted
hinge adversarial pair.

Every expectation is the arithmetic mean over batch, spatial positions and
channels.  Image terms are computed on the internal [-1, 1] range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Sequence

import torch
import torch.nn.functional as F


@dataclass(frozen=True)
class LossHyperParams:
    """Multipliers for the generator objective.

    `stroke_refine_weight` and `removal_refine_weight` scale the L1 terms of
    the final cascade unit; earlier units enter with weight 1.  The region
    and stroke weights build the removal weight matrix (1 + rw*m + sw*ms).
    """

    stroke_refine_weight: float = 10.0
    region_weight: float = 5.0
    stroke_weight: float = 5.0
    removal_refine_weight: float = 10.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (value >= 0):
                raise ValueError(f"{name} must be >= 0, got {value}")


@dataclass
class LossBreakdown:
    """Scalar loss components of one training step.

    l_tsd: stroke-detection L1 total
    l_trg: weighted removal L1 total
    l_g_sn: generator hinge term
    l_d_sn: discriminator hinge total
    l_g_total: l_tsd + l_trg + l_g_sn
    """

    l_tsd: float
    l_trg: float
    l_g_sn: float
    l_d_sn: float
    l_g_total: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape {tuple(a.shape)} does not match {tuple(b.shape)}")


def stroke_loss(
    stroke_maps: Sequence[torch.Tensor],
    target: torch.Tensor,
    refine_weight: float = 10.0,
) -> torch.Tensor:
    """L1 between predicted stroke maps and the binary target.

    The final map's term is scaled by `refine_weight`; any earlier maps enter
    with weight 1.
    """
    if not stroke_maps:
        raise ValueError("stroke_maps must be non-empty")
    total = None
    last = len(stroke_maps) - 1
    for i, pred in enumerate(stroke_maps):
        _check_same_shape(pred, target, "stroke_loss")
        term = (pred - target).abs().mean()
        if i == last:
            term = refine_weight * term
        total = term if total is None else total + term
    return total


def removal_loss(
    erased: Sequence[torch.Tensor],
    target: torch.Tensor,
    weight_matrices: Sequence[torch.Tensor],
    refine_weight: float = 10.0,
) -> torch.Tensor:
    """Weighted L1 between erased images and the clean target.

    Each stage i contributes mean(w_i * |erased_i - target|) with its own
    weight matrix (broadcast over channels); the final stage is scaled by
    `refine_weight`, earlier stages by 1.
    """
    if not erased:
        raise ValueError("erased must be non-empty")
    if len(erased) != len(weight_matrices):
        raise ValueError("one weight matrix per erased image required")
    total = None
    last = len(erased) - 1
    for i, (pred, w) in enumerate(zip(erased, weight_matrices)):
        _check_same_shape(pred, target, "removal_loss")
        if w.shape[-2:] != pred.shape[-2:]:
            raise ValueError(
                f"removal_loss: weight matrix {tuple(w.shape)} does not "
                f"broadcast against {tuple(pred.shape)}"
            )
        term = (w * (pred - target).abs()).mean()
        if i == last:
            term = refine_weight * term
        total = term if total is None else total + term
    return total


def gen_adv_loss(d_scores: torch.Tensor, dm_weights: torch.Tensor) -> torch.Tensor:
    """Generator hinge term: -mean(dm * d); dm broadcasts over score channels."""
    if dm_weights.shape[-2:] != d_scores.shape[-2:]:
        raise ValueError(
            f"gen_adv_loss: weight map {tuple(dm_weights.shape)} does not "
            f"match scores {tuple(d_scores.shape)}"
        )
    return -(dm_weights * d_scores).mean()


def disc_loss(
    d_real: torch.Tensor,
    d_fake: torch.Tensor,
    dm_weights: torch.Tensor,
) -> torch.Tensor:
    """Discriminator hinge: mean(relu(1 - dm*d_real)) + mean(relu(1 + dm*d_fake))."""
    _check_same_shape(d_real, d_fake, "disc_loss")
    if dm_weights.shape[-2:] != d_real.shape[-2:]:
        raise ValueError(
            f"disc_loss: weight map {tuple(dm_weights.shape)} does not "
            f"match scores {tuple(d_real.shape)}"
        )
    return (
        F.relu(1.0 - dm_weights * d_real).mean()
        + F.relu(1.0 + dm_weights * d_fake).mean()
    )


def _as_float(value, name: str) -> float:
    if isinstance(value, torch.Tensor):
        value = value.detach()
    out = float(value)
    if not math.isfinite(out):
        raise ValueError(f"loss component {name} is not finite: {out}")
    return out


def total_generator_loss(l_tsd, l_trg, l_g_sn, l_d_sn) -> LossBreakdown:
    """Combine per-part scalars into a validated breakdown.

    Accepts floats or 0-dim tensors; any non-finite part raises a ValueError
    naming it.
    """
    tsd = _as_float(l_tsd, "l_tsd")
    trg = _as_float(l_trg, "l_trg")
    g_sn = _as_float(l_g_sn, "l_g_sn")
    d_sn = _as_float(l_d_sn, "l_d_sn")
    return LossBreakdown(
        l_tsd=tsd,
        l_trg=trg,
        l_g_sn=g_sn,
        l_d_sn=d_sn,
        l_g_total=tsd + trg + g_sn,
    )
