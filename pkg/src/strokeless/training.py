"""Adversarial training: alternating discriminator/generator updates,
ablation wiring, metrics logging, and raw-array checkpoints.

Randomness is fully derived: weights from `seed`, each epoch's shuffle from
`seed + epoch`.  The loop consumes no global RNG, so the checkpoint's RNG
record is just (seed, epoch, step).
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .dataset import Sample, load_batches
from .errors import CheckpointError, TrainingDivergedError
from .losses import (
    LossBreakdown,
    LossHyperParams,
    disc_loss,
    gen_adv_loss,
    removal_loss,
    stroke_loss,
    total_generator_loss,
)
from .networks import (
    CascadeConfig,
    DiscConfig,
    EraserCascade,
    PatchDiscriminator,
    build_cascade,
    build_discriminator,
    mask_patch_weights,
)

CHECKPOINT_FORMAT_VERSION = 1

# ablation name -> (stroke-detection subnet present, weighted discriminator,
# fixed unit count or None to honor cascade_units)
ABLATIONS = {
    "baseline": (False, False, 1),
    "wd": (False, True, 1),
    "tsdnet": (True, False, 1),
    "wd_tsdnet": (True, True, 1),
    "cascade": (True, True, None),
}


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 16
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    image_size: int = 256
    ablation: str = "cascade"
    cascade_units: int = 2
    seed: int = 42
    base_channels: int = 32
    levels: int = 5
    disc_base_channels: int = 64
    disc_layers: int = 6
    adversarial: bool = True
    loss: LossHyperParams = field(default_factory=LossHyperParams)

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must be in [0, 1)")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {sorted(ABLATIONS)}")
        if self.cascade_units not in (1, 2, 3):
            raise ValueError("cascade_units must be 1, 2, or 3")
        stride = max(2 ** self.levels, 2 ** self.disc_layers)
        if self.image_size % stride:
            raise ValueError(f"image_size must be divisible by {stride}")

    @property
    def use_stroke_net(self) -> bool:
        return ABLATIONS[self.ablation][0]

    @property
    def weighted_disc(self) -> bool:
        return ABLATIONS[self.ablation][1]

    @property
    def units(self) -> int:
        fixed = ABLATIONS[self.ablation][2]
        return self.cascade_units if fixed is None else fixed

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        data["loss"] = LossHyperParams(**data.get("loss", {}))
        return cls(**data)


@dataclass
class TrainState:
    step: int
    epoch: int
    config: TrainConfig
    cascade: EraserCascade
    disc: PatchDiscriminator
    gen_opt: torch.optim.Adam
    disc_opt: torch.optim.Adam


def init_state(cfg: TrainConfig) -> TrainState:
    cascade = build_cascade(
        CascadeConfig(
            units=cfg.units,
            use_stroke_net=cfg.use_stroke_net,
            base_channels=cfg.base_channels,
            levels=cfg.levels,
        ),
        seed=cfg.seed,
    )
    disc = build_discriminator(
        DiscConfig(in_channels=3, base_channels=cfg.disc_base_channels, layers=cfg.disc_layers),
        seed=cfg.seed,
    )
    betas = (cfg.beta1, cfg.beta2)
    return TrainState(
        step=0,
        epoch=0,
        config=cfg,
        cascade=cascade,
        disc=disc,
        gen_opt=torch.optim.Adam(cascade.parameters(), lr=cfg.lr, betas=betas),
        disc_opt=torch.optim.Adam(disc.parameters(), lr=cfg.lr, betas=betas),
    )


def batch_to_tensors(batch: Sequence[Sample], image_size: int) -> dict[str, torch.Tensor]:
    for s in batch:
        if s.image.shape[:2] != (image_size, image_size):
            raise ValueError(
                f"sample {s.id!r} is {s.image.shape[:2]}, config expects "
                f"{image_size}x{image_size}"
            )
    stack_img = lambda arrs: torch.from_numpy(
        np.stack([np.ascontiguousarray(a, dtype=np.float32) for a in arrs])
    ).permute(0, 3, 1, 2)
    stack_mask = lambda arrs: torch.from_numpy(
        np.stack([np.ascontiguousarray(a, dtype=np.float32) for a in arrs])
    )[:, None]
    return {
        "image": stack_img([s.image for s in batch]),
        "clean": stack_img([s.clean for s in batch]),
        "region": stack_mask([s.region for s in batch]),
        "strokes": stack_mask([s.strokes for s in batch]),
    }


def _patch_weight_map(region: torch.Tensor, cfg: TrainConfig) -> torch.Tensor:
    if cfg.weighted_disc:
        return mask_patch_weights(region, layers=cfg.disc_layers)
    n, _, h, w = region.shape
    scale = 2 ** cfg.disc_layers
    return torch.ones(n, 1, h // scale, w // scale, dtype=region.dtype)


def generator_objective(
    cascade: EraserCascade,
    disc: PatchDiscriminator,
    tensors: dict[str, torch.Tensor],
    cfg: TrainConfig,
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Full generator loss on one batch; returns (total, parts).

    Each unit's removal term is weighted by a matrix built from that unit's
    own predicted stroke map. The map enters the weighting detached:
    otherwise the detector is rewarded for suppressing its output (smaller
    weights mean smaller loss) and collapses to an all-zero map. Gradient
    still reaches the detectors through the stroke supervision and through
    the erase nets, which consume the maps as live inputs.
    """
    result = cascade(tensors["image"], tensors["region"])
    hp = cfg.loss
    zero = tensors["image"].new_zeros(())
    if result.stroke_maps:
        l_tsd = stroke_loss(result.stroke_maps, tensors["strokes"], hp.stroke_refine_weight)
    else:
        l_tsd = zero
    matrices = []
    for i in range(len(result.erased)):
        w = 1.0 + hp.region_weight * tensors["region"]
        if result.stroke_maps:
            w = w + hp.stroke_weight * result.stroke_maps[i].detach()
        matrices.append(w)
    l_trg = removal_loss(result.erased, tensors["clean"], matrices, hp.removal_refine_weight)
    if cfg.adversarial:
        dm = _patch_weight_map(tensors["region"], cfg)
        l_g_sn = gen_adv_loss(disc(result.final_erased), dm)
    else:
        l_g_sn = zero
    return l_tsd + l_trg + l_g_sn, {"l_tsd": l_tsd, "l_trg": l_trg, "l_g_sn": l_g_sn}


def _check_finite(state: TrainState, step: int, breakdown: LossBreakdown | None) -> None:
    for module, label in ((state.cascade, "generator"), (state.disc, "discriminator")):
        for name, p in module.named_parameters():
            if not torch.isfinite(p).all():
                raise TrainingDivergedError(
                    step, breakdown, f"non-finite values in {label} parameter {name}"
                )


def train_step(state: TrainState, batch: Sequence[Sample]) -> LossBreakdown:
    """One discriminator update followed by one generator update."""
    cfg = state.config
    tensors = batch_to_tensors(batch, cfg.image_size)
    step = state.step + 1

    l_d_value = 0.0
    if cfg.adversarial:
        state.disc.train()
        with torch.no_grad():
            fake = state.cascade(tensors["image"], tensors["region"]).final_erased
        dm = _patch_weight_map(tensors["region"], cfg)
        l_d = disc_loss(state.disc(tensors["clean"]), state.disc(fake), dm)
        if not torch.isfinite(l_d):
            raise TrainingDivergedError(step, None, "l_d_sn is not finite")
        state.disc_opt.zero_grad()
        l_d.backward()
        state.disc_opt.step()
        state.disc.eval()
        l_d_value = float(l_d.detach())

    total, parts = generator_objective(state.cascade, state.disc, tensors, cfg)
    try:
        breakdown = total_generator_loss(parts["l_tsd"], parts["l_trg"], parts["l_g_sn"], l_d_value)
    except ValueError as exc:
        raise TrainingDivergedError(step, None, str(exc)) from exc
    state.gen_opt.zero_grad()
    total.backward()
    state.gen_opt.step()
    _check_finite(state, step, breakdown)
    state.step = step
    return breakdown


def run_training(cfg: TrainConfig, samples: Sequence[Sample], out_dir: Path | str) -> TrainState:
    """Train for `cfg.epochs` passes over `samples`.

    Writes `metrics.jsonl` (one line per step) and a rolling checkpoint
    directory at every epoch end; `epochs=0` still writes the initial
    checkpoint.  Each epoch runs floor(N / batch_size) steps.
    """
    if not samples:
        raise ValueError("dataset is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out_dir / "checkpoint"
    state = init_state(cfg)
    if cfg.epochs == 0:
        save_checkpoint(state, ckpt_dir)
        return state
    if len(samples) < cfg.batch_size:
        raise ValueError(
            f"dataset has {len(samples)} samples, smaller than batch_size={cfg.batch_size}"
        )
    with (out_dir / "metrics.jsonl").open("a") as metrics:
        for epoch in range(cfg.epochs):
            for batch in load_batches(samples, cfg.batch_size, cfg.seed + epoch, training=True):
                started = time.perf_counter()
                breakdown = train_step(state, batch)
                record = {"step": state.step, **breakdown.to_dict(),
                          "wall_ms": (time.perf_counter() - started) * 1000.0}
                metrics.write(json.dumps(record) + "\n")
            state.epoch = epoch + 1
            save_checkpoint(state, ckpt_dir)
            metrics.flush()
    return state


# ---------------------------------------------------------------------------
# checkpoints: directory of raw little-endian float32 arrays + JSON manifest

def _named_arrays(state: TrainState) -> dict[str, torch.Tensor]:
    arrays: dict[str, torch.Tensor] = {}
    for prefix, module in (("cascade", state.cascade), ("disc", state.disc)):
        for name, p in module.named_parameters():
            arrays[f"{prefix}.{name}"] = p.detach()
        for name, b in module.named_buffers():
            arrays[f"{prefix}.{name}"] = b.detach()
    for prefix, module, opt in (
        ("opt_g", state.cascade, state.gen_opt),
        ("opt_d", state.disc, state.disc_opt),
    ):
        names = {id(p): n for n, p in module.named_parameters()}
        for group in opt.param_groups:
            for p in group["params"]:
                slot = opt.state.get(p)
                if not slot:
                    continue
                pname = names[id(p)]
                arrays[f"{prefix}.{pname}.step"] = slot["step"].detach()
                arrays[f"{prefix}.{pname}.exp_avg"] = slot["exp_avg"].detach()
                arrays[f"{prefix}.{pname}.exp_avg_sq"] = slot["exp_avg_sq"].detach()
    return arrays


def save_checkpoint(state: TrainState, path: Path | str) -> Path:
    path = Path(path)
    (path / "arrays").mkdir(parents=True, exist_ok=True)
    arrays = _named_arrays(state)
    index = {}
    for name, tensor in arrays.items():
        data = np.ascontiguousarray(tensor.cpu().numpy(), dtype="<f4")
        (path / "arrays" / f"{name}.bin").write_bytes(data.tobytes())
        index[name] = {"shape": list(data.shape), "dtype": "float32"}
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "step": state.step,
        "epoch": state.epoch,
        "config": state.config.to_dict(),
        "rng": {"seed": state.config.seed, "epoch": state.epoch, "step": state.step},
        "arrays": index,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _read_array(path: Path, name: str, shape: list[int]) -> torch.Tensor:
    file = path / "arrays" / f"{name}.bin"
    if not file.is_file():
        raise CheckpointError(f"missing array file for {name!r}")
    raw = np.frombuffer(file.read_bytes(), dtype="<f4")
    expected = int(np.prod(shape)) if shape else 1
    if raw.size != expected:
        raise CheckpointError(
            f"array {name!r} has {raw.size} values, manifest shape {shape} needs {expected}"
        )
    return torch.from_numpy(raw.reshape(shape).copy())


def load_checkpoint(path: Path | str) -> TrainState:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise CheckpointError(f"not a checkpoint directory (no manifest): {path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"unreadable manifest in {path}: {exc}") from exc
    version = manifest.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format_version {version!r}, "
            f"expected {CHECKPOINT_FORMAT_VERSION}"
        )
    try:
        cfg = TrainConfig.from_dict(manifest["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid config in manifest: {exc}") from exc

    cascade = EraserCascade(CascadeConfig(
        units=cfg.units,
        use_stroke_net=cfg.use_stroke_net,
        base_channels=cfg.base_channels,
        levels=cfg.levels,
    ))
    disc = PatchDiscriminator(DiscConfig(
        in_channels=3, base_channels=cfg.disc_base_channels, layers=cfg.disc_layers,
    ))
    betas = (cfg.beta1, cfg.beta2)
    state = TrainState(
        step=int(manifest.get("step", 0)),
        epoch=int(manifest.get("epoch", 0)),
        config=cfg,
        cascade=cascade,
        disc=disc,
        gen_opt=torch.optim.Adam(cascade.parameters(), lr=cfg.lr, betas=betas),
        disc_opt=torch.optim.Adam(disc.parameters(), lr=cfg.lr, betas=betas),
    )

    index = manifest.get("arrays", {})
    model_arrays: dict[str, torch.Tensor] = {}
    for prefix, module in (("cascade", cascade), ("disc", disc)):
        for name, p in module.named_parameters():
            model_arrays[f"{prefix}.{name}"] = p
        for name, b in module.named_buffers():
            model_arrays[f"{prefix}.{name}"] = b
    for name, tensor in model_arrays.items():
        meta = index.get(name)
        if meta is None:
            raise CheckpointError(f"manifest is missing required array {name!r}")
        if meta.get("dtype") != "float32":
            raise CheckpointError(f"array {name!r} has unsupported dtype {meta.get('dtype')!r}")
        if tuple(meta["shape"]) != tuple(tensor.shape):
            raise CheckpointError(
                f"array {name!r} shape {meta['shape']} does not match model "
                f"shape {list(tensor.shape)}"
            )
        with torch.no_grad():
            tensor.copy_(_read_array(path, name, meta["shape"]))

    for prefix, module, opt in (("opt_g", cascade, state.gen_opt), ("opt_d", disc, state.disc_opt)):
        names = {n: p for n, p in module.named_parameters()}
        for pname, p in names.items():
            key = f"{prefix}.{pname}.exp_avg"
            if key not in index:
                continue
            slot = {}
            for part in ("step", "exp_avg", "exp_avg_sq"):
                meta = index.get(f"{prefix}.{pname}.{part}")
                if meta is None:
                    raise CheckpointError(f"optimizer slot {prefix}.{pname} is missing {part!r}")
                slot[part] = _read_array(path, f"{prefix}.{pname}.{part}", meta["shape"])
            opt.state[p] = slot
    return state


def checkpoint_forward_fn(path: Path | str):
    """Build an evaluation forward function from a saved checkpoint.

    Returns fn(sample) -> (erased H x W x 3 in [-1, 1], final stroke map or
    None), running the cascade without gradients.
    """
    from .networks import image_to_tensor, mask_to_tensor, tensor_to_image, tensor_to_mask

    state = load_checkpoint(path)
    cascade = state.cascade.eval()

    def forward(sample: Sample):
        with torch.no_grad():
            result = cascade(image_to_tensor(sample.image), mask_to_tensor(sample.region))
        stroke = result.final_stroke
        return (
            tensor_to_image(result.final_erased),
            tensor_to_mask(stroke) if stroke is not None else None,
        )

    return forward
