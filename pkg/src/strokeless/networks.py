"""Forward computations: stroke-detection and erase U-Nets, the two-unit
cascade, the spectral-norm patch discriminator, and its fixed mask branch."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class UNetConfig:
    in_channels: int
    out_channels: int
    base_channels: int = 32
    levels: int = 5
    first_kernel: int = 3
    output_activation: str = "sigmoid"

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if self.first_kernel not in (3, 5):
            raise ValueError("first_kernel must be 3 or 5")
        if self.output_activation not in ("sigmoid", "tanh"):
            raise ValueError("output_activation must be 'sigmoid' or 'tanh'")

    @property
    def stride(self) -> int:
        return 2 ** self.levels

    def channel_plan(self) -> list[int]:
        return [self.base_channels * min(2 ** i, 8) for i in range(self.levels)]


class UNet(nn.Module):
    """Encoder/decoder with skip connections.

    Encoder: `levels` stride-2 convolutions (leaky rectifier 0.2); decoder
    mirrors with nearest-neighbor upsampling, skip concatenation and 3x3
    convolutions (rectifier), then a 3x3 head with sigmoid or tanh.
    """

    def __init__(self, config: UNetConfig):
        super().__init__()
        self.config = config
        ch = config.channel_plan()
        enc = []
        in_ch = config.in_channels
        for i, out_ch in enumerate(ch):
            k = config.first_kernel if i == 0 else 3
            enc.append(nn.Conv2d(in_ch, out_ch, k, stride=2, padding=k // 2))
            in_ch = out_ch
        self.encoder = nn.ModuleList(enc)
        dec = []
        for i in range(config.levels - 1, 0, -1):
            dec.append(nn.Conv2d(ch[i] + ch[i - 1], ch[i - 1], 3, padding=1))
        self.decoder = nn.ModuleList(dec)
        self.head = nn.Conv2d(ch[0], config.out_channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ValueError(
                f"expected N x {self.config.in_channels} x H x W input, got {tuple(x.shape)}"
            )
        h, w = x.shape[-2:]
        stride = self.config.stride
        if h % stride or w % stride:
            raise ValueError(f"spatial size {h}x{w} must be a multiple of {stride}")
        skips = []
        for conv in self.encoder:
            x = F.leaky_relu(conv(x), 0.2)
            skips.append(x)
        for conv, skip in zip(self.decoder, reversed(skips[:-1])):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = F.relu(conv(torch.cat([x, skip], dim=1)))
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = self.head(x)
        if self.config.output_activation == "sigmoid":
            return torch.sigmoid(x)
        return torch.tanh(x)


@dataclass
class CascadeConfig:
    units: int = 2
    use_stroke_net: bool = True
    base_channels: int = 32
    levels: int = 5

    def __post_init__(self):
        if self.units not in (1, 2, 3):
            raise ValueError("units must be 1, 2, or 3")
        if not self.use_stroke_net and self.units != 1:
            raise ValueError("cascading requires the stroke-detection subnet")


@dataclass
class CascadeResult:
    """Per-unit outputs; stroke maps are empty when detection is disabled."""

    stroke_maps: list[torch.Tensor] = field(default_factory=list)
    erased: list[torch.Tensor] = field(default_factory=list)

    @property
    def final_erased(self) -> torch.Tensor:
        return self.erased[-1]

    @property
    def final_stroke(self) -> torch.Tensor | None:
        return self.stroke_maps[-1] if self.stroke_maps else None


class CascadeUnit(nn.Module):
    def __init__(self, detect: UNet | None, erase: UNet):
        super().__init__()
        self.detect = detect
        self.erase = erase


class EraserCascade(nn.Module):
    """Cascaded (detect, erase) units.

    Unit 1 detects strokes on the input image and erases with the predicted
    map; each later unit refines the previous erased image, feeding the prior
    stroke map into detection.  The units share no parameters.
    """

    def __init__(self, config: CascadeConfig):
        super().__init__()
        self.config = config
        units = []
        for k in range(config.units):
            detect = None
            if config.use_stroke_net:
                mask_in = 1 if k == 0 else 2
                detect = UNet(UNetConfig(
                    in_channels=3 + mask_in,
                    out_channels=1,
                    base_channels=config.base_channels,
                    levels=config.levels,
                    first_kernel=3,
                    output_activation="sigmoid",
                ))
            erase_in = 5 if config.use_stroke_net else 4
            erase = UNet(UNetConfig(
                in_channels=erase_in,
                out_channels=3,
                base_channels=config.base_channels,
                levels=config.levels,
                first_kernel=5,
                output_activation="tanh",
            ))
            units.append(CascadeUnit(detect, erase))
        self.units = nn.ModuleList(units)

    def forward(self, image: torch.Tensor, region: torch.Tensor) -> CascadeResult:
        if image.ndim != 4 or image.shape[1] != 3:
            raise ValueError(f"expected N x 3 x H x W image, got {tuple(image.shape)}")
        if region.shape != (image.shape[0], 1, image.shape[2], image.shape[3]):
            raise ValueError(f"region mask shape {tuple(region.shape)} does not match image")
        result = CascadeResult()
        current = image
        prev_stroke = None
        for k, unit in enumerate(self.units):
            if unit.detect is not None:
                if k == 0:
                    stroke = unit.detect(torch.cat([current, region], dim=1))
                else:
                    stroke = unit.detect(torch.cat([current, region, prev_stroke], dim=1))
                erased = unit.erase(torch.cat([current, region, stroke], dim=1))
                result.stroke_maps.append(stroke)
                prev_stroke = stroke
            else:
                erased = unit.erase(torch.cat([current, region], dim=1))
            result.erased.append(erased)
            current = erased
        return result


# ---------------------------------------------------------------------------
# discriminator

class SNConv2d(nn.Module):
    """Stride-2 convolution whose kernel is divided by its largest singular
    value, estimated by power iteration on the unrolled (out x in*k*k) matrix.
    The singular-vector estimate updates one step per training forward."""

    def __init__(self, in_channels, out_channels, kernel, stride=2):
        super().__init__()
        self.stride = stride
        self.padding = kernel // 2
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        self.register_buffer("u", torch.empty(out_channels))

    def estimated_sigma(self, update: bool = False) -> torch.Tensor:
        w = self.weight.reshape(self.weight.shape[0], -1)
        with torch.no_grad():
            v = F.normalize(w.t().mv(self.u), dim=0, eps=1e-12)
            u_new = F.normalize(w.detach().mv(v), dim=0, eps=1e-12)
            if update:
                self.u.copy_(u_new)
        # grads flow through w only; u/v behave as constants (exact at the
        # power-iteration fixed point)
        return torch.dot(u_new, w.mv(v))

    def warmup(self, max_iterations: int = 500, tol: float = 1e-7) -> None:
        """Iterate the singular-vector estimate until the norm estimate
        stabilizes; slow convergence happens when the two largest singular
        values are close, in which case either estimate normalizes fine."""
        with torch.no_grad():
            prev = None
            for _ in range(max_iterations):
                sigma = float(self.estimated_sigma(update=True))
                if prev is not None and abs(sigma - prev) <= tol * max(abs(sigma), 1e-12):
                    break
                prev = sigma

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        sigma = self.estimated_sigma(update=self.training)
        w = self.weight / sigma.clamp(min=1e-12)
        return F.conv2d(x, w, self.bias, stride=self.stride, padding=self.padding)


@dataclass
class DiscConfig:
    in_channels: int = 3
    base_channels: int = 64
    layers: int = 6
    kernel: int = 5

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")

    @property
    def stride(self) -> int:
        return 2 ** self.layers

    def channel_plan(self) -> list[int]:
        return [self.base_channels * min(2 ** i, 4) for i in range(self.layers)]


class PatchDiscriminator(nn.Module):
    """Stack of spectral-normalized 5x5 stride-2 convolutions with leaky
    rectifier 0.2; the last feature map is the patch score map."""

    def __init__(self, config: DiscConfig):
        super().__init__()
        self.config = config
        convs = []
        in_ch = config.in_channels
        for out_ch in config.channel_plan():
            convs.append(SNConv2d(in_ch, out_ch, config.kernel, stride=2))
            in_ch = out_ch
        self.convs = nn.ModuleList(convs)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ValueError(
                f"expected N x {self.config.in_channels} x H x W input, got {tuple(x.shape)}"
            )
        h, w = x.shape[-2:]
        if h % self.config.stride or w % self.config.stride:
            raise ValueError(f"spatial size {h}x{w} must be a multiple of {self.config.stride}")
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
        return x

    def warmup_spectral_norm(self) -> None:
        for conv in self.convs:
            conv.warmup()


def mask_patch_weights(
    region: torch.Tensor,
    layers: int = 6,
    kernel: int = 5,
    normalized: bool = True,
) -> torch.Tensor:
    """Patch weight map mirroring the discriminator geometry.

    Each layer is a single-channel 5x5 stride-2 convolution with all-ones
    kernel, zero bias and identity activation; `normalized` divides every
    layer by the kernel area so the output stays in [0, 1].  These weights
    are fixed and never receive gradient updates.
    """
    if region.ndim != 4 or region.shape[1] != 1:
        raise ValueError(f"expected N x 1 x H x W mask, got {tuple(region.shape)}")
    h, w = region.shape[-2:]
    if h % (2 ** layers) or w % (2 ** layers):
        raise ValueError(f"spatial size {h}x{w} must be a multiple of {2 ** layers}")
    kern = torch.ones(1, 1, kernel, kernel, dtype=region.dtype, device=region.device)
    out = region
    for _ in range(layers):
        out = F.conv2d(out, kern, stride=2, padding=kernel // 2)
        if normalized:
            # divide after the all-ones convolution: saturated windows stay
            # exactly 1.0 instead of accumulating 1/25 rounding error
            out = out / (kernel * kernel)
    return out


# ---------------------------------------------------------------------------
# initialization and numpy boundary helpers

def init_weights(module: nn.Module, seed: int) -> None:
    """Fan-in-scaled uniform init for conv kernels, zero biases; spectral-norm
    singular-vector estimates are re-seeded and warmed up."""
    gen = torch.Generator().manual_seed(seed)
    for p in module.parameters():
        with torch.no_grad():
            if p.dim() > 1:
                fan_in = p[0].numel()
                bound = math.sqrt(3.0 / fan_in)
                p.uniform_(-bound, bound, generator=gen)
            else:
                p.zero_()
    for m in module.modules():
        if isinstance(m, SNConv2d):
            with torch.no_grad():
                m.u.copy_(torch.randn(m.u.shape, generator=gen))
            m.warmup()


def build_cascade(config: CascadeConfig, seed: int = 0) -> EraserCascade:
    net = EraserCascade(config)
    init_weights(net, seed)
    return net


def build_discriminator(config: DiscConfig, seed: int = 0) -> PatchDiscriminator:
    net = PatchDiscriminator(config)
    init_weights(net, seed + 1)
    return net


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """H x W x 3 float array -> 1 x 3 x H x W tensor."""
    return torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)).permute(2, 0, 1)[None]


def mask_to_tensor(mask: np.ndarray) -> torch.Tensor:
    """H x W float array -> 1 x 1 x H x W tensor."""
    return torch.from_numpy(np.ascontiguousarray(mask, dtype=np.float32))[None, None]


def tensor_to_image(t: torch.Tensor) -> np.ndarray:
    return t.detach()[0].permute(1, 2, 0).cpu().numpy()


def tensor_to_mask(t: torch.Tensor) -> np.ndarray:
    return t.detach()[0, 0].cpu().numpy()


def _pad_amounts(size: int, multiple: int) -> int:
    return (multiple - size % multiple) % multiple


def erase_arrays(
    cascade: EraserCascade,
    image: np.ndarray,
    region: np.ndarray,
    composite: bool = False,
    pad_multiple: int | None = None,
) -> dict[str, np.ndarray]:
    """Run the cascade on arbitrary-size arrays.

    The image is padded to the next `pad_multiple` with reflected borders
    (the mask with zeros) and the outputs are cropped back.  With
    `composite`, network output is pasted only inside the region mask so
    every outside pixel stays exactly equal to the input.  Returns the
    erased image plus every stroke map.
    """
    from .core import composite as composite_arrays

    if pad_multiple is None:
        pad_multiple = max(64, 2 ** cascade.config.levels)
    h, w = image.shape[:2]
    if region.shape != (h, w):
        raise ValueError(f"region shape {region.shape} does not match image {(h, w)}")
    ph, pw = _pad_amounts(h, pad_multiple), _pad_amounts(w, pad_multiple)
    padded_image = image
    padded_region = region
    if ph or pw:
        image_mode = "reflect" if ph < h and pw < w else "edge"
        padded_image = np.pad(image, ((0, ph), (0, pw), (0, 0)), mode=image_mode)
        padded_region = np.pad(region, ((0, ph), (0, pw)), mode="constant")
    was_training = cascade.training
    cascade.eval()
    try:
        with torch.no_grad():
            result = cascade(image_to_tensor(padded_image), mask_to_tensor(padded_region))
    finally:
        cascade.train(was_training)
    erased = tensor_to_image(result.final_erased)[:h, :w]
    if composite:
        erased = composite_arrays(image, region, erased)
    out = {"erased": erased}
    for i, stroke in enumerate(result.stroke_maps):
        out[f"stroke_{i + 1}"] = tensor_to_mask(stroke)[:h, :w]
    return out
