"""Dual-output 3D U-Net generators and 3D patch discriminators.

Each generator maps a single-channel image patch in [-1, 1] to four
channels: one translated image (tanh) plus the three segmentation
channels (sigmoid for foreground and contour, tanh for distance). The
two translation directions use the same architecture with independent
parameters. Discriminators are strided conv stacks emitting a spatial
map of unbounded real/fake scores (least-squares objective, so no
terminal activation).
"""

from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F


class GeneratorOutput(NamedTuple):
    image: torch.Tensor  # (n, 1, z, y, x) in (-1, 1)
    seg: torch.Tensor  # (n, 3, z, y, x): foreground, contour in (0, 1); distance in (-1, 1)


@dataclass(frozen=True)
class GeneratorConfig:
    depth: int = 4
    base_channels: tuple[int, ...] = (16, 32, 48, 64)
    norm: str = "instance"  # "instance" | "batch" | "none"
    in_channels: int = 1

    def __post_init__(self):
        if len(self.base_channels) != self.depth:
            raise ValueError("GeneratorConfig: need one channel count per level")
        if self.norm not in ("instance", "batch", "none"):
            raise ValueError(f"GeneratorConfig: unknown norm {self.norm!r}")

    @property
    def stride_product(self) -> int:
        return 2 ** (self.depth - 1)


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 1
    n_layers: int = 3
    base_channels: int = 32

    @property
    def stride_product(self) -> int:
        return 2**self.n_layers


def _norm_layer(kind: str, channels: int) -> nn.Module:
    if kind == "instance":
        return nn.InstanceNorm3d(channels, affine=True)
    if kind == "batch":
        return nn.BatchNorm3d(channels)
    return nn.Identity()


def _conv_block(in_ch: int, out_ch: int, norm: str) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv3d(in_ch, out_ch, 3, padding=1),
        _norm_layer(norm, out_ch),
        nn.ReLU(inplace=True),
        nn.Conv3d(out_ch, out_ch, 3, padding=1),
        _norm_layer(norm, out_ch),
        nn.ReLU(inplace=True),
    )


class DualHeadUNet3D(nn.Module):
    """3D U-Net trunk with a 4-channel head: image + segmentation triple."""

    def __init__(self, config: GeneratorConfig = GeneratorConfig()):
        super().__init__()
        self.config = config
        ch = config.base_channels
        self.encoders = nn.ModuleList()
        prev = config.in_channels
        for c in ch:
            self.encoders.append(_conv_block(prev, c, config.norm))
            prev = c
        self.decoders = nn.ModuleList()
        self.up_convs = nn.ModuleList()
        for lo, hi in zip(ch[-2::-1], ch[:0:-1]):
            self.up_convs.append(nn.Conv3d(hi, lo, 3, padding=1))
            self.decoders.append(_conv_block(2 * lo, lo, config.norm))
        self.head = nn.Conv3d(ch[0], 4, 1)
        # Kaiming init: the segmentation heads train an order of magnitude
        # faster than with the 0.02-normal GAN init on this trunk
        self.apply(init_unet_weights)

    def forward(self, x: torch.Tensor) -> GeneratorOutput:
        sp = self.config.stride_product
        if any(s % sp for s in x.shape[-3:]):
            raise ValueError(
                f"input spatial dims {tuple(x.shape[-3:])} not divisible by {sp}"
            )
        skips = []
        for i, enc in enumerate(self.encoders):
            if i > 0:
                x = F.max_pool3d(x, 2)
            x = enc(x)
            skips.append(x)
        x = skips.pop()
        for up, dec in zip(self.up_convs, self.decoders):
            x = F.interpolate(x, scale_factor=2, mode="trilinear", align_corners=False)
            x = up(x)
            x = dec(torch.cat([x, skips.pop()], dim=1))
        raw = self.head(x)
        image = torch.tanh(raw[:, 0:1])
        seg = torch.cat(
            [
                torch.sigmoid(raw[:, 1:2]),  # foreground
                torch.sigmoid(raw[:, 2:3]),  # contour
                torch.tanh(raw[:, 3:4]),  # distance
            ],
            dim=1,
        )
        return GeneratorOutput(image=image, seg=seg)


class PatchDiscriminator3D(nn.Module):
    """Strided conv stack scoring overlapping patches of the input.

    No normalization layers: the score map is then exactly equivariant to
    shifts by the total stride away from the borders, and small-batch 3D
    training does not depend on instance statistics of fakes.
    """

    def __init__(self, config: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        self.config = config
        layers: list[nn.Module] = []
        prev = config.in_channels
        ch = config.base_channels
        for _ in range(config.n_layers):
            layers += [nn.Conv3d(prev, ch, 4, stride=2, padding=1), nn.LeakyReLU(0.2, inplace=True)]
            prev, ch = ch, min(ch * 2, 8 * config.base_channels)
        layers.append(nn.Conv3d(prev, 1, 3, padding=1))
        self.net = nn.Sequential(*layers)
        self.apply(init_gan_weights)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.config.in_channels:
            raise ValueError(
                f"discriminator expects {self.config.in_channels} channels, got {x.shape[1]}"
            )
        return self.net(x)


def init_gan_weights(module: nn.Module) -> None:
    if isinstance(module, nn.Conv3d):
        nn.init.normal_(module.weight, 0.0, 0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, (nn.InstanceNorm3d, nn.BatchNorm3d)) and module.weight is not None:
        nn.init.normal_(module.weight, 1.0, 0.02)
        nn.init.zeros_(module.bias)


def init_unet_weights(module: nn.Module) -> None:
    if isinstance(module, nn.Conv3d):
        nn.init.kaiming_normal_(module.weight, nonlinearity="relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, (nn.InstanceNorm3d, nn.BatchNorm3d)) and module.weight is not None:
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


def build_generator(config: GeneratorConfig) -> DualHeadUNet3D:
    return DualHeadUNet3D(config)


def build_discriminator(config: DiscriminatorConfig) -> PatchDiscriminator3D:
    return PatchDiscriminator3D(config)


def to_model_range(x01):
    """Map [0, 1] storage intensities onto the [-1, 1] model range."""
    return x01 * 2.0 - 1.0


def to_storage_range(xpm1):
    """Map [-1, 1] model outputs back onto [0, 1]."""
    return (xpm1 + 1.0) * 0.5
