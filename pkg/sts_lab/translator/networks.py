"""
Seed translator networks
Residual encoder-decoder generators without a final normalisation or
squashing layer, and patch discriminators, for seeds of any channel count.
"""

import logging
import math
from enum import Enum
from typing import Tuple

import torch
import torch.nn as nn

from ..config import TranslatorConfig

logger = logging.getLogger(__name__)


class Direction(str, Enum):
    """Translation direction between the two seed domains"""
    A2B = "a2b"
    B2A = "b2a"


def weights_init_normal(m):
    """Initialize convolution layer weights to N(0, 0.02)"""
    classname = m.__class__.__name__
    if classname.find("Conv") != -1:
        torch.nn.init.normal_(m.weight.data, 0.0, 0.02)
        if m.bias is not None:
            torch.nn.init.zeros_(m.bias.data)


class ResidualBlock(nn.Module):
    def __init__(self, features: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(features, features, kernel_size=3, padding=1, padding_mode='reflect'),
            nn.InstanceNorm2d(features),
            nn.ReLU(),
            nn.Conv2d(features, features, kernel_size=3, padding=1, padding_mode='reflect'),
            nn.InstanceNorm2d(features),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.block(x)


class SeedGenerator(nn.Module):
    """
    Residual generator whose input and output layers match the seed channel
    count. The last convolution has no normalisation and no activation, and
    a global skip adds the input seed back.
    """

    def __init__(self, channels: int, config: TranslatorConfig):
        super().__init__()
        self.global_residual = config.global_residual
        features = config.base_channels
        layers = [
            nn.Conv2d(channels, features, kernel_size=7, padding=3, padding_mode='reflect'),
            nn.InstanceNorm2d(features),
            nn.ReLU(),
        ]
        for _ in range(config.num_downsampling):
            layers += [
                nn.Conv2d(features, features * 2, kernel_size=3, stride=2, padding=1),
                nn.InstanceNorm2d(features * 2),
                nn.ReLU(),
            ]
            features *= 2
        layers += [ResidualBlock(features) for _ in range(config.num_residual_blocks)]
        for _ in range(config.num_downsampling):
            layers += [
                nn.Upsample(scale_factor=2),
                nn.Conv2d(features, features // 2, kernel_size=3, padding=1),
                nn.InstanceNorm2d(features // 2),
                nn.ReLU(),
            ]
            features //= 2
        layers.append(nn.Conv2d(features, channels, kernel_size=7, padding=3, padding_mode='reflect'))
        self.layers = nn.Sequential(*layers)
        self.apply(weights_init_normal)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.layers(x)
        return x + out if self.global_residual else out


class PatchDiscriminator(nn.Module):
    """Least-squares patch critic; each block halves the resolution"""

    def __init__(self, channels: int, image_size: int, disc_channels: int):
        super().__init__()
        num_blocks = max(1, min(3, int(math.log2(image_size)) - 2))
        layers = []
        in_features, out_features = channels, disc_channels
        for i in range(num_blocks):
            layers.append(nn.Conv2d(in_features, out_features, kernel_size=4, stride=2, padding=1))
            if i > 0:
                layers.append(nn.InstanceNorm2d(out_features))
            layers.append(nn.LeakyReLU(0.2))
            in_features, out_features = out_features, out_features * 2
        layers += [nn.ZeroPad2d((1, 0, 1, 0)), nn.Conv2d(in_features, 1, kernel_size=4, padding=1)]
        self.layers = nn.Sequential(*layers)
        self.apply(weights_init_normal)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.layers(x)


class SeedTranslator(nn.Module):
    """G_AB, G_BA and the two domain critics D_A, D_B"""

    def __init__(self, g_ab: nn.Module, g_ba: nn.Module, d_a: nn.Module, d_b: nn.Module,
                 seed_shape: Tuple[int, int, int] = (), total_steps: int = 0):
        super().__init__()
        self.g_ab = g_ab
        self.g_ba = g_ba
        self.d_a = d_a
        self.d_b = d_b
        self.seed_shape = tuple(seed_shape)
        self.total_steps = total_steps

    @classmethod
    def build(cls, config: TranslatorConfig, seed_shape: Tuple[int, int, int], total_steps: int) -> "SeedTranslator":
        channels, height, width = seed_shape
        factor = 2 ** config.num_downsampling
        if height % factor or width % factor:
            raise ValueError(f"Seed size {height}x{width} is not divisible by {factor}")
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.rng_seed)
            return cls(
                g_ab=SeedGenerator(channels, config),
                g_ba=SeedGenerator(channels, config),
                d_a=PatchDiscriminator(channels, height, config.disc_channels),
                d_b=PatchDiscriminator(channels, height, config.disc_channels),
                seed_shape=seed_shape,
                total_steps=total_steps,
            )

    def generator(self, direction: Direction) -> nn.Module:
        return self.g_ab if Direction(direction) == Direction.A2B else self.g_ba

    def generator_parameters(self):
        return list(self.g_ab.parameters()) + list(self.g_ba.parameters())

    def discriminator_parameters(self):
        return list(self.d_a.parameters()) + list(self.d_b.parameters())
