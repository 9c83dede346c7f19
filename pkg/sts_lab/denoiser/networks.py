"""
Denoiser Networks
A small token-conditioned U-Net, an MLP variant for flat toy data, and the
spatial adapter that attaches to a frozen U-Net through zero-initialised
projections.
"""

import logging
import math
from copy import deepcopy
from typing import List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import AdapterConfig, DenoiserConfig
from ..engine import DomainToken

logger = logging.getLogger(__name__)

NUM_TOKENS = len(DomainToken)


def timestep_embedding(timesteps: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, shape (N, dim)"""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32, device=timesteps.device) / half)
    args = timesteps.float()[:, None] * freqs[None]
    embedding = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        embedding = F.pad(embedding, (0, 1))
    return embedding


class ConditionEmbedding(nn.Module):
    """Timestep MLP plus a learned domain-token embedding"""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.time_mlp = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))
        self.token = nn.Embedding(NUM_TOKENS, dim)

    def forward(self, timesteps: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        emb = self.time_mlp(timestep_embedding(timesteps, self.dim).to(self.token.weight.dtype))
        return emb + self.token(tokens)


def _groups(channels: int) -> int:
    for groups in (8, 4, 2):
        if channels % groups == 0:
            return groups
    return 1


class ResBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, emb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(in_channels), in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, out_channels)
        self.norm2 = nn.GroupNorm(_groups(out_channels), out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.skip = nn.Conv2d(in_channels, out_channels, 1) if in_channels != out_channels else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb_proj(F.silu(emb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class UNetEncoder(nn.Module):
    """
    Stem, one residual block per level with stride-2 downsampling between
    levels, and the middle block. Returns one skip feature per level.
    """

    def __init__(self, in_channels: int, base_channels: int, depth: int, emb_dim: int):
        super().__init__()
        self.level_channels = [base_channels * 2 ** i for i in range(depth)]
        self.stem = nn.Conv2d(in_channels, base_channels, 3, padding=1)
        self.blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        channels = base_channels
        for i, out in enumerate(self.level_channels):
            self.blocks.append(ResBlock(channels, out, emb_dim))
            channels = out
            if i < depth - 1:
                self.downs.append(nn.Conv2d(out, out, 3, stride=2, padding=1))
        self.mid = ResBlock(channels, channels, emb_dim)

    @property
    def mid_channels(self) -> int:
        return self.level_channels[-1]

    def forward(self, x: torch.Tensor, emb: torch.Tensor,
                hint: Optional[torch.Tensor] = None) -> Tuple[List[torch.Tensor], torch.Tensor]:
        h = self.stem(x)
        if hint is not None:
            h = h + hint
        skips = []
        for i, block in enumerate(self.blocks):
            h = block(h, emb)
            skips.append(h)
            if i < len(self.downs):
                h = self.downs[i](h)
        return skips, self.mid(h, emb)


class TinyUNet(nn.Module):
    """Token-conditioned epsilon-prediction U-Net for (N, C, H, W) inputs"""

    accepts_spatial_map = False

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        self.embedding = ConditionEmbedding(config.time_embed_dim)
        self.encoder = UNetEncoder(config.in_channels, config.base_channels, config.depth, config.time_embed_dim)
        self.ups = nn.ModuleList()
        self.dec_blocks = nn.ModuleList()
        channels = self.encoder.mid_channels
        for i in reversed(range(config.depth)):
            skip_channels = self.encoder.level_channels[i]
            self.dec_blocks.append(ResBlock(channels + skip_channels, skip_channels, config.time_embed_dim))
            channels = skip_channels
            if i > 0:
                self.ups.append(nn.ConvTranspose2d(channels, self.encoder.level_channels[i - 1], 4, stride=2, padding=1))
                channels = self.encoder.level_channels[i - 1]
        self.out_norm = nn.GroupNorm(_groups(channels), channels)
        self.out = nn.Conv2d(channels, config.in_channels, 3, padding=1)

    def forward(self, x: torch.Tensor, timesteps: torch.Tensor, tokens: torch.Tensor,
                residuals: Optional[List[torch.Tensor]] = None) -> torch.Tensor:
        """
        Args:
            x: noisy input (N, C, H, W); H and W divisible by 2 ** (depth - 1)
            timesteps: (N,) integer timesteps
            tokens: (N,) domain tokens
            residuals: optional adapter outputs, one per skip plus one for the middle block
        """
        emb = self.embedding(timesteps, tokens)
        skips, h = self.encoder(x, emb)
        if residuals is not None:
            if len(residuals) != len(skips) + 1:
                raise ValueError(f"Expected {len(skips) + 1} residuals, got {len(residuals)}")
            skips = [s + r for s, r in zip(skips, residuals[:-1])]
            h = h + residuals[-1]

        for i, block in enumerate(self.dec_blocks):
            h = block(torch.cat([h, skips[-1 - i]], dim=1), emb)
            if i < len(self.ups):
                h = self.ups[i](h)
        return self.out(F.silu(self.out_norm(h)))


class MlpDenoiser(nn.Module):
    """Epsilon predictor for flat (N, D) data"""

    accepts_spatial_map = False

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        width = config.base_channels * 4
        self.embedding = ConditionEmbedding(config.time_embed_dim)
        self.net = nn.Sequential(
            nn.Linear(config.in_channels + config.time_embed_dim, width), nn.SiLU(),
            nn.Linear(width, width), nn.SiLU(),
            nn.Linear(width, width), nn.SiLU(),
            nn.Linear(width, config.in_channels),
        )

    def forward(self, x, timesteps, tokens, residuals=None):
        if residuals is not None:
            raise ValueError("The MLP denoiser has no spatial branch")
        return self.net(torch.cat([x, self.embedding(timesteps, tokens)], dim=-1))


class ZeroConv2d(nn.Module):
    """A 1x1 convolution initialized with all zeros"""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 1, stride=1, padding=0)
        self.conv.weight.data.zero_()
        self.conv.bias.data.zero_()

    def forward(self, x):
        return self.conv(x)


class SpatialAdapter(nn.Module):
    """
    Trainable copy of the base encoder fed with the structure map. Its
    features reach the frozen base only through zero-initialised 1x1
    projections, one per resolution plus the middle block.
    """

    def __init__(self, base: TinyUNet, config: AdapterConfig):
        super().__init__()
        self.config = config
        base_channels = base.config.base_channels
        self.encoder = deepcopy(base.encoder)
        self.encoder.requires_grad_(True)
        self.hint_block = nn.Sequential(
            nn.Conv2d(config.hint_channels, config.hint_width, 3, padding=1), nn.SiLU(),
            nn.Conv2d(config.hint_width, config.hint_width, 3, padding=1), nn.SiLU(),
            nn.Conv2d(config.hint_width, base_channels, 3, padding=1),
        )
        self.zero_convs = nn.ModuleList([ZeroConv2d(c, c) for c in self.encoder.level_channels])
        self.mid_zero_conv = ZeroConv2d(self.encoder.mid_channels, self.encoder.mid_channels)

    def forward(self, x: torch.Tensor, emb: torch.Tensor, spatial_map: torch.Tensor) -> List[torch.Tensor]:
        skips, h = self.encoder(x, emb, hint=self.hint_block(spatial_map))
        residuals = [conv(s) for conv, s in zip(self.zero_convs, skips)]
        residuals.append(self.mid_zero_conv(h))
        return residuals


class ControlledDenoiser(nn.Module):
    """Frozen base U-Net plus a trainable spatial adapter"""

    accepts_spatial_map = True

    def __init__(self, base: TinyUNet, adapter: SpatialAdapter):
        super().__init__()
        self.base = base
        self.base.requires_grad_(False)
        self.adapter = adapter

    @property
    def config(self) -> DenoiserConfig:
        return self.base.config

    def forward(self, x, timesteps, tokens, spatial_map: Optional[torch.Tensor] = None):
        if spatial_map is None:
            return self.base(x, timesteps, tokens)
        if spatial_map.shape[0] != x.shape[0] or spatial_map.shape[-2:] != x.shape[-2:]:
            raise ValueError(f"Spatial map {tuple(spatial_map.shape)} does not match latent {tuple(x.shape)}")
        emb = self.base.embedding(timesteps, tokens)
        residuals = self.adapter(x, emb, spatial_map.to(x.dtype))
        return self.base(x, timesteps, tokens, residuals=residuals)


def build_denoiser(config: DenoiserConfig) -> nn.Module:
    """Instantiate the configured architecture with weights drawn from config.rng_seed"""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.rng_seed)
        if config.architecture == "mlp":
            return MlpDenoiser(config)
        return TinyUNet(config)


def attach_spatial_adapter(base: TinyUNet, config: AdapterConfig) -> ControlledDenoiser:
    """
    Attach a fresh adapter to a frozen base. The composite predicts exactly
    what the base predicts until the adapter is trained.
    """
    if not isinstance(base, TinyUNet):
        raise ValueError("A spatial adapter needs the convolutional U-Net backbone")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.rng_seed)
        adapter = SpatialAdapter(base, config)
    logger.info(f"🔗 Attached spatial adapter ({sum(p.numel() for p in adapter.parameters())} parameters)")
    return ControlledDenoiser(base, adapter)
