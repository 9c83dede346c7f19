"""
Pipeline model bundle and latent codecs
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from ..config import StsSettings
from ..engine import NoisePredictor
from ..errors import DivergenceError, ProvenanceError
from ..schedule import DiffusionSchedule, TimestepPlan, build_schedule, plan_timesteps
from ..translator import SeedTranslator
from ..workspace_manager import WorkspaceManager

logger = logging.getLogger(__name__)

CODEC_KIND = "codec"


class LatentCodec(ABC):
    """Maps images to the latent space the denoiser works in, and back"""

    name = "codec"

    @abstractmethod
    def encode(self, images: torch.Tensor) -> torch.Tensor:
        """Images (N, 3, H, W) in [0, 1] to latents"""

    @abstractmethod
    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        """Latents back to images"""


class IdentityCodec(LatentCodec):
    """Pixel space is the latent space"""

    name = "identity"

    def encode(self, images):
        return images

    def decode(self, latents):
        return latents


class TinyAutoencoder(nn.Module):
    def __init__(self, image_channels: int = 3, latent_channels: int = 4, width: int = 32):
        super().__init__()
        self.encoder = nn.Sequential(
            nn.Conv2d(image_channels, width, 3, padding=1), nn.SiLU(),
            nn.Conv2d(width, width, 3, padding=1), nn.SiLU(),
            nn.Conv2d(width, latent_channels, 1),
        )
        self.decoder = nn.Sequential(
            nn.Conv2d(latent_channels, width, 3, padding=1), nn.SiLU(),
            nn.Conv2d(width, width, 3, padding=1), nn.SiLU(),
            nn.Conv2d(width, image_channels, 1),
        )

    def forward(self, x):
        return self.decoder(self.encoder(x))


class AutoencoderCodec(LatentCodec):
    """Resolution-preserving convolutional autoencoder with a latent scale factor"""

    name = "autoencoder"

    def __init__(self, model: TinyAutoencoder, latent_scale: float = 1.0, checkpoint_id: Optional[str] = None):
        self.model = model.eval()
        self.model.requires_grad_(False)
        self.latent_scale = latent_scale
        self.checkpoint_id = checkpoint_id

    def encode(self, images):
        with torch.no_grad():
            return self.model.encoder(images.float()) * self.latent_scale

    def decode(self, latents):
        with torch.no_grad():
            return self.model.decoder(latents.float() / self.latent_scale)


def train_autoencoder(images, latent_channels: int, steps: int, lr: float = 1e-3,
                      batch_size: int = 64, rng_seed: int = 0) -> AutoencoderCodec:
    """Fit the codec by L1 reconstruction; the latent scale normalises latents to unit std"""
    images = torch.as_tensor(np.asarray(images)).float()
    if len(images) == 0:
        raise ValueError("Codec training set is empty")
    generator = torch.Generator().manual_seed(rng_seed)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(rng_seed)
        model = TinyAutoencoder(images.shape[1], latent_channels)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    model.train()
    for step in tqdm(range(steps), desc="codec", leave=False):
        idx = torch.randint(0, len(images), (batch_size,), generator=generator)
        loss = F.l1_loss(model(images[idx]), images[idx])
        if not torch.isfinite(loss):
            raise DivergenceError(f"Non-finite codec loss at step {step}", step=step)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    with torch.no_grad():
        latents = model.encoder(images[: min(len(images), 512)])
        std = float(latents.std())
    logger.info(f"✅ Codec trained for {steps} steps (latent std {std:.3f})")
    return AutoencoderCodec(model, latent_scale=1.0 / std if std > 0 else 1.0)


def save_codec(workspace: WorkspaceManager, name: str, codec: AutoencoderCodec) -> str:
    model = codec.model
    return workspace.save_checkpoint(
        name, CODEC_KIND, model.state_dict(),
        config={"image_channels": model.encoder[0].in_channels,
                "latent_channels": model.encoder[-1].out_channels,
                "latent_scale": codec.latent_scale},
    )


def load_codec(workspace: WorkspaceManager, name: str) -> AutoencoderCodec:
    checkpoint = workspace.load_checkpoint(name, kind=CODEC_KIND)
    model = TinyAutoencoder(checkpoint.config["image_channels"], checkpoint.config["latent_channels"])
    model.load_state_dict(checkpoint.tensors)
    return AutoencoderCodec(model, checkpoint.config["latent_scale"], checkpoint.checkpoint_id)


@dataclass
class StsModels:
    """Everything the translation pipeline needs, checked for mutual compatibility"""
    predictor: NoisePredictor
    translator: SeedTranslator
    schedule: DiffusionSchedule
    plan: TimestepPlan
    omega_inversion: float = 1.0
    omega_forward: float = 5.0
    codec: LatentCodec = field(default_factory=IdentityCodec)
    edge_threshold: float = 0.2
    checkpoint_ids: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.check_consistency()

    def check_consistency(self) -> None:
        if self.plan.total_steps != self.schedule.total_steps:
            raise ProvenanceError("Plan and schedule disagree on T")
        if self.translator.total_steps and self.translator.total_steps != self.schedule.total_steps:
            raise ProvenanceError(
                f"Translator was trained on seeds at t={self.translator.total_steps}, schedule has T={self.schedule.total_steps}"
            )
        if self.omega_inversion != 1.0:
            logger.warning(f"⚠️ Inversion guidance {self.omega_inversion} differs from 1; inversion uses the conditional branch only")

    @property
    def seed_shape(self) -> Tuple[int, ...]:
        return self.translator.seed_shape


def schedule_and_plan(settings: StsSettings) -> Tuple[DiffusionSchedule, TimestepPlan]:
    schedule = build_schedule(settings.schedule.total_steps, settings.schedule.beta_start, settings.schedule.beta_end)
    return schedule, plan_timesteps(schedule, settings.schedule.num_inference_steps)


def load_codec_for(workspace: WorkspaceManager, settings: StsSettings) -> LatentCodec:
    if settings.pipeline.codec == "autoencoder":
        return load_codec(workspace, "codec")
    return IdentityCodec()


def load_models(workspace: WorkspaceManager, settings: StsSettings) -> StsModels:
    """Load the controlled denoiser, translator and codec of a prepared workspace"""
    from ..denoiser import NetworkPredictor, load_controlled
    from ..translator import load_translator

    controlled, adapter_id = load_controlled(workspace, "denoiser", "adapter")
    base_id = workspace.load_checkpoint("denoiser").checkpoint_id
    translator, provenance = load_translator(workspace, "translator")
    if provenance.get("checkpoint_id") not in (adapter_id, base_id):
        raise ProvenanceError(
            f"Translator seeds came from {provenance.get('checkpoint_id')}, not from the loaded denoiser"
        )
    schedule, plan = schedule_and_plan(settings)
    if tuple(provenance.get("plan", plan.steps)) != plan.steps:
        raise ProvenanceError("Translator seeds were inverted with a different timestep plan")

    return StsModels(
        predictor=NetworkPredictor(controlled, batch_size=settings.pipeline.batch_size, checkpoint_id=adapter_id),
        translator=translator,
        schedule=schedule,
        plan=plan,
        omega_inversion=settings.pipeline.omega_inversion,
        omega_forward=settings.pipeline.omega_forward,
        codec=load_codec_for(workspace, settings),
        edge_threshold=settings.data.edge_threshold,
        checkpoint_ids={"denoiser": base_id, "adapter": adapter_id,
                        "translator": workspace.load_checkpoint("translator").checkpoint_id},
    )
