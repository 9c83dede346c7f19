"""
StS Translation Pipeline
encode -> invert (source token, omega 1) -> translate seed -> guided sampling
(target token, omega_forward, source edge map) -> decode.

Each stage is a public function so a run can resume from any persisted
intermediate.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import torch

from ..datasets import edge_map_tensor
from ..engine import Condition, DomainToken, GuidanceConfig, LatentState, invert, sample
from ..errors import StageError
from ..translator import Direction, translate_seed
from .models import StsModels

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AblationConfig:
    """Which seed-translation components are active; the spatial condition is always on"""
    name: str
    use_inversion: bool
    use_seed_translation: bool


ABLATION_CONFIGS = (
    AblationConfig("ControlNet", use_inversion=False, use_seed_translation=False),
    AblationConfig("ControlNet+Inv", use_inversion=True, use_seed_translation=False),
    AblationConfig("ControlNet+ST", use_inversion=False, use_seed_translation=True),
    AblationConfig("ControlNet+Inv+ST", use_inversion=True, use_seed_translation=True),
)
FULL_STS = ABLATION_CONFIGS[-1]


@dataclass
class TranslationOutput:
    """Final images plus the seeds before (z_source) and after (z_target) translation"""
    images: torch.Tensor
    z_source: LatentState
    z_target: LatentState
    spatial_maps: torch.Tensor


@contextmanager
def stage(name: str):
    """Attach the stage name to any failure raised inside"""
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        raise StageError(name, f"{type(e).__name__}: {e}") from e


def domain_tokens(direction: Direction) -> Tuple[DomainToken, DomainToken]:
    """(source token, target token) for a translation direction"""
    if Direction(direction) == Direction.A2B:
        return DomainToken.SOURCE, DomainToken.TARGET
    return DomainToken.TARGET, DomainToken.SOURCE


def random_seed(shape: Tuple[int, ...], total_steps: int, rng_seed: int) -> LatentState:
    """z_T ~ N(0, I) drawn from a recorded rng seed"""
    generator = torch.Generator().manual_seed(int(rng_seed))
    return LatentState(torch.randn(shape, generator=generator), total_steps)


def invert_stage(latents: torch.Tensor, spatial_maps: torch.Tensor, models: StsModels,
                 direction: Direction) -> LatentState:
    source_token, _ = domain_tokens(direction)
    return invert(LatentState(latents, 0), models.predictor, models.plan,
                  Condition(source_token, spatial_maps), models.schedule)


def translate_stage(z_source: LatentState, models: StsModels, direction: Direction) -> LatentState:
    return translate_seed(models.translator, z_source, direction)


def sample_stage(z_target: LatentState, spatial_maps: torch.Tensor, models: StsModels,
                 direction: Direction, omega: Optional[float] = None) -> LatentState:
    _, target_token = domain_tokens(direction)
    guidance = GuidanceConfig(
        omega=models.omega_forward if omega is None else omega,
        cond=Condition(target_token, spatial_maps),
    )
    return sample(z_target, models.predictor, models.plan, guidance, models.schedule).final


def _translate_chunk(images: torch.Tensor, models: StsModels, direction: Direction,
                     config: AblationConfig, omega: Optional[float],
                     noise: Optional[torch.Tensor]) -> TranslationOutput:
    with stage("encode"):
        latents = models.codec.encode(images)
    with stage("edge_map"):
        spatial_maps = edge_map_tensor(images, models.edge_threshold)
    with stage("invert"):
        if config.use_inversion:
            z_source = invert_stage(latents, spatial_maps, models, direction)
        else:
            z_source = LatentState(noise.to(latents.dtype), models.plan.final_step)
    with stage("translate"):
        z_target = translate_stage(z_source, models, direction) if config.use_seed_translation else z_source
    with stage("sample"):
        z_out = sample_stage(z_target, spatial_maps, models, direction, omega)
    with stage("decode"):
        outputs = models.codec.decode(z_out.values)
    return TranslationOutput(images=outputs, z_source=z_source, z_target=z_target, spatial_maps=spatial_maps)


def sts_translate(images, models: StsModels, direction: Direction = Direction.A2B,
                  config: AblationConfig = FULL_STS, omega: Optional[float] = None,
                  rng_seed: int = 0, batch_size: int = 64, num_workers: int = 1) -> TranslationOutput:
    """
    Translate a batch of source images.

    Args:
        images: (N, C, H, W) source images in [0, 1]
        models: consistent model bundle
        direction: a2b or b2a
        config: ablation row (inversion and seed translation on or off)
        omega: forward guidance scale, defaults to models.omega_forward
        rng_seed: seed for z_T when inversion is off
        batch_size: images per chunk
        num_workers: chunks processed concurrently; results keep input order

    Returns:
        TranslationOutput with the translated images and intermediate seeds
    """
    images = torch.as_tensor(np.asarray(images) if not isinstance(images, torch.Tensor) else images).float()
    if images.dim() != 4:
        raise ValueError(f"Expected (N, C, H, W) images, got shape {tuple(images.shape)}")

    noise = None
    if not config.use_inversion:
        with stage("encode"):
            latent_shape = tuple(models.codec.encode(images[:1]).shape[1:])
        noise = random_seed((len(images), *latent_shape), models.plan.final_step, rng_seed).values

    chunks = [(start, min(start + batch_size, len(images))) for start in range(0, len(images), batch_size)]

    def run(bounds: Tuple[int, int]) -> TranslationOutput:
        start, stop = bounds
        chunk_noise = None if noise is None else noise[start:stop]
        return _translate_chunk(images[start:stop], models, direction, config, omega, chunk_noise)

    if num_workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=num_workers) as executor:
            results: List[TranslationOutput] = list(executor.map(run, chunks))
    else:
        results = [run(bounds) for bounds in chunks]

    if not results:
        raise ValueError("sts_translate needs at least one image")
    return TranslationOutput(
        images=torch.cat([r.images for r in results]),
        z_source=LatentState(torch.cat([r.z_source.values for r in results]), models.plan.final_step),
        z_target=LatentState(torch.cat([r.z_target.values for r in results]), models.plan.final_step),
        spatial_maps=torch.cat([r.spatial_maps for r in results]),
    )


def resume_from_seed(z_target: LatentState, spatial_maps: torch.Tensor, models: StsModels,
                     direction: Direction = Direction.A2B, omega: Optional[float] = None) -> torch.Tensor:
    """Finish a run from a persisted translated seed"""
    with stage("sample"):
        z_out = sample_stage(z_target, spatial_maps, models, direction, omega)
    with stage("decode"):
        return models.codec.decode(z_out.values)
