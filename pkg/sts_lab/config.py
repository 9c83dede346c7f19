"""
Experiment Configuration
Typed settings for every stage, resolved from defaults, a TOML config file,
.env / STS_* environment variables and CLI overrides (highest priority).
"""

import json
import logging
from contextvars import ContextVar
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict, TomlConfigSettingsSource

from .datasets import TwoDomainDatasetSpec

load_dotenv()
logger = logging.getLogger(__name__)

_CONFIG_FILE: ContextVar[Optional[Path]] = ContextVar("sts_config_file", default=None)


class ScheduleSettings(BaseModel):
    """Training noise schedule and DDIM plan size"""
    total_steps: int = Field(1000, ge=1)
    beta_start: float = Field(1e-4, gt=0.0, lt=1.0)
    beta_end: float = Field(0.02, gt=0.0, lt=1.0)
    num_inference_steps: int = Field(20, ge=1)

    @model_validator(mode="after")
    def _check_ramp(self):
        if self.beta_start > self.beta_end:
            raise ValueError("beta_start must not exceed beta_end")
        if self.num_inference_steps > self.total_steps:
            raise ValueError("num_inference_steps must not exceed total_steps")
        return self


class DenoiserConfig(BaseModel):
    """Architecture and training budget of the token-conditioned denoiser"""
    architecture: str = Field("unet", pattern="^(unet|mlp)$")
    in_channels: int = Field(3, ge=1)  # flat dimension for the mlp variant
    base_channels: int = Field(32, ge=4)
    depth: int = Field(2, ge=1, le=4)
    time_embed_dim: int = Field(64, ge=8)
    token_drop_prob: float = Field(0.1, gt=0.0, le=1.0)
    lr: float = Field(1e-4, gt=0.0)
    batch_size: int = Field(64, ge=1)
    steps: int = Field(20000, ge=0)
    grad_clip: float = Field(1.0, gt=0.0)
    min_loss_reduction: float = Field(5.0, ge=1.0)
    rng_seed: int = 1


class AdapterConfig(BaseModel):
    """Spatial adapter (frozen-base conditioning branch) settings"""
    hint_channels: int = Field(1, ge=1)
    hint_width: int = Field(16, ge=4)
    lr: float = Field(1e-4, gt=0.0)
    batch_size: int = Field(64, ge=1)
    steps: int = Field(5000, ge=0)
    rng_seed: int = 2


class CycleLossWeights(BaseModel):
    """Weights of the adversarial, cycle and identity terms"""
    adv: float = Field(1.0, ge=0.0)
    cyc: float = Field(10.0, ge=0.0)
    id: float = Field(5.0, ge=0.0)


class TranslatorConfig(BaseModel):
    """Seed translator (sts-GAN) architecture and training schedule"""
    base_channels: int = Field(32, ge=4)
    num_residual_blocks: int = Field(3, ge=0)
    num_downsampling: int = Field(2, ge=0, le=3)
    global_residual: bool = True
    disc_channels: int = Field(32, ge=4)
    weights: CycleLossWeights = Field(default_factory=CycleLossWeights)
    lr: float = Field(2e-4, gt=0.0)
    beta1: float = Field(0.5, ge=0.0, lt=1.0)
    epochs: int = Field(100, ge=0)
    batch_size: int = Field(16, ge=1)
    pool_size: int = Field(50, ge=0)
    val_fraction: float = Field(0.1, gt=0.0, lt=1.0)
    val_mmd_weight: float = Field(1.0, ge=0.0)  # selection score = weight * MMD + cycle L1
    divergence_threshold: float = 1e4
    divergence_patience: int = Field(100, ge=1)
    rng_seed: int = 3


class ProbeConfig(BaseModel):
    """Residual classifier probe trained on images or on their seeds"""
    width: int = Field(32, ge=4)
    num_blocks: int = Field(4, ge=1)
    max_epochs: int = Field(80, ge=1)
    lr: float = Field(1e-3, gt=0.0)
    batch_size: int = Field(64, ge=1)
    val_fraction: float = Field(0.2, gt=0.0, lt=1.0)
    rng_seed: int = 4


class PipelineSettings(BaseModel):
    """End-to-end translation, ablation and sweep settings"""
    omega_inversion: float = Field(1.0, ge=0.0)
    omega_forward: float = Field(5.0, ge=0.0)
    cfg_omegas: List[float] = Field(default_factory=lambda: [1.0, 3.0, 5.0])
    codec: str = Field("identity", pattern="^(identity|autoencoder)$")
    codec_latent_channels: int = Field(4, ge=1)
    codec_steps: int = Field(2000, ge=0)
    batch_size: int = Field(64, ge=1)
    num_workers: int = Field(1, ge=1)
    kid_subset_size: int = Field(100, ge=2)
    kid_num_subsets: int = Field(50, ge=1)
    metric_scale: float = Field(1e3, gt=0.0)
    rng_seed: int = 5


class StsSettings(BaseSettings):
    """
    Complete experiment configuration.
    STS_WORKSPACE sets the run-directory root.
    """

    model_config = SettingsConfigDict(
        env_prefix="STS_",
        env_nested_delimiter="__",
        extra="ignore",
    )

    run_name: str = "default"
    workspace: Path = Path("runs")
    log_level: str = "INFO"
    schedule: ScheduleSettings = Field(default_factory=ScheduleSettings)
    data: TwoDomainDatasetSpec = Field(default_factory=TwoDomainDatasetSpec)
    denoiser: DenoiserConfig = Field(default_factory=DenoiserConfig)
    adapter: AdapterConfig = Field(default_factory=AdapterConfig)
    translator: TranslatorConfig = Field(default_factory=TranslatorConfig)
    probe: ProbeConfig = Field(default_factory=ProbeConfig)
    pipeline: PipelineSettings = Field(default_factory=PipelineSettings)

    @classmethod
    def settings_customise_sources(cls, settings_cls, init_settings, env_settings,
                                   dotenv_settings, file_secret_settings):
        sources = [init_settings, env_settings]
        config_file = _CONFIG_FILE.get()
        if config_file is not None:
            sources.append(TomlConfigSettingsSource(settings_cls, toml_file=config_file))
        return tuple(sources)

    @property
    def run_dir(self) -> Path:
        return self.workspace / self.run_name


def parse_overrides(overrides: Sequence[str]) -> Dict[str, Any]:
    """
    Turn ["pipeline.omega_forward=3.0", ...] into a nested dict.

    Values are decoded as JSON when possible (numbers, booleans, lists) and
    kept as strings otherwise.
    """
    result: Dict[str, Any] = {}
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"Override must look like key=value, got: {item!r}")
        key, raw = item.split("=", 1)
        path = [part for part in key.strip().split(".") if part]
        if not path:
            raise ValueError(f"Override has an empty key: {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = result
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValueError(f"Override {item!r} conflicts with a scalar key")
        node[path[-1]] = value
    return result


def load_settings(config_path: Optional[Path] = None,
                  overrides: Sequence[str] = ()) -> StsSettings:
    """Resolve settings from the config file, environment and overrides"""
    if config_path is not None and not Path(config_path).exists():
        raise FileNotFoundError(f"Config file not found: {config_path}")
    token = _CONFIG_FILE.set(Path(config_path) if config_path is not None else None)
    try:
        settings = StsSettings(**parse_overrides(overrides))
    finally:
        _CONFIG_FILE.reset(token)
    logger.info(f"📋 Resolved settings for run '{settings.run_name}' under {settings.workspace}")
    return settings


_settings: Optional[StsSettings] = None


def get_settings() -> StsSettings:
    """Get the active settings, resolving defaults on first use"""
    global _settings
    if _settings is None:
        _settings = load_settings()
    return _settings


def set_settings(settings: StsSettings) -> Tuple[StsSettings, Optional[StsSettings]]:
    """Install settings as the active instance; returns (new, previous)"""
    global _settings
    previous = _settings
    _settings = settings
    return settings, previous
