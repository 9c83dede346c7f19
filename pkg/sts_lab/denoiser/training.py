"""
Epsilon-objective training for the base denoiser and the spatial adapter
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from ..config import AdapterConfig, DenoiserConfig
from ..engine import DomainToken
from ..errors import DivergenceError
from ..schedule import DiffusionSchedule
from .networks import ControlledDenoiser, TinyUNet, attach_spatial_adapter, build_denoiser

logger = logging.getLogger(__name__)

BatchSampler = Callable[[torch.Generator], Tuple[torch.Tensor, torch.Tensor, Optional[torch.Tensor]]]


@dataclass
class TrainState:
    """Everything needed to resume or audit a training run"""
    step: int = 0
    loss_history: List[float] = field(default_factory=list)
    optimizer_state: Optional[dict] = None
    rng_state: Optional[torch.Tensor] = None

    def loss_reduction(self, window_fraction: float = 0.05) -> float:
        """Mean loss over the first window divided by the mean over the last one"""
        if not self.loss_history:
            return 1.0
        window = max(1, int(len(self.loss_history) * window_fraction))
        head = float(np.mean(self.loss_history[:window]))
        tail = float(np.mean(self.loss_history[-window:]))
        return head / tail if tail > 0 else float("inf")


@dataclass
class TrainResult:
    model: nn.Module
    state: TrainState


def _as_tensor(array) -> torch.Tensor:
    if isinstance(array, torch.Tensor):
        return array
    return torch.from_numpy(np.ascontiguousarray(array))


def drop_tokens(tokens: torch.Tensor, drop_prob: float, generator: torch.Generator) -> torch.Tensor:
    """Replace each token by NULL with probability drop_prob; always draws one uniform per token"""
    mask = torch.rand(tokens.shape, generator=generator) < drop_prob
    return torch.where(mask, torch.full_like(tokens, int(DomainToken.NULL)), tokens)


def epsilon_loss(model: nn.Module, x0: torch.Tensor, timesteps: torch.Tensor, tokens: torch.Tensor,
                 noise: torch.Tensor, alpha_bars: torch.Tensor,
                 spatial_map: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Mean squared error between the true and predicted noise of
    x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise.
    """
    abar = alpha_bars[timesteps].to(x0.dtype).view(-1, *([1] * (x0.dim() - 1)))
    x_t = abar.sqrt() * x0 + (1.0 - abar).sqrt() * noise
    if spatial_map is None:
        prediction = model(x_t, timesteps, tokens)
    else:
        prediction = model(x_t, timesteps, tokens, spatial_map=spatial_map)
    return F.mse_loss(prediction, noise)


def write_loss_log(history: Sequence[float], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"step": np.arange(1, len(history) + 1), "loss": list(history)}).to_csv(
        path, index=False, float_format="%.8f"
    )


def _fit(model: nn.Module, parameters: List[nn.Parameter], sample_batch: BatchSampler,
         schedule: DiffusionSchedule, lr: float, steps: int, grad_clip: float,
         rng_seed: int, desc: str) -> TrainState:
    generator = torch.Generator().manual_seed(rng_seed)
    device = parameters[0].device
    alpha_bars = torch.from_numpy(np.array(schedule.alpha_bars)).to(device)
    optimizer = torch.optim.Adam(parameters, lr=lr)
    history: List[float] = []

    model.train()
    progress = tqdm(range(steps), desc=desc, leave=False)
    for step in progress:
        x0, tokens, spatial_map = sample_batch(generator)
        n = x0.shape[0]
        timesteps = torch.randint(1, schedule.total_steps + 1, (n,), generator=generator)
        noise = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)

        loss = epsilon_loss(
            model, x0.to(device), timesteps.to(device), tokens.to(device), noise.to(device), alpha_bars,
            spatial_map=None if spatial_map is None else spatial_map.to(device),
        )
        if not torch.isfinite(loss):
            raise DivergenceError(f"Non-finite {desc} loss at step {step}", step=step)

        optimizer.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_(parameters, max_norm=grad_clip)
        optimizer.step()

        history.append(loss.item())
        progress.set_postfix(loss=f"{loss.item():.4f}")
    model.eval()

    return TrainState(step=steps, loss_history=history,
                      optimizer_state=optimizer.state_dict(), rng_state=generator.get_state())


def _check_inputs(images: torch.Tensor, labels: torch.Tensor, budget: int) -> None:
    if images.shape[0] == 0:
        raise ValueError("Training set is empty")
    if labels.shape[0] != images.shape[0]:
        raise ValueError("images and labels differ in length")
    if budget < 0:
        raise ValueError(f"budget must be non-negative, got {budget}")


def _report(name: str, state: TrainState, min_reduction: float) -> None:
    if not state.loss_history:
        logger.info(f"⚠️ {name}: zero-step budget, returning the initialised network")
        return
    reduction = state.loss_reduction()
    logger.info(
        f"✅ {name} trained for {state.step} steps: loss {state.loss_history[0]:.4f} -> "
        f"{state.loss_history[-1]:.4f} (x{reduction:.1f} reduction)"
    )
    if reduction < min_reduction:
        logger.warning(f"⚠️ {name} loss fell only x{reduction:.1f}, expected at least x{min_reduction:.1f}")


def train_denoiser(images, labels, schedule: DiffusionSchedule, config: DenoiserConfig,
                   budget: Optional[int] = None, loss_log: Optional[Path] = None) -> TrainResult:
    """
    Train a pooled, token-conditioned epsilon predictor.

    Args:
        images: (N, C, H, W) images, or (N, D) points for the mlp variant
        labels: (N,) domain tokens, SOURCE or TARGET
        schedule: training noise schedule
        config: architecture and optimisation settings
        budget: optimisation steps (defaults to config.steps); 0 returns the untrained network
        loss_log: optional CSV path for the per-step loss

    Returns:
        TrainResult with the trained network and its TrainState
    """
    images = _as_tensor(images).float() if config.architecture == "unet" else _as_tensor(images)
    labels = _as_tensor(labels).long()
    budget = config.steps if budget is None else budget
    _check_inputs(images, labels, budget)

    model = build_denoiser(config)
    if images.dtype == torch.float64:
        model = model.double()

    def sample_batch(generator):
        idx = torch.randint(0, images.shape[0], (config.batch_size,), generator=generator)
        return images[idx], drop_tokens(labels[idx], config.token_drop_prob, generator), None

    state = _fit(model, list(model.parameters()), sample_batch, schedule, config.lr, budget,
                 config.grad_clip, config.rng_seed, desc="denoiser")
    if loss_log is not None:
        write_loss_log(state.loss_history, loss_log)
    _report("Denoiser", state, config.min_loss_reduction)
    return TrainResult(model=model, state=state)


def train_adapter(images, labels, edge_maps, base: TinyUNet, schedule: DiffusionSchedule,
                  config: AdapterConfig, denoiser_config: DenoiserConfig,
                  budget: Optional[int] = None, loss_log: Optional[Path] = None) -> TrainResult:
    """
    Train a spatial adapter on top of a frozen base with the same epsilon
    objective, supplying each sample's edge map.
    """
    images = _as_tensor(images).float()
    labels = _as_tensor(labels).long()
    edge_maps = _as_tensor(edge_maps).float()
    budget = config.steps if budget is None else budget
    _check_inputs(images, labels, budget)
    if edge_maps.shape[0] != images.shape[0] or edge_maps.shape[-2:] != images.shape[-2:]:
        raise ValueError(f"Edge maps {tuple(edge_maps.shape)} do not match images {tuple(images.shape)}")

    model: ControlledDenoiser = attach_spatial_adapter(base, config)
    parameters = list(model.adapter.parameters())

    def sample_batch(generator):
        idx = torch.randint(0, images.shape[0], (config.batch_size,), generator=generator)
        tokens = drop_tokens(labels[idx], denoiser_config.token_drop_prob, generator)
        return images[idx], tokens, edge_maps[idx]

    state = _fit(model, parameters, sample_batch, schedule, config.lr, budget,
                 denoiser_config.grad_clip, config.rng_seed, desc="adapter")
    if loss_log is not None:
        write_loss_log(state.loss_history, loss_log)
    _report("Spatial adapter", state, 1.0)
    return TrainResult(model=model, state=state)
