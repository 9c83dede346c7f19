"""
Deterministic DDIM Engine
Sampling and inversion with classifier-free guidance over any noise predictor.

All arrays carry a leading batch axis; a LatentState is a batch of states
sharing one timestep. Operations are pure and preserve shape and dtype.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import IntEnum
from typing import List, Optional

import torch

from .schedule import DiffusionSchedule, TimestepPlan

logger = logging.getLogger(__name__)


class DomainToken(IntEnum):
    """Discrete domain label standing in for a text prompt"""
    SOURCE = 0
    TARGET = 1
    NULL = 2

    @classmethod
    def parse(cls, value) -> "DomainToken":
        if isinstance(value, DomainToken):
            return value
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(int(value))


@dataclass(frozen=True)
class Condition:
    """Domain token plus an optional (N, 1, H, W) structure map"""
    domain_token: DomainToken
    spatial_map: Optional[torch.Tensor] = None

    def unconditional(self) -> "Condition":
        """NULL-token branch sharing the same spatial map"""
        return Condition(DomainToken.NULL, self.spatial_map)

    def check_against(self, values: torch.Tensor) -> None:
        if self.spatial_map is None:
            return
        if values.dim() < 3:
            raise ValueError("A spatial map needs a spatial latent, got a flat state")
        if self.spatial_map.shape[0] != values.shape[0] or \
                self.spatial_map.shape[-2:] != values.shape[-2:]:
            raise ValueError(
                f"Spatial map shape {tuple(self.spatial_map.shape)} does not match "
                f"latent shape {tuple(values.shape)}"
            )


@dataclass(frozen=True)
class LatentState:
    """A batch of latents tagged with their timestep; a seed lives at t = T"""
    values: torch.Tensor
    timestep: int

    def __post_init__(self):
        if self.timestep < 0:
            raise ValueError(f"Timestep must be non-negative, got {self.timestep}")
        if not torch.isfinite(self.values).all():
            raise ValueError(f"Latent state at t={self.timestep} has non-finite entries")

    def check_range(self, total_steps: int) -> None:
        if self.timestep > total_steps:
            raise ValueError(f"Timestep {self.timestep} lies outside [0, {total_steps}]")


@dataclass(frozen=True)
class GuidanceConfig:
    """CFG scale with its conditional and unconditional branches"""
    omega: float
    cond: Condition
    uncond: Optional[Condition] = None

    def __post_init__(self):
        if self.omega < 0:
            raise ValueError(f"Guidance scale must be >= 0, got {self.omega}")
        if self.uncond is None:
            object.__setattr__(self, "uncond", self.cond.unconditional())


@dataclass
class Trajectory:
    """Final state of a sampling run and, on request, every intermediate state"""
    final: LatentState
    states: List[LatentState] = field(default_factory=list)


class NoisePredictor(ABC):
    """
    Base class for epsilon-prediction functions.
    Implementations must be deterministic and shape-preserving.
    """

    @abstractmethod
    def predict(self, values: torch.Tensor, timestep: int, condition: Condition) -> torch.Tensor:
        """Predict the noise component of `values` at `timestep`"""

    def __call__(self, values: torch.Tensor, timestep: int, condition: Condition) -> torch.Tensor:
        condition.check_against(values)
        eps = self.predict(values, timestep, condition)
        if eps.shape != values.shape:
            raise ValueError(f"Predictor returned shape {tuple(eps.shape)} for input {tuple(values.shape)}")
        if not torch.isfinite(eps).all():
            raise ValueError(f"Predictor returned non-finite values at t={timestep}")
        return eps


class ZeroPredictor(NoisePredictor):
    """Predicts zero noise everywhere"""

    def predict(self, values, timestep, condition):
        return torch.zeros_like(values)


def _check_abar(name: str, value: float) -> None:
    if not 0.0 < value <= 1.0:
        raise ValueError(f"{name} must lie in (0, 1], got {value}")


def predict_x0(x_t: torch.Tensor, eps: torch.Tensor, abar_t: float) -> torch.Tensor:
    """Denoised estimate (x_t - sqrt(1 - abar_t) * eps) / sqrt(abar_t)"""
    _check_abar("abar_t", abar_t)
    if x_t.shape != eps.shape:
        raise ValueError("x_t and eps must have the same shape")
    return (x_t - math.sqrt(1.0 - abar_t) * eps) / math.sqrt(abar_t)


def ddim_step(x_t: torch.Tensor, eps: torch.Tensor, abar_t: float, abar_prev: float) -> torch.Tensor:
    """One deterministic denoising step from abar_t to the less noisy abar_prev"""
    _check_abar("abar_t", abar_t)
    _check_abar("abar_prev", abar_prev)
    if abar_prev < abar_t:
        raise ValueError(f"Sampling step needs abar_prev >= abar_t, got {abar_prev} < {abar_t}")
    x0 = predict_x0(x_t, eps, abar_t)
    return math.sqrt(abar_prev) * x0 + math.sqrt(1.0 - abar_prev) * eps


def ddim_invert_step(x_t: torch.Tensor, eps: torch.Tensor, abar_t: float, abar_next: float) -> torch.Tensor:
    """One inversion step from abar_t to the noisier abar_next"""
    _check_abar("abar_t", abar_t)
    _check_abar("abar_next", abar_next)
    if abar_next > abar_t:
        raise ValueError(f"Inversion step needs abar_next <= abar_t, got {abar_next} > {abar_t}")
    x0 = predict_x0(x_t, eps, abar_t)
    return math.sqrt(abar_next) * x0 + math.sqrt(1.0 - abar_next) * eps


def cfg_combine(eps_uncond: torch.Tensor, eps_cond: torch.Tensor, omega: float) -> torch.Tensor:
    """eps_uncond + omega * (eps_cond - eps_uncond); exact at omega in {0, 1}"""
    if eps_uncond.shape != eps_cond.shape:
        raise ValueError("Conditional and unconditional predictions differ in shape")
    if omega == 1.0:
        return eps_cond.clone()
    if omega == 0.0:
        return eps_uncond.clone()
    return eps_uncond + omega * (eps_cond - eps_uncond)


def guided_eps(predictor: NoisePredictor, values: torch.Tensor, timestep: int,
               guidance: GuidanceConfig) -> torch.Tensor:
    """Guided prediction; the unconditional branch is skipped when omega = 1"""
    eps_cond = predictor(values, timestep, guidance.cond)
    if guidance.omega == 1.0:
        return eps_cond
    eps_uncond = predictor(values, timestep, guidance.uncond)
    return cfg_combine(eps_uncond, eps_cond, guidance.omega)


def sample(seed: LatentState, predictor: NoisePredictor, plan: TimestepPlan,
           guidance: GuidanceConfig, schedule: DiffusionSchedule,
           return_intermediates: bool = False) -> Trajectory:
    """
    Denoise a seed along the plan in decreasing order.

    The guided epsilon feeds both the x0 estimate and the direction term.

    Args:
        seed: state at the plan's largest timestep
        predictor: noise predictor
        plan: inference timesteps
        guidance: CFG scale and branches
        schedule: schedule providing alpha_bars
        return_intermediates: keep every intermediate state

    Returns:
        Trajectory whose final state has timestep 0
    """
    seed.check_range(schedule.total_steps)
    if seed.timestep != plan.final_step:
        raise ValueError(f"Seed timestep {seed.timestep} does not match plan end {plan.final_step}")
    if plan.total_steps != schedule.total_steps:
        raise ValueError("Plan and schedule disagree on T")

    x = seed.values
    states: List[LatentState] = []
    for t, t_prev in plan.sampling_pairs():
        eps = guided_eps(predictor, x, t, guidance)
        x = ddim_step(x, eps, schedule.alpha_bar(t), schedule.alpha_bar(t_prev))
        if return_intermediates:
            states.append(LatentState(x, t_prev))

    final = LatentState(x, 0)
    return Trajectory(final=final, states=states)


def invert(x0: LatentState, predictor: NoisePredictor, plan: TimestepPlan,
           condition: Condition, schedule: DiffusionSchedule) -> LatentState:
    """
    Map a clean state to its seed along the plan in increasing order.

    Guidance is fixed at omega = 1 (conditional branch only). Each step
    evaluates the predictor at the next, noisier plan timestep on the
    current state.
    """
    x0.check_range(schedule.total_steps)
    if x0.timestep != 0:
        raise ValueError(f"Inversion starts from t=0, got t={x0.timestep}")
    if plan.total_steps != schedule.total_steps:
        raise ValueError("Plan and schedule disagree on T")

    x = x0.values
    for t, t_next in plan.inversion_pairs():
        eps = predictor(x, t_next, condition)
        x = ddim_invert_step(x, eps, schedule.alpha_bar(t), schedule.alpha_bar(t_next))
    return LatentState(x, plan.final_step)
