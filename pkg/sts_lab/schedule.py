"""
Diffusion noise schedule and DDIM timestep plans.

alpha_bars follows the cumulative-product convention: alpha_bars[0] = 1 and
alpha_bars[t] = prod_{s <= t} (1 - beta_s), so the last sampling step always
targets a noiseless state.
"""

import logging
from dataclasses import dataclass
from typing import Iterator, Tuple

import numpy as np

logger = logging.getLogger(__name__)

RATIO_TOLERANCE = 1e-12


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-timestep variances and cumulative signal coefficients (read-only arrays)"""
    total_steps: int
    betas: np.ndarray        # length T, betas[t - 1] is beta_t
    alpha_bars: np.ndarray   # length T + 1

    def __post_init__(self):
        if self.betas.shape != (self.total_steps,):
            raise ValueError(f"Expected {self.total_steps} betas, got shape {self.betas.shape}")
        if self.alpha_bars.shape != (self.total_steps + 1,):
            raise ValueError("alpha_bars must hold T + 1 entries")
        if self.alpha_bars[0] != 1.0:
            raise ValueError("alpha_bars[0] must equal 1")
        if np.any(np.diff(self.alpha_bars) >= 0) or np.any(self.alpha_bars <= 0):
            raise ValueError("alpha_bars must be strictly decreasing within (0, 1]")
        ratios = self.alpha_bars[1:] / self.alpha_bars[:-1]
        if np.max(np.abs(ratios - (1.0 - self.betas))) > RATIO_TOLERANCE:
            raise ValueError("alpha_bars is inconsistent with betas")
        self.betas.setflags(write=False)
        self.alpha_bars.setflags(write=False)

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.total_steps:
            raise ValueError(f"Timestep {t} outside [0, {self.total_steps}]")
        return float(self.alpha_bars[t])

    def beta(self, t: int) -> float:
        if not 1 <= t <= self.total_steps:
            raise ValueError(f"Timestep {t} outside [1, {self.total_steps}]")
        return float(self.betas[t - 1])


@dataclass(frozen=True)
class TimestepPlan:
    """Strictly increasing inference timesteps ending at T"""
    steps: Tuple[int, ...]
    total_steps: int

    def __post_init__(self):
        if not self.steps:
            raise ValueError("A timestep plan needs at least one step")
        if any(b <= a for a, b in zip(self.steps, self.steps[1:])):
            raise ValueError("Plan steps must be strictly increasing")
        if self.steps[0] < 1 or self.steps[-1] != self.total_steps:
            raise ValueError(f"Plan steps must lie in [1, {self.total_steps}] and end at T")

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def final_step(self) -> int:
        return self.steps[-1]

    def sampling_pairs(self) -> Iterator[Tuple[int, int]]:
        """(t, t_prev) pairs in decreasing order; t_prev = 0 below the smallest entry"""
        for i in range(len(self.steps) - 1, -1, -1):
            yield self.steps[i], self.steps[i - 1] if i > 0 else 0

    def inversion_pairs(self) -> Iterator[Tuple[int, int]]:
        """(t, t_next) pairs in increasing order starting from t = 0"""
        for i, t_next in enumerate(self.steps):
            yield self.steps[i - 1] if i > 0 else 0, t_next


def build_schedule(total_steps: int, beta_start: float, beta_end: float) -> DiffusionSchedule:
    """
    Build a linear beta ramp and its cumulative products.

    Args:
        total_steps: number of training timesteps T
        beta_start: beta_1
        beta_end: beta_T

    Returns:
        DiffusionSchedule with alpha_bars[0] = 1
    """
    if not isinstance(total_steps, (int, np.integer)) or total_steps < 1:
        raise ValueError(f"total_steps must be a positive integer, got {total_steps!r}")
    if not (0.0 < beta_start < 1.0 and 0.0 < beta_end < 1.0):
        raise ValueError("betas must lie in (0, 1)")
    if beta_start > beta_end:
        raise ValueError("beta_start must not exceed beta_end")

    betas = np.linspace(beta_start, beta_end, int(total_steps), dtype=np.float64)
    alpha_bars = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return DiffusionSchedule(total_steps=int(total_steps), betas=betas, alpha_bars=alpha_bars)


def betas_from_alpha_bars(alpha_bars: np.ndarray) -> np.ndarray:
    """Recover per-step betas from cumulative products"""
    alpha_bars = np.asarray(alpha_bars, dtype=np.float64)
    return 1.0 - alpha_bars[1:] / alpha_bars[:-1]


def plan_timesteps(schedule: DiffusionSchedule, num_inference_steps: int) -> TimestepPlan:
    """
    Uniform-stride plan anchored at T: stride = floor(T / S),
    steps = T - stride * (S - 1), ..., T - stride, T.
    """
    total = schedule.total_steps
    if num_inference_steps < 1:
        raise ValueError("num_inference_steps must be at least 1")
    if num_inference_steps > total:
        raise ValueError(f"num_inference_steps={num_inference_steps} exceeds total_steps={total}")

    stride = total // num_inference_steps
    steps = tuple(int(total - stride * k) for k in range(num_inference_steps - 1, -1, -1))
    return TimestepPlan(steps=steps, total_steps=total)
