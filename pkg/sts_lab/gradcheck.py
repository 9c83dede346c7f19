"""
Directional gradient checks
Compares autograd directional derivatives of a scalar loss with central
finite differences along random parameter directions, in float64.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List

import torch
import torch.nn as nn
from torch.func import functional_call

logger = logging.getLogger(__name__)


@dataclass
class GradcheckReport:
    relative_errors: List[float]

    @property
    def max_relative_error(self) -> float:
        return max(self.relative_errors) if self.relative_errors else 0.0

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_relative_error <= tolerance


def directional_gradcheck(module: nn.Module, loss_fn: Callable[[nn.Module, Dict[str, torch.Tensor]], torch.Tensor],
                          num_directions: int = 50, eps: float = 1e-6, rng_seed: int = 0,
                          floor: float = 1e-10) -> GradcheckReport:
    """
    Args:
        module: float64 module whose trainable parameters are perturbed
        loss_fn: maps (module, parameter dict) to a scalar loss; call the
            module through `functional_call(module, params, args)`
        num_directions: random unit directions to test
        eps: finite-difference step
        rng_seed: seed for the directions
        floor: absolute floor of the relative-error denominator

    Returns:
        GradcheckReport with one relative error per direction
    """
    params = {name: p.detach().clone().requires_grad_(True)
              for name, p in module.named_parameters() if p.requires_grad}
    if any(p.dtype != torch.float64 for p in params.values()):
        raise ValueError("Gradient checks need a float64 module")

    loss = loss_fn(module, params)
    grads = torch.autograd.grad(loss, list(params.values()))

    generator = torch.Generator().manual_seed(rng_seed)
    errors = []
    for _ in range(num_directions):
        direction = {name: torch.randn(p.shape, generator=generator, dtype=torch.float64)
                     for name, p in params.items()}
        norm = torch.sqrt(sum((d ** 2).sum() for d in direction.values()))
        direction = {name: d / norm for name, d in direction.items()}

        analytic = float(sum((g * direction[name]).sum() for g, name in zip(grads, params)))
        with torch.no_grad():
            plus = {name: p + eps * direction[name] for name, p in params.items()}
            minus = {name: p - eps * direction[name] for name, p in params.items()}
            numeric = float(loss_fn(module, plus) - loss_fn(module, minus)) / (2 * eps)
        errors.append(abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor))

    report = GradcheckReport(relative_errors=errors)
    logger.info(f"📊 Gradient check over {num_directions} directions: max rel error {report.max_relative_error:.2e}")
    return report


def call_with(module: nn.Module, params: Dict[str, torch.Tensor], *args, **kwargs):
    """Run `module` with substituted parameters (buffers are kept)"""
    return functional_call(module, params, args, kwargs)
