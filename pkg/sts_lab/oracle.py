"""
Analytic Gaussian-mixture oracle.

For data x0 ~ sum_k w_k N(mu_k, diag(s_k)) and x_t = sqrt(a) x0 + sqrt(1 - a) n,
the posterior mean E[x0 | x_t] and the optimal noise prediction are available
in closed form. The oracle is the exact test bed for the DDIM engine.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence

import torch

from .engine import Condition, DomainToken, NoisePredictor
from .schedule import DiffusionSchedule

logger = logging.getLogger(__name__)

WEIGHT_TOLERANCE = 1e-12


@dataclass(frozen=True)
class GaussianMixture:
    """Diagonal-covariance mixture; all tensors float64"""
    weights: torch.Tensor    # (K,)
    means: torch.Tensor      # (K, D)
    variances: torch.Tensor  # (K, D)

    def __post_init__(self):
        k = self.weights.shape[0]
        if self.means.dim() != 2 or self.means.shape[0] != k:
            raise ValueError("means must have shape (K, D)")
        if self.variances.shape != self.means.shape:
            raise ValueError("variances must match means in shape")
        if torch.any(self.weights < 0) or abs(float(self.weights.sum()) - 1.0) > WEIGHT_TOLERANCE:
            raise ValueError("weights must be non-negative and sum to 1")
        if torch.any(self.variances <= 0):
            raise ValueError("variances must be strictly positive")

    @classmethod
    def create(cls, weights: Sequence[float], means, variances) -> "GaussianMixture":
        return cls(
            weights=torch.as_tensor(weights, dtype=torch.float64),
            means=torch.as_tensor(means, dtype=torch.float64),
            variances=torch.as_tensor(variances, dtype=torch.float64),
        )

    @classmethod
    def isotropic(cls, mean, variance: float = 1.0) -> "GaussianMixture":
        """Single Gaussian N(mean, variance * I)"""
        mean = torch.as_tensor(mean, dtype=torch.float64).reshape(1, -1)
        return cls(torch.ones(1, dtype=torch.float64), mean, torch.full_like(mean, variance))

    @property
    def num_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def mean(self) -> torch.Tensor:
        return self.weights @ self.means


def pool_mixtures(mixtures: Sequence[GaussianMixture]) -> GaussianMixture:
    """Equal-weight union of mixtures (the unconditional data distribution)"""
    share = 1.0 / len(mixtures)
    weights = torch.cat([m.weights * share for m in mixtures])
    weights = weights / weights.sum()
    return GaussianMixture(
        weights=weights,
        means=torch.cat([m.means for m in mixtures]),
        variances=torch.cat([m.variances for m in mixtures]),
    )


def gmm_posterior_mean(gmm: GaussianMixture, x: torch.Tensor, abar_t: float) -> torch.Tensor:
    """
    E[x0 | x_t = x] with log-sum-exp stabilised responsibilities.

    Args:
        gmm: data distribution
        x: (D,) or (N, D) noisy points
        abar_t: cumulative signal coefficient in (0, 1]
    """
    if not 0.0 < abar_t <= 1.0:
        raise ValueError(f"abar_t must lie in (0, 1], got {abar_t}")
    if abar_t == 1.0:
        return x.clone()

    squeeze = x.dim() == 1
    points = x.reshape(1, -1) if squeeze else x
    points = points.to(torch.float64)
    sqrt_a = math.sqrt(abar_t)

    marginal_var = abar_t * gmm.variances + (1.0 - abar_t)          # (K, D)
    if torch.any(marginal_var <= 0) or not torch.isfinite(marginal_var).all():
        raise ValueError("Degenerate marginal covariance")

    centred = points[:, None, :] - sqrt_a * gmm.means[None, :, :]    # (N, K, D)
    log_lik = -0.5 * ((centred ** 2) / marginal_var + torch.log(2 * math.pi * marginal_var)).sum(-1)
    log_resp = torch.log(gmm.weights)[None, :] + log_lik
    resp = torch.softmax(log_resp, dim=1)                            # (N, K)

    component_means = gmm.means[None] + sqrt_a * (gmm.variances / marginal_var)[None] * centred
    posterior = (resp[..., None] * component_means).sum(1)
    posterior = posterior.to(x.dtype)
    return posterior[0] if squeeze else posterior


def gmm_optimal_eps(gmm: GaussianMixture, x: torch.Tensor, abar_t: float) -> torch.Tensor:
    """Exact minimiser of the epsilon objective: (x - sqrt(a) E[x0|x]) / sqrt(1 - a)"""
    if not 0.0 < abar_t < 1.0:
        raise ValueError(f"abar_t must lie in (0, 1) for the optimal eps, got {abar_t}")
    posterior = gmm_posterior_mean(gmm, x, abar_t)
    return (x - math.sqrt(abar_t) * posterior) / math.sqrt(1.0 - abar_t)


def sample_gmm(gmm: GaussianMixture, n: int, rng_seed: int) -> torch.Tensor:
    """Draw n points (float64) reproducibly from the mixture"""
    if n < 1:
        raise ValueError("n must be at least 1")
    generator = torch.Generator().manual_seed(int(rng_seed))
    components = torch.multinomial(gmm.weights, n, replacement=True, generator=generator)
    noise = torch.randn(n, gmm.dim, generator=generator, dtype=torch.float64)
    return gmm.means[components] + gmm.variances[components].sqrt() * noise


class GmmOraclePredictor(NoisePredictor):
    """
    Bayes-optimal noise predictor for per-token mixtures.
    The NULL token uses the pooled mixture unless one is given explicitly.
    """

    def __init__(self, mixtures: Mapping[DomainToken, GaussianMixture], schedule: DiffusionSchedule):
        self.schedule = schedule
        self.mixtures: Dict[DomainToken, GaussianMixture] = dict(mixtures)
        if DomainToken.NULL not in self.mixtures:
            self.mixtures[DomainToken.NULL] = pool_mixtures(list(self.mixtures.values()))

    @classmethod
    def unconditional(cls, gmm: GaussianMixture, schedule: DiffusionSchedule) -> "GmmOraclePredictor":
        """Same mixture for every token"""
        return cls({token: gmm for token in DomainToken}, schedule)

    def mixture_for(self, condition: Optional[Condition]) -> GaussianMixture:
        token = DomainToken.NULL if condition is None else condition.domain_token
        if token not in self.mixtures:
            raise ValueError(f"No mixture registered for token {token.name}")
        return self.mixtures[token]

    def predict(self, values, timestep, condition):
        if timestep < 1:
            raise ValueError("The oracle is defined for timesteps >= 1 only")
        gmm = self.mixture_for(condition)
        flat = values.reshape(values.shape[0], -1)
        eps = gmm_optimal_eps(gmm, flat, self.schedule.alpha_bar(timestep))
        return eps.reshape(values.shape)
