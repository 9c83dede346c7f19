"""
Seed datasets and sts-GAN training
Cycle-consistent unpaired translation between collections of inverted seeds.
"""

import copy
import hashlib
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from ..config import CycleLossWeights, TranslatorConfig
from ..engine import Condition, DomainToken, LatentState, NoisePredictor, invert
from ..errors import DivergenceError, ProvenanceError
from ..metrics import mmd_rbf
from ..schedule import DiffusionSchedule, TimestepPlan
from ..workspace_manager import WorkspaceManager, array_digest
from .networks import Direction, SeedTranslator

logger = logging.getLogger(__name__)

TRANSLATOR_KIND = "translator"
INVERSION_OMEGA = 1.0


@dataclass(frozen=True)
class SeedProvenance:
    """How a seed collection was produced"""
    checkpoint_id: str
    plan: Tuple[int, ...]
    total_steps: int
    domain_token: int
    omega: float = INVERSION_OMEGA
    spatial: bool = False
    source_digest: str = ""

    def compatible_with(self, other: "SeedProvenance") -> bool:
        return (self.checkpoint_id, self.plan, self.total_steps, self.spatial) == \
            (other.checkpoint_id, other.plan, other.total_steps, other.spatial)

    def to_dict(self) -> Dict:
        payload = asdict(self)
        payload["plan"] = list(self.plan)
        return payload

    @classmethod
    def from_dict(cls, payload: Dict) -> "SeedProvenance":
        payload = dict(payload)
        payload["plan"] = tuple(payload["plan"])
        return cls(**payload)


@dataclass
class SeedDataset:
    """Seeds at timestep T, (N, C, H, W), with their provenance"""
    seeds: torch.Tensor
    provenance: SeedProvenance

    def __len__(self) -> int:
        return self.seeds.shape[0]

    @property
    def seed_shape(self) -> Tuple[int, ...]:
        return tuple(self.seeds.shape[1:])

    def fingerprint(self) -> str:
        return hashlib.sha256(self.seeds.detach().cpu().contiguous().numpy().tobytes()).hexdigest()[:16]

    def save(self, workspace: WorkspaceManager, name: str) -> None:
        workspace.save_array(f"seeds/{name}", self.seeds, role=f"seeds:{DomainToken(self.provenance.domain_token).name}")
        workspace.save_json(f"seeds/{name}.provenance.json", self.provenance.to_dict())

    @classmethod
    def load(cls, workspace: WorkspaceManager, name: str) -> "SeedDataset":
        seeds = torch.from_numpy(workspace.load_array(f"seeds/{name}"))
        provenance = SeedProvenance.from_dict(workspace.load_json(f"seeds/{name}.provenance.json"))
        return cls(seeds=seeds, provenance=provenance)


def build_seed_dataset(images, predictor: NoisePredictor, plan: TimestepPlan, token: DomainToken,
                       schedule: DiffusionSchedule, spatial_maps: Optional[torch.Tensor] = None,
                       batch_size: int = 64) -> SeedDataset:
    """
    Invert every image with the domain's own token at omega = 1.

    Args:
        images: (N, C, H, W) clean latents
        predictor: trained noise predictor
        plan: inversion timesteps
        token: SOURCE or TARGET
        schedule: noise schedule
        spatial_maps: optional (N, 1, H, W) structure maps, one per image
        batch_size: images inverted per engine call

    Returns:
        SeedDataset with provenance
    """
    token = DomainToken.parse(token)
    if token == DomainToken.NULL:
        raise ValueError("Seeds must be inverted with a domain token, not NULL")
    images = torch.as_tensor(images)
    if spatial_maps is not None and spatial_maps.shape[0] != images.shape[0]:
        raise ValueError("One spatial map per image is required")

    provenance = SeedProvenance(
        checkpoint_id=getattr(predictor, "checkpoint_id", None) or type(predictor).__name__,
        plan=tuple(plan.steps),
        total_steps=plan.total_steps,
        domain_token=int(token),
        spatial=spatial_maps is not None,
        source_digest=array_digest(images),
    )
    chunks: List[torch.Tensor] = []
    for start in tqdm(range(0, images.shape[0], batch_size), desc=f"invert {token.name}", leave=False):
        batch = images[start:start + batch_size]
        hint = None if spatial_maps is None else spatial_maps[start:start + batch_size]
        seed = invert(LatentState(batch, 0), predictor, plan, Condition(token, hint), schedule)
        chunks.append(seed.values)

    seeds = torch.cat(chunks) if chunks else images.new_zeros((0, *images.shape[1:]))
    logger.info(f"✅ Inverted {len(seeds)} {token.name} images to seeds at t={plan.final_step}")
    return SeedDataset(seeds=seeds, provenance=provenance)


@dataclass
class CycleLosses:
    """Generator-side loss terms of one step"""
    adv_A: torch.Tensor
    adv_B: torch.Tensor
    cyc_A: torch.Tensor
    cyc_B: torch.Tensor
    id_A: torch.Tensor
    id_B: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> Dict[str, float]:
        return {name: float(value.detach()) for name, value in vars(self).items()}


def _lsgan(prediction: torch.Tensor, target: float) -> torch.Tensor:
    return F.mse_loss(prediction, torch.full_like(prediction, target))


def cycle_losses(batch_a: torch.Tensor, batch_b: torch.Tensor, translator: SeedTranslator,
                 weights: Optional[CycleLossWeights] = None) -> CycleLosses:
    """
    Least-squares adversarial, L1 cycle and L1 identity terms.

    cyc_A = |G_BA(G_AB(a)) - a|, id_A = |G_BA(a) - a|, adv_B scores G_AB(a) with D_B.
    """
    weights = weights or CycleLossWeights()
    if batch_a.shape[0] == 0 or batch_b.shape[0] == 0:
        raise ValueError("cycle_losses needs non-empty batches")

    fake_b = translator.g_ab(batch_a)
    fake_a = translator.g_ba(batch_b)
    adv_b = _lsgan(translator.d_b(fake_b), 1.0)
    adv_a = _lsgan(translator.d_a(fake_a), 1.0)
    cyc_a = F.l1_loss(translator.g_ba(fake_b), batch_a)
    cyc_b = F.l1_loss(translator.g_ab(fake_a), batch_b)
    id_a = F.l1_loss(translator.g_ba(batch_a), batch_a)
    id_b = F.l1_loss(translator.g_ab(batch_b), batch_b)

    total = (weights.adv * (adv_a + adv_b)
             + weights.cyc * (cyc_a + cyc_b)
             + weights.id * (id_a + id_b))
    if not torch.isfinite(total):
        raise DivergenceError("Non-finite sts-GAN generator loss")
    return CycleLosses(adv_A=adv_a, adv_B=adv_b, cyc_A=cyc_a, cyc_B=cyc_b, id_A=id_a, id_B=id_b, total=total)


def discriminator_loss(real_a, real_b, fake_a, fake_b, translator: SeedTranslator) -> torch.Tensor:
    """Least-squares critic loss: real patches toward 1, generated toward 0"""
    loss = (_lsgan(translator.d_a(real_a), 1.0) + _lsgan(translator.d_a(fake_a), 0.0)
            + _lsgan(translator.d_b(real_b), 1.0) + _lsgan(translator.d_b(fake_b), 0.0))
    if not torch.isfinite(loss):
        raise DivergenceError("Non-finite sts-GAN discriminator loss")
    return loss


class ReplayBuffer:
    """
    Pool of past generated seeds for the discriminator. Each incoming sample
    is returned directly or swapped for a stored one with probability 0.5.
    """

    def __init__(self, max_size: int, generator: torch.Generator):
        self.max_size = max_size
        self.generator = generator
        self.data: List[torch.Tensor] = []

    def push_and_pop(self, batch: torch.Tensor) -> torch.Tensor:
        batch = batch.detach()
        if self.max_size == 0:
            return batch
        result = []
        for element in batch:
            if len(self.data) < self.max_size:
                self.data.append(element)
                result.append(element)
            elif torch.rand(1, generator=self.generator).item() > 0.5:
                i = int(torch.randint(0, self.max_size, (1,), generator=self.generator))
                result.append(self.data[i].clone())
                self.data[i] = element
            else:
                result.append(element)
        return torch.stack(result)


@dataclass
class TranslatorTrainResult:
    translator: SeedTranslator
    history: pd.DataFrame
    validation: pd.DataFrame
    best_epoch: int
    best_score: float
    provenance: Dict = field(default_factory=dict)


def _split(n: int, fraction: float, generator: torch.Generator) -> Tuple[torch.Tensor, torch.Tensor]:
    order = torch.randperm(n, generator=generator)
    if n < 2:
        return order, order
    n_val = min(max(1, int(round(fraction * n))), n - 1)
    return order[n_val:], order[:n_val]


def _apply(module: nn.Module, seeds: torch.Tensor, batch_size: int = 256) -> torch.Tensor:
    with torch.no_grad():
        return torch.cat([module(seeds[i:i + batch_size]) for i in range(0, len(seeds), batch_size)])


def validation_score(translator: SeedTranslator, val_a: torch.Tensor, val_b: torch.Tensor,
                     mmd_weight: float = 1.0) -> Dict[str, float]:
    """
    Weighted MMD of translated seeds to the other domain plus the held-out L1
    cycle error, both directions. The MMD is the unit-scale multi-bandwidth
    estimate (0 for matched sets), the cycle error a per-element mean.
    """
    translator.eval()
    fake_b = _apply(translator.g_ab, val_a)
    fake_a = _apply(translator.g_ba, val_b)
    cyc_a = float((_apply(translator.g_ba, fake_b) - val_a).abs().mean())
    cyc_b = float((_apply(translator.g_ab, fake_a) - val_b).abs().mean())
    if len(val_a) >= 2 and len(val_b) >= 2:
        mmd = mmd_rbf(fake_b, val_b) + mmd_rbf(fake_a, val_a)
    else:
        mmd = 0.0
    translator.train()
    return {"mmd": mmd, "cycle": cyc_a + cyc_b, "score": mmd_weight * mmd + cyc_a + cyc_b}


def train_sts_gan(seeds_a: SeedDataset, seeds_b: SeedDataset, config: TranslatorConfig,
                  budget: Optional[int] = None, loss_log: Optional[Path] = None) -> TranslatorTrainResult:
    """
    Train G_AB / G_BA with alternating generator and discriminator updates.

    Args:
        seeds_a: source-domain seeds
        seeds_b: target-domain seeds, same denoiser and plan as seeds_a
        config: architecture, loss weights and optimisation schedule
        budget: epochs (defaults to config.epochs)
        loss_log: optional CSV path for per-step losses

    Returns:
        TranslatorTrainResult holding the best checkpoint by validation score
    """
    epochs = config.epochs if budget is None else budget
    if len(seeds_a) == 0 or len(seeds_b) == 0:
        raise ValueError("train_sts_gan needs non-empty seed datasets")
    if not seeds_a.provenance.compatible_with(seeds_b.provenance):
        raise ProvenanceError("Seed datasets were inverted with different denoisers or plans")
    if seeds_a.seed_shape != seeds_b.seed_shape:
        raise ValueError(f"Seed shapes differ: {seeds_a.seed_shape} vs {seeds_b.seed_shape}")
    if epochs < 0:
        raise ValueError("budget must be non-negative")

    generator = torch.Generator().manual_seed(config.rng_seed)
    train_a_idx, val_a_idx = _split(len(seeds_a), config.val_fraction, generator)
    train_b_idx, val_b_idx = _split(len(seeds_b), config.val_fraction, generator)
    all_a, all_b = seeds_a.seeds.float(), seeds_b.seeds.float()
    train_a, val_a = all_a[train_a_idx], all_a[val_a_idx]
    train_b, val_b = all_b[train_b_idx], all_b[val_b_idx]

    translator = SeedTranslator.build(config, seeds_a.seed_shape, seeds_a.provenance.total_steps)
    g_params, d_params = translator.generator_parameters(), translator.discriminator_parameters()
    opt_g = torch.optim.Adam(g_params, lr=config.lr, betas=(config.beta1, 0.999))
    opt_d = torch.optim.Adam(d_params, lr=config.lr, betas=(config.beta1, 0.999))
    decay_start = epochs // 2
    decay_epochs = max(1, epochs - decay_start)

    def linear_decay(epoch):
        return 1.0 - max(0, epoch - decay_start) / decay_epochs

    sched_g = torch.optim.lr_scheduler.LambdaLR(opt_g, lr_lambda=linear_decay)
    sched_d = torch.optim.lr_scheduler.LambdaLR(opt_d, lr_lambda=linear_decay)
    pool_a = ReplayBuffer(config.pool_size, generator)
    pool_b = ReplayBuffer(config.pool_size, generator)

    # the untrained translator is scored for reference but only wins when no epoch runs
    best_state = copy.deepcopy(translator.state_dict())
    best = validation_score(translator, val_a, val_b, config.val_mmd_weight)
    best_epoch = 0
    validation_rows = [{"epoch": 0, **best}]
    rows = []
    exploding = 0
    step = 0
    batch_size = config.batch_size
    num_batches = max(1, -(-max(len(train_a), len(train_b)) // batch_size))

    translator.train()
    for epoch in tqdm(range(1, epochs + 1), desc="sts-gan", leave=False):
        perm_a = torch.randperm(len(train_a), generator=generator)
        perm_b = torch.randperm(len(train_b), generator=generator)
        for i in range(num_batches):
            positions = torch.arange(i * batch_size, (i + 1) * batch_size)
            real_a = train_a[perm_a[positions % len(train_a)]]
            real_b = train_b[perm_b[positions % len(train_b)]]

            losses = cycle_losses(real_a, real_b, translator, config.weights)
            opt_g.zero_grad()
            losses.total.backward()
            opt_g.step()

            with torch.no_grad():
                fake_b = translator.g_ab(real_a)
                fake_a = translator.g_ba(real_b)
            loss_d = discriminator_loss(real_a, real_b, pool_a.push_and_pop(fake_a),
                                        pool_b.push_and_pop(fake_b), translator)
            opt_d.zero_grad()
            loss_d.backward()
            opt_d.step()

            step += 1
            total = float(losses.total.detach())
            exploding = exploding + 1 if total > config.divergence_threshold else 0
            if exploding >= config.divergence_patience:
                raise DivergenceError(
                    f"sts-GAN loss above {config.divergence_threshold:g} for {exploding} consecutive steps",
                    step=step,
                )
            rows.append({"epoch": epoch, "step": step, **losses.as_floats(),
                         "loss_d": float(loss_d.detach()), "lr": opt_g.param_groups[0]["lr"]})

        sched_g.step()
        sched_d.step()
        scores = validation_score(translator, val_a, val_b, config.val_mmd_weight)
        validation_rows.append({"epoch": epoch, **scores})
        if best_epoch == 0 or scores["score"] < best["score"]:
            best, best_epoch = scores, epoch
            best_state = copy.deepcopy(translator.state_dict())

    translator.load_state_dict(best_state)
    translator.eval()
    history = pd.DataFrame(rows)
    if loss_log is not None:
        Path(loss_log).parent.mkdir(parents=True, exist_ok=True)
        history.to_csv(loss_log, index=False, float_format="%.8f")
    logger.info(
        f"✅ sts-GAN trained for {epochs} epochs; best epoch {best_epoch} "
        f"(mmd {best['mmd']:.5f}, cycle {best['cycle']:.5f})"
    )
    return TranslatorTrainResult(
        translator=translator, history=history, validation=pd.DataFrame(validation_rows),
        best_epoch=best_epoch, best_score=best["score"], provenance=seeds_a.provenance.to_dict(),
    )


def translate_seed(translator: SeedTranslator, z: LatentState, direction: Direction = Direction.A2B,
                   batch_size: int = 256) -> LatentState:
    """Map a batch of seeds at T to the other domain; the timestep is preserved"""
    if translator.total_steps and z.timestep != translator.total_steps:
        raise ValueError(f"Seeds live at t={translator.total_steps}, got t={z.timestep}")
    if translator.seed_shape and tuple(z.values.shape[1:]) != translator.seed_shape:
        raise ValueError(f"Seed shape {tuple(z.values.shape[1:])} does not match {translator.seed_shape}")
    translator.eval()
    module = translator.generator(direction)
    param = next(module.parameters(), None)
    values = z.values if param is None else z.values.to(dtype=param.dtype)
    out = _apply(module, values, batch_size).to(z.values.dtype)
    return LatentState(out, z.timestep)


def save_translator(workspace: WorkspaceManager, name: str, result: TranslatorTrainResult,
                    config: TranslatorConfig) -> str:
    translator = result.translator
    return workspace.save_checkpoint(
        name, TRANSLATOR_KIND, translator.state_dict(),
        config={"translator": config.model_dump(mode="json"), "seed_shape": list(translator.seed_shape),
                "total_steps": translator.total_steps},
        provenance={**result.provenance, "best_epoch": result.best_epoch},
    )


def load_translator(workspace: WorkspaceManager, name: str) -> Tuple[SeedTranslator, Dict]:
    """Returns (translator, seed provenance it was trained on)"""
    checkpoint = workspace.load_checkpoint(name, kind=TRANSLATOR_KIND)
    config = TranslatorConfig.model_validate(checkpoint.config["translator"])
    translator = SeedTranslator.build(config, tuple(checkpoint.config["seed_shape"]),
                                      checkpoint.config["total_steps"])
    translator.load_state_dict(checkpoint.tensors)
    translator.eval()
    return translator, checkpoint.provenance
