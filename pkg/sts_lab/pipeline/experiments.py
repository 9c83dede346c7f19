"""
Ablation and CFG-scale experiments
Runs the pipeline over the paired eval split and scores every configuration
with SSIM (structure), MMD and KID (target appearance, in probe feature
space) and the image probe's target-domain rate.
"""

import logging
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd
import torch
import torch.nn as nn

from ..config import PipelineSettings
from ..console import stage_banner
from ..datasets import TwoDomainDataset
from ..metrics import FeatureExtractor, kid, mmd_rbf, ssim
from ..probe import predict_fraction
from ..translator import Direction
from ..workspace_manager import WorkspaceManager
from .models import StsModels
from .translate import ABLATION_CONFIGS, FULL_STS, AblationConfig, TranslationOutput, sts_translate

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["KID", "MMD", "SSIM", "probe_acc"]
TABLE_COLUMNS = ["run_id", "config_name", "omega"] + METRIC_COLUMNS


def eval_pair(dataset: TwoDomainDataset, direction: Direction):
    """(source images, target-domain reference images, target class) of the eval split"""
    if Direction(direction) == Direction.A2B:
        return dataset.eval_a, dataset.eval_b, 1
    return dataset.eval_b, dataset.eval_a, 0


def score_outputs(sources: np.ndarray, outputs: torch.Tensor, references: np.ndarray,
                  feature_extractor: FeatureExtractor, image_probe: nn.Module, target_class: int,
                  settings: PipelineSettings, rng_seed: int) -> Dict[str, float]:
    """
    Args:
        sources: eval images the outputs were translated from
        outputs: translated images (clamped to [0, 1] before scoring)
        references: structure-paired target-domain images
        feature_extractor: frozen probe trunk for MMD and KID
        image_probe: frozen image classifier for probe_acc
        target_class: class index of the target domain
        settings: metric scale and KID subset settings
        rng_seed: KID subset seed

    Returns:
        dict with KID, MMD, SSIM and probe_acc
    """
    outputs = outputs.detach().float().clamp(0.0, 1.0)
    feats_out = feature_extractor(outputs)
    feats_ref = feature_extractor(references)
    subset_size = min(settings.kid_subset_size, len(feats_out), len(feats_ref))
    return {
        "KID": kid(feats_out, feats_ref, subset_size, settings.kid_num_subsets, rng_seed, settings.metric_scale),
        "MMD": mmd_rbf(feats_out, feats_ref, scale=settings.metric_scale),
        "SSIM": ssim(torch.as_tensor(sources), outputs),
        "probe_acc": predict_fraction(image_probe, outputs, target_class),
    }


def add_relative_columns(table: pd.DataFrame, reference_name: str = FULL_STS.name) -> pd.DataFrame:
    """Percent change of each metric against the reference row"""
    reference = table[table["config_name"] == reference_name]
    if reference.empty:
        return table
    table = table.copy()
    for metric in METRIC_COLUMNS:
        base = float(reference[metric].iloc[0])
        table[f"{metric}_rel"] = (table[metric] - base) / abs(base) * 100.0 if base != 0 else 0.0
    return table


def _save_outputs(workspace: Optional[WorkspaceManager], prefix: str, output: TranslationOutput) -> None:
    if workspace is None:
        return
    workspace.save_array(f"{prefix}/images", output.images, role="translated images")
    workspace.save_array(f"{prefix}/z_source", output.z_source.values, role="source seed z_T")
    workspace.save_array(f"{prefix}/z_target", output.z_target.values, role="translated seed z_T")


def _slug(name: str) -> str:
    return name.lower().replace("+", "_")


def run_ablation(dataset: TwoDomainDataset, models: StsModels, feature_extractor: FeatureExtractor,
                 image_probe: nn.Module, settings: PipelineSettings,
                 configs: Sequence[AblationConfig] = ABLATION_CONFIGS,
                 direction: Direction = Direction.A2B, rng_seed: Optional[int] = None,
                 workspace: Optional[WorkspaceManager] = None) -> pd.DataFrame:
    """
    Score each component configuration on the paired eval split.

    Rows without inversion start from z_T ~ N(0, I) drawn from `rng_seed`.
    All rows sample with the target token, omega_forward and the source edge map.

    Returns:
        DataFrame with run_id, config_name, omega, KID, MMD, SSIM, probe_acc
        and the `<metric>_rel` columns against the full StS row
    """
    rng_seed = settings.rng_seed if rng_seed is None else rng_seed
    sources, references, target_class = eval_pair(dataset, direction)
    logger.info(stage_banner("ablate"))

    rows = []
    for config in configs:
        output = sts_translate(sources, models, direction, config, rng_seed=rng_seed,
                               batch_size=settings.batch_size, num_workers=settings.num_workers)
        scores = score_outputs(sources, output.images, references, feature_extractor, image_probe,
                               target_class, settings, rng_seed)
        rows.append({"run_id": f"ablate-{rng_seed}-{_slug(config.name)}", "config_name": config.name,
                     "omega": models.omega_forward, **scores})
        _save_outputs(workspace, f"ablation/{_slug(config.name)}", output)
        logger.info(f"📊 {config.name}: KID {scores['KID']:.3f} MMD {scores['MMD']:.3f} "
                    f"SSIM {scores['SSIM']:.3f} probe {scores['probe_acc']:.3f}")

    table = add_relative_columns(pd.DataFrame(rows, columns=TABLE_COLUMNS))
    if workspace is not None:
        workspace.save_table("ablation.csv", table)
    logger.info(f"✅ Ablation finished over {len(configs)} configurations")
    return table


def run_cfg_sweep(dataset: TwoDomainDataset, models: StsModels, feature_extractor: FeatureExtractor,
                  image_probe: nn.Module, settings: PipelineSettings,
                  omegas: Optional[Sequence[float]] = None,
                  direction: Direction = Direction.A2B, rng_seed: Optional[int] = None,
                  workspace: Optional[WorkspaceManager] = None) -> pd.DataFrame:
    """Full StS at each forward guidance scale; one row per omega"""
    omegas = list(settings.cfg_omegas if omegas is None else omegas)
    rng_seed = settings.rng_seed if rng_seed is None else rng_seed
    sources, references, target_class = eval_pair(dataset, direction)
    logger.info(stage_banner("cfg-sweep"))

    rows = []
    for omega in omegas:
        output = sts_translate(sources, models, direction, FULL_STS, omega=omega, rng_seed=rng_seed,
                               batch_size=settings.batch_size, num_workers=settings.num_workers)
        scores = score_outputs(sources, output.images, references, feature_extractor, image_probe,
                               target_class, settings, rng_seed)
        rows.append({"run_id": f"cfg-{rng_seed}-{omega:g}", "config_name": FULL_STS.name,
                     "omega": float(omega), **scores})
        _save_outputs(workspace, f"cfg_sweep/omega_{omega:g}", output)
        logger.info(f"📊 omega={omega:g}: MMD {scores['MMD']:.3f} SSIM {scores['SSIM']:.3f}")

    table = pd.DataFrame(rows, columns=TABLE_COLUMNS)
    if workspace is not None:
        workspace.save_table("cfg_sweep.csv", table)
    return table
