"""
Command-line entry point
One subcommand per pipeline stage; every stage reads and writes the run
directory `<workspace>/<run_name>` of the resolved settings.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import torch
from pydantic import ValidationError

from .config import StsSettings, load_settings, set_settings
from .console import LogColors, color_log, configure_logging, stage_banner
from .datasets import TwoDomainDataset, edge_map, make_two_domain_dataset
from .denoiser import (
    NetworkPredictor,
    load_controlled,
    load_denoiser,
    save_adapter,
    save_denoiser,
    train_adapter,
    train_denoiser,
)
from .engine import DomainToken
from .errors import StsError
from .metrics import FeatureExtractor
from .pipeline import (
    IdentityCodec,
    load_models,
    run_ablation,
    run_cfg_sweep,
    save_codec,
    schedule_and_plan,
    sts_translate,
    train_autoencoder,
)
from .pipeline.models import LatentCodec, load_codec_for
from .pipeline.translate import ABLATION_CONFIGS, FULL_STS
from .probe import compare_seed_vs_image_probe, load_probe, save_probe
from .report_system import generate_report
from .translator import Direction, SeedDataset, build_seed_dataset, save_translator, train_sts_gan
from .workspace_manager import WorkspaceManager, get_workspace_manager, read_array

logger = logging.getLogger(__name__)

SEED_NAMES = {DomainToken.SOURCE: "a", DomainToken.TARGET: "b"}


def _encode(codec: LatentCodec, images: np.ndarray) -> torch.Tensor:
    return codec.encode(torch.from_numpy(np.asarray(images, dtype=np.float32)))


def _denoiser_config(settings: StsSettings, channels: int):
    return settings.denoiser.model_copy(update={"in_channels": channels})


# ---- stages ---------------------------------------------------------------

def cmd_gen_data(args, settings: StsSettings, workspace: WorkspaceManager) -> Dict:
    dataset = make_two_domain_dataset(settings.data)
    dataset.save(workspace)
    return {"fingerprint": dataset.fingerprint(), "rng_seed": settings.data.rng_seed}


def cmd_train_denoiser(args, settings: StsSettings, workspace: WorkspaceManager) -> Dict:
    dataset = TwoDomainDataset.load(workspace)
    images, labels = dataset.pooled_training()
    info = {"dataset": dataset.fingerprint(), "rng_seed": settings.denoiser.rng_seed}

    codec: LatentCodec = IdentityCodec()
    if settings.pipeline.codec == "autoencoder":
        codec = train_autoencoder(images, settings.pipeline.codec_latent_channels,
                                  settings.pipeline.codec_steps, rng_seed=settings.pipeline.rng_seed)
        info["codec"] = save_codec(workspace, "codec", codec)
    latents = _encode(codec, images)

    schedule, _ = schedule_and_plan(settings)
    config = _denoiser_config(settings, latents.shape[1])
    result = train_denoiser(latents, labels, schedule, config, budget=args.steps,
                            loss_log=workspace.path("logs/denoiser_loss.csv"))
    info["checkpoint"] = save_denoiser(workspace, "denoiser", result.model, provenance=info)
    info["final_loss"] = result.state.loss_history[-1] if result.state.loss_history else None
    return info


def cmd_train_adapter(args, settings: StsSettings, workspace: WorkspaceManager) -> Dict:
    dataset = TwoDomainDataset.load(workspace)
    images, labels = dataset.pooled_training()
    base, base_id = load_denoiser(workspace, "denoiser")
    latents = _encode(load_codec_for(workspace, settings), images)
    edges = edge_map(images, settings.data.edge_threshold)

    schedule, _ = schedule_and_plan(settings)
    result = train_adapter(latents, labels, edges, base, schedule, settings.adapter,
                           _denoiser_config(settings, latents.shape[1]), budget=args.steps,
                           loss_log=workspace.path("logs/adapter_loss.csv"))
    adapter_id = save_adapter(workspace, "adapter", result.model, base_id)
    return {"base": base_id, "checkpoint": adapter_id, "rng_seed": settings.adapter.rng_seed}


def cmd_invert(args, settings: StsSettings, workspace: WorkspaceManager) -> Dict:
    dataset = TwoDomainDataset.load(workspace)
    controlled, adapter_id = load_controlled(workspace, "denoiser", "adapter")
    predictor = NetworkPredictor(controlled, batch_size=settings.pipeline.batch_size, checkpoint_id=adapter_id)
    codec = load_codec_for(workspace, settings)
    schedule, plan = schedule_and_plan(settings)

    info = {"checkpoint": adapter_id, "plan": list(plan.steps)}
    for token, images in ((DomainToken.SOURCE, dataset.train_a), (DomainToken.TARGET, dataset.train_b)):
        spatial = torch.from_numpy(edge_map(images, settings.data.edge_threshold))
        seeds = build_seed_dataset(_encode(codec, images), predictor, plan, token, schedule,
                                   spatial_maps=spatial, batch_size=settings.pipeline.batch_size)
        seeds.save(workspace, SEED_NAMES[token])
        info[SEED_NAMES[token]] = seeds.fingerprint()
    return info


def cmd_train_sts(args, settings: StsSettings, workspace: WorkspaceManager) -> Dict:
    seeds_a = SeedDataset.load(workspace, "a")
    seeds_b = SeedDataset.load(workspace, "b")
    result = train_sts_gan(seeds_a, seeds_b, settings.translator, budget=args.epochs,
                           loss_log=workspace.path("logs/translator_loss.csv"))
    workspace.save_table("translator_validation.csv", result.validation)
    checkpoint = save_translator(workspace, "translator", result, settings.translator)
    return {"checkpoint": checkpoint, "best_epoch": result.best_epoch, "rng_seed": settings.translator.rng_seed}


def cmd_translate(args, settings: StsSettings, workspace: WorkspaceManager) -> Dict:
    source = Path(args.input)
    images = read_array(source)
    if images.ndim == 3:
        images = images[None]
    models = load_models(workspace, settings)
    config = next(c for c in ABLATION_CONFIGS if c.name == args.ablation)
    output = sts_translate(images, models, Direction(args.direction), config, omega=args.omega,
                           rng_seed=settings.pipeline.rng_seed, batch_size=settings.pipeline.batch_size,
                           num_workers=settings.pipeline.num_workers)
    workspace.save_array(f"{args.out}/images", output.images, role=f"translated:{args.direction}")
    workspace.save_array(f"{args.out}/z_source", output.z_source.values, role="source seed z_T")
    workspace.save_array(f"{args.out}/z_target", output.z_target.values, role="translated seed z_T")
    workspace.save_array(f"{args.out}/spatial_maps", output.spatial_maps, role="edge maps")
    return {"input": str(source), "direction": args.direction, "count": int(len(images)), **models.checkpoint_ids}


def cmd_probe(args, settings: StsSettings, workspace: WorkspaceManager) -> Dict:
    dataset = TwoDomainDataset.load(workspace)
    seeds_a = SeedDataset.load(workspace, "a")
    seeds_b = SeedDataset.load(workspace, "b")
    sources = None
    if settings.pipeline.codec != "identity":
        codec = load_codec_for(workspace, settings)
        sources = (_encode(codec, dataset.train_a), _encode(codec, dataset.train_b))
    report, image_probe, seed_probe = compare_seed_vs_image_probe(
        dataset.train_a, dataset.train_b, seeds_a, seeds_b, settings.probe,
        task=args.task, workspace=workspace, sources=sources,
    )
    return {
        "image_probe": save_probe(workspace, "image_probe", image_probe, settings.probe),
        "seed_probe": save_probe(workspace, "seed_probe", seed_probe, settings.probe,
                                 provenance={"seeds": seeds_a.provenance.checkpoint_id}),
        "acc_images": report.acc_images,
        "acc_seeds": report.acc_seeds,
        "rng_seed": settings.probe.rng_seed,
    }


def _experiment_inputs(settings: StsSettings, workspace: WorkspaceManager):
    dataset = TwoDomainDataset.load(workspace)
    models = load_models(workspace, settings)
    probe, probe_id = load_probe(workspace, "image_probe")
    return dataset, models, FeatureExtractor(probe, probe_id), probe


def cmd_ablate(args, settings: StsSettings, workspace: WorkspaceManager) -> Dict:
    dataset, models, features, probe = _experiment_inputs(settings, workspace)
    table = run_ablation(dataset, models, features, probe, settings.pipeline,
                         direction=Direction(args.direction), rng_seed=args.seed, workspace=workspace)
    return {"rows": len(table), "rng_seed": settings.pipeline.rng_seed if args.seed is None else args.seed,
            "feature_extractor": features.checkpoint_id, **models.checkpoint_ids}


def cmd_cfg_sweep(args, settings: StsSettings, workspace: WorkspaceManager) -> Dict:
    dataset, models, features, probe = _experiment_inputs(settings, workspace)
    table = run_cfg_sweep(dataset, models, features, probe, settings.pipeline, omegas=args.omegas,
                          direction=Direction(args.direction), rng_seed=args.seed, workspace=workspace)
    return {"omegas": list(table["omega"]), "feature_extractor": features.checkpoint_id, **models.checkpoint_ids}


def cmd_report(args, settings: StsSettings, workspace: WorkspaceManager) -> Dict:
    artifacts = generate_report(
        workspace, run_name=settings.run_name, pdf=not args.no_pdf,
        details={"Workspace": workspace.root, "Inference steps": settings.schedule.num_inference_steps,
                 "Forward guidance": settings.pipeline.omega_forward},
    )
    return {"plots": [str(p) for p in artifacts.plots], "pdf": str(artifacts.pdf) if artifacts.pdf else None}


COMMANDS: Dict[str, Callable] = {
    "gen-data": cmd_gen_data,
    "train-denoiser": cmd_train_denoiser,
    "train-adapter": cmd_train_adapter,
    "invert": cmd_invert,
    "train-sts": cmd_train_sts,
    "translate": cmd_translate,
    "probe": cmd_probe,
    "ablate": cmd_ablate,
    "cfg-sweep": cmd_cfg_sweep,
    "report": cmd_report,
}


# ---- argument parsing -----------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="TOML config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. pipeline.omega_forward=3.0 (repeatable)")

    parser = argparse.ArgumentParser(prog="sts-lab", description="Seed-to-Seed translation laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common], help="render the two-domain dataset")
    for name, flag in (("train-denoiser", "--steps"), ("train-adapter", "--steps"), ("train-sts", "--epochs")):
        p = sub.add_parser(name, parents=[common])
        p.add_argument(flag, type=int, default=None, help="training budget (defaults to the config)")
    sub.add_parser("invert", parents=[common], help="invert the training splits to seeds")

    p = sub.add_parser("translate", parents=[common], help="translate an image array file")
    p.add_argument("--in", dest="input", required=True, help="array file (.bin with .json header)")
    p.add_argument("--direction", choices=[d.value for d in Direction], default=Direction.A2B.value)
    p.add_argument("--out", default="translate", help="output directory inside the run directory")
    p.add_argument("--omega", type=float, default=None, help="forward guidance scale")
    p.add_argument("--ablation", choices=[c.name for c in ABLATION_CONFIGS], default=FULL_STS.name)

    p = sub.add_parser("probe", parents=[common], help="image probe vs seed probe")
    p.add_argument("--task", default="bright/dark")

    for name in ("ablate", "cfg-sweep"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--direction", choices=[d.value for d in Direction], default=Direction.A2B.value)
        p.add_argument("--seed", type=int, default=None, help="rng seed for random z_T and KID subsets")
        if name == "cfg-sweep":
            p.add_argument("--omegas", type=float, nargs="+", default=None)

    p = sub.add_parser("report", parents=[common], help="plots and PDF from the result tables")
    p.add_argument("--no-pdf", action="store_true")
    return parser


def _error_line(error: Exception) -> str:
    return json.dumps({"error": type(error).__name__, "stage": getattr(error, "stage", None),
                       "details": str(error).replace("\n", " ")})


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = load_settings(args.config, args.overrides)
        set_settings(settings)
        configure_logging(settings.log_level)
        workspace = get_workspace_manager(settings.run_dir)
        workspace.save_resolved_config(settings)

        logger.info(stage_banner(args.command))
        info = COMMANDS[args.command](args, settings, workspace)
        workspace.record_stage(args.command, info)
        logger.info(color_log(f" ✅ {args.command} done ", LogColors.BG_GREEN, LogColors.BLACK))
        return 0
    except (StsError, ValueError, KeyError, OSError, ValidationError) as e:
        logger.debug("Stage failed", exc_info=True)
        print(_error_line(e), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
