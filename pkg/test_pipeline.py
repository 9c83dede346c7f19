#!/usr/bin/env python3
"""
Tests for the end-to-end StS translation pipeline, run on the closed-form
oracle with an identity seed translator
"""

import pytest
import torch

from sts_lab.config import TranslatorConfig
from sts_lab.datasets import TwoDomainDatasetSpec, edge_map_tensor, make_two_domain_dataset
from sts_lab.engine import DomainToken, LatentState, NoisePredictor
from sts_lab.errors import ProvenanceError, StageError
from sts_lab.oracle import GaussianMixture, GmmOraclePredictor
from sts_lab.pipeline import (
    ABLATION_CONFIGS,
    FULL_STS,
    IdentityCodec,
    StsModels,
    domain_tokens,
    load_codec,
    resume_from_seed,
    save_codec,
    sts_translate,
    train_autoencoder,
)
from sts_lab.pipeline.translate import random_seed
from sts_lab.schedule import build_schedule, plan_timesteps
from sts_lab.translator import Direction, SeedTranslator
from sts_lab.workspace_manager import WorkspaceManager

SHAPE = (3, 8, 8)


class FailingPredictor(NoisePredictor):
    def predict(self, values, timestep, condition):
        raise RuntimeError("predictor exploded")


def identity_translator(total_steps: int) -> SeedTranslator:
    config = TranslatorConfig(base_channels=4, num_residual_blocks=1, num_downsampling=1, disc_channels=4)
    translator = SeedTranslator.build(config, SHAPE, total_steps)
    with torch.no_grad():
        for generator in (translator.g_ab, translator.g_ba):
            generator.layers[-1].weight.zero_()
            generator.layers[-1].bias.zero_()
    return translator


def oracle_models(steps: int = 100, omega_forward: float = 1.0, predictor=None) -> StsModels:
    schedule = build_schedule(1000, 1e-4, 0.02)
    if predictor is None:
        predictor = GmmOraclePredictor.unconditional(GaussianMixture.isotropic(torch.zeros(3 * 8 * 8)), schedule)
    return StsModels(
        predictor=predictor,
        translator=identity_translator(1000),
        schedule=schedule,
        plan=plan_timesteps(schedule, steps),
        omega_inversion=1.0,
        omega_forward=omega_forward,
    )


@pytest.fixture(scope="module")
def images():
    data = make_two_domain_dataset(TwoDomainDatasetSpec(image_size=8, num_samples=0, num_eval=6, rng_seed=1))
    return torch.from_numpy(data.eval_a)


@pytest.fixture(scope="module")
def models():
    return oracle_models()


def test_domain_tokens():
    assert domain_tokens(Direction.A2B) == (DomainToken.SOURCE, DomainToken.TARGET)
    assert domain_tokens("b2a") == (DomainToken.TARGET, DomainToken.SOURCE)


def test_identity_translation_recovers_input(images, models):
    """Same distribution for both tokens, omega 1 and identity seeds collapse to the engine round trip"""
    out = sts_translate(images, models)
    assert out.images.shape == images.shape
    errors = (out.images - images).flatten(1).norm(dim=1) / images.flatten(1).norm(dim=1)
    assert float(errors.max()) <= 0.05
    assert torch.equal(out.z_source.values, out.z_target.values)
    assert out.z_source.timestep == 1000
    assert torch.equal(out.spatial_maps, edge_map_tensor(images, models.edge_threshold))


def test_guidance_is_inert_when_tokens_share_a_distribution(images, models):
    strong = oracle_models(omega_forward=5.0)
    assert torch.equal(sts_translate(images, strong).images, sts_translate(images, models).images)


def test_translation_is_deterministic(images, models):
    first = sts_translate(images, models, config=ABLATION_CONFIGS[0], rng_seed=3)
    second = sts_translate(images, models, config=ABLATION_CONFIGS[0], rng_seed=3)
    assert torch.equal(first.images, second.images)
    other = sts_translate(images, models, config=ABLATION_CONFIGS[0], rng_seed=4)
    assert not torch.equal(first.images, other.images)


def test_noise_rows_start_from_recorded_seed(images, models):
    out = sts_translate(images, models, config=ABLATION_CONFIGS[0], rng_seed=7)
    expected = random_seed((len(images), *SHAPE), 1000, 7)
    assert torch.equal(out.z_source.values, expected.values)


def test_chunked_parallel_run_matches_single_batch(images, models):
    whole = sts_translate(images, models, batch_size=64)
    chunked = sts_translate(images, models, batch_size=4, num_workers=2)
    torch.testing.assert_close(chunked.images, whole.images, rtol=1e-5, atol=1e-6)

    noise_whole = sts_translate(images, models, config=ABLATION_CONFIGS[0], batch_size=64)
    noise_chunked = sts_translate(images, models, config=ABLATION_CONFIGS[0], batch_size=4, num_workers=2)
    assert torch.equal(noise_whole.z_source.values, noise_chunked.z_source.values)


def test_resume_from_translated_seed(images, models):
    out = sts_translate(images, models, direction=Direction.B2A)
    resumed = resume_from_seed(out.z_target, out.spatial_maps, models, direction=Direction.B2A)
    assert torch.equal(resumed, out.images)


def test_stage_error_names_the_failing_stage(images):
    broken = oracle_models(predictor=FailingPredictor())
    with pytest.raises(StageError) as info:
        sts_translate(images, broken, config=FULL_STS)
    assert info.value.stage == "invert"
    assert isinstance(info.value.__cause__, RuntimeError)

    with pytest.raises(StageError) as info:
        sts_translate(images, broken, config=ABLATION_CONFIGS[0])
    assert info.value.stage == "sample"


def test_rejects_bad_image_batches(images, models):
    with pytest.raises(ValueError):
        sts_translate(images[0], models)
    with pytest.raises(ValueError):
        sts_translate(images[:0], models)


def test_models_check_translator_horizon():
    schedule = build_schedule(1000, 1e-4, 0.02)
    with pytest.raises(ProvenanceError):
        StsModels(
            predictor=GmmOraclePredictor.unconditional(GaussianMixture.isotropic(torch.zeros(3 * 8 * 8)), schedule),
            translator=identity_translator(500),
            schedule=schedule,
            plan=plan_timesteps(schedule, 20),
            codec=IdentityCodec(),
        )


def test_autoencoder_codec_round_trip(tmp_path, images):
    codec = train_autoencoder(images, latent_channels=2, steps=5, batch_size=4, rng_seed=1)
    latents = codec.encode(images)
    assert latents.shape == (len(images), 2, 8, 8)
    assert codec.decode(latents).shape == images.shape

    workspace = WorkspaceManager(tmp_path)
    checkpoint_id = save_codec(workspace, "codec", codec)
    loaded = load_codec(workspace, "codec")
    assert loaded.checkpoint_id == checkpoint_id
    assert loaded.latent_scale == pytest.approx(codec.latent_scale)
    assert torch.equal(loaded.encode(images), latents)
    with pytest.raises(ValueError):
        train_autoencoder(images[:0], latent_channels=2, steps=1)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
