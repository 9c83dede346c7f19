"""
End-to-end StS translation and the experiment harness
"""

from .experiments import add_relative_columns, run_ablation, run_cfg_sweep, score_outputs
from .models import (
    AutoencoderCodec,
    IdentityCodec,
    LatentCodec,
    StsModels,
    load_codec,
    load_models,
    save_codec,
    schedule_and_plan,
    train_autoencoder,
)
from .translate import (
    ABLATION_CONFIGS,
    FULL_STS,
    AblationConfig,
    TranslationOutput,
    domain_tokens,
    invert_stage,
    resume_from_seed,
    sample_stage,
    sts_translate,
    translate_stage,
)

__all__ = [
    'add_relative_columns',
    'run_ablation',
    'run_cfg_sweep',
    'score_outputs',
    'AutoencoderCodec',
    'IdentityCodec',
    'LatentCodec',
    'StsModels',
    'load_codec',
    'load_models',
    'save_codec',
    'schedule_and_plan',
    'train_autoencoder',
    'ABLATION_CONFIGS',
    'FULL_STS',
    'AblationConfig',
    'TranslationOutput',
    'domain_tokens',
    'invert_stage',
    'resume_from_seed',
    'sample_stage',
    'sts_translate',
    'translate_stage',
]
