"""
Seed translator (sts-GAN)
"""

from .networks import Direction, PatchDiscriminator, SeedGenerator, SeedTranslator
from .training import (
    CycleLosses,
    SeedDataset,
    SeedProvenance,
    TranslatorTrainResult,
    build_seed_dataset,
    cycle_losses,
    load_translator,
    save_translator,
    train_sts_gan,
    translate_seed,
)

__all__ = [
    'Direction',
    'PatchDiscriminator',
    'SeedGenerator',
    'SeedTranslator',
    'CycleLosses',
    'SeedDataset',
    'SeedProvenance',
    'TranslatorTrainResult',
    'build_seed_dataset',
    'cycle_losses',
    'load_translator',
    'save_translator',
    'train_sts_gan',
    'translate_seed',
]
