"""
Token-conditioned denoiser with a zero-initialised spatial adapter
"""

from .networks import (
    ControlledDenoiser,
    MlpDenoiser,
    SpatialAdapter,
    TinyUNet,
    attach_spatial_adapter,
    build_denoiser,
)
from .predictor import NetworkPredictor, load_controlled, load_denoiser, save_adapter, save_denoiser
from .training import TrainResult, TrainState, epsilon_loss, train_adapter, train_denoiser

__all__ = [
    'ControlledDenoiser',
    'MlpDenoiser',
    'SpatialAdapter',
    'TinyUNet',
    'attach_spatial_adapter',
    'build_denoiser',
    'NetworkPredictor',
    'load_controlled',
    'load_denoiser',
    'save_adapter',
    'save_denoiser',
    'TrainResult',
    'TrainState',
    'epsilon_loss',
    'train_adapter',
    'train_denoiser',
]
