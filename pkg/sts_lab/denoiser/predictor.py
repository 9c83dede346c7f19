"""
Network-backed noise predictors and their checkpoint containers
"""

import logging
from typing import Optional, Tuple

import torch
import torch.nn as nn

from ..config import AdapterConfig, DenoiserConfig
from ..engine import Condition, NoisePredictor
from ..errors import CheckpointError, ProvenanceError
from ..workspace_manager import WorkspaceManager
from .networks import ControlledDenoiser, SpatialAdapter, TinyUNet, build_denoiser

logger = logging.getLogger(__name__)

DENOISER_KIND = "denoiser"
ADAPTER_KIND = "adapter"


class NetworkPredictor(NoisePredictor):
    """
    Adapts a denoiser network to the engine's predictor interface.
    Evaluation runs in eval mode without gradients, in fixed-size chunks.
    """

    def __init__(self, model: nn.Module, batch_size: int = 256, checkpoint_id: Optional[str] = None):
        self.model = model
        self.batch_size = batch_size
        self.checkpoint_id = checkpoint_id

    @property
    def accepts_spatial_map(self) -> bool:
        return getattr(self.model, "accepts_spatial_map", False)

    def predict(self, values, timestep, condition: Condition):
        self.model.eval()
        param = next(self.model.parameters())
        use_map = self.accepts_spatial_map and condition.spatial_map is not None
        outputs = []
        with torch.no_grad():
            for start in range(0, values.shape[0], self.batch_size):
                chunk = values[start:start + self.batch_size].to(device=param.device, dtype=param.dtype)
                n = chunk.shape[0]
                timesteps = torch.full((n,), int(timestep), dtype=torch.long, device=param.device)
                tokens = torch.full((n,), int(condition.domain_token), dtype=torch.long, device=param.device)
                if use_map:
                    hint = condition.spatial_map[start:start + self.batch_size].to(device=param.device, dtype=param.dtype)
                    out = self.model(chunk, timesteps, tokens, spatial_map=hint)
                else:
                    out = self.model(chunk, timesteps, tokens)
                outputs.append(out)
        return torch.cat(outputs).to(device=values.device, dtype=values.dtype)


def save_denoiser(workspace: WorkspaceManager, name: str, model: nn.Module,
                  provenance: Optional[dict] = None) -> str:
    """Persist a base denoiser; returns its checkpoint id"""
    return workspace.save_checkpoint(
        name, DENOISER_KIND, model.state_dict(),
        config=model.config.model_dump(mode="json"), provenance=provenance,
    )


def load_denoiser(workspace: WorkspaceManager, name: str) -> Tuple[nn.Module, str]:
    """Rebuild a base denoiser from its checkpoint; returns (model, checkpoint id)"""
    checkpoint = workspace.load_checkpoint(name, kind=DENOISER_KIND)
    model = build_denoiser(DenoiserConfig.model_validate(checkpoint.config))
    try:
        model.load_state_dict(checkpoint.tensors)
    except RuntimeError as e:
        raise CheckpointError(f"Checkpoint {name} does not fit its architecture: {e}") from e
    model.eval()
    return model, checkpoint.checkpoint_id


def save_adapter(workspace: WorkspaceManager, name: str, model: ControlledDenoiser,
                 base_checkpoint_id: str) -> str:
    """Persist only the adapter branch, tied to the base checkpoint it was trained on"""
    return workspace.save_checkpoint(
        name, ADAPTER_KIND, model.adapter.state_dict(),
        config=model.adapter.config.model_dump(mode="json"),
        provenance={"base_checkpoint_id": base_checkpoint_id},
    )


def load_controlled(workspace: WorkspaceManager, base_name: str, adapter_name: str) -> Tuple[ControlledDenoiser, str]:
    """Load base and adapter; returns (composite, adapter checkpoint id)"""
    base, base_id = load_denoiser(workspace, base_name)
    if not isinstance(base, TinyUNet):
        raise CheckpointError(f"Checkpoint {base_name} is not a convolutional denoiser")
    checkpoint = workspace.load_checkpoint(adapter_name, kind=ADAPTER_KIND)
    if checkpoint.provenance.get("base_checkpoint_id") != base_id:
        raise ProvenanceError(
            f"Adapter {adapter_name} was trained on {checkpoint.provenance.get('base_checkpoint_id')}, "
            f"not on {base_id}"
        )
    adapter = SpatialAdapter(base, AdapterConfig.model_validate(checkpoint.config))
    try:
        adapter.load_state_dict(checkpoint.tensors)
    except RuntimeError as e:
        raise CheckpointError(f"Adapter {adapter_name} does not fit base {base_name}: {e}") from e
    model = ControlledDenoiser(base, adapter)
    model.eval()
    return model, checkpoint.checkpoint_id
