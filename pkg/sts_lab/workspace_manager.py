"""
Workspace Manager for run directories
Handles arrays, checkpoints, CSV tables and run manifests on disk
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np
import pandas as pd
import torch

from .errors import CheckpointError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
ARRAY_DTYPE = "<f4"
CHECKPOINT_ID_LENGTH = 16

ArrayLike = Union[np.ndarray, torch.Tensor]


@dataclass
class Checkpoint:
    """A loaded, manifest-verified checkpoint container"""
    kind: str
    checkpoint_id: str
    config: Dict[str, Any]
    tensors: Dict[str, torch.Tensor]
    provenance: Dict[str, Any] = field(default_factory=dict)


def file_digest(path: Path) -> str:
    """First 16 hex chars of the file's SHA-256"""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()[:CHECKPOINT_ID_LENGTH]


def array_digest(array: ArrayLike) -> str:
    if isinstance(array, torch.Tensor):
        array = array.detach().cpu().numpy()
    return hashlib.sha256(np.ascontiguousarray(array, dtype=ARRAY_DTYPE).tobytes()).hexdigest()[:CHECKPOINT_ID_LENGTH]


def read_array(path: Union[str, Path]) -> np.ndarray:
    """
    Read a `.bin` array and its `.json` header without touching anything else on disk.

    Raises FileNotFoundError when either file is missing and ValueError for a
    malformed header or a size mismatch.
    """
    path = Path(path)
    bin_path = path if path.suffix == ".bin" else path.with_name(f"{path.name}.bin")
    header_path = bin_path.with_suffix(".json")
    if not bin_path.is_file():
        raise FileNotFoundError(f"Array file not found: {bin_path}")
    if not header_path.is_file():
        raise FileNotFoundError(f"Array header not found: {header_path}")
    try:
        header = json.loads(header_path.read_text())
        dtype, shape = header["dtype"], tuple(int(n) for n in header["shape"])
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise ValueError(f"Malformed array header {header_path}: {e}") from e
    if dtype != ARRAY_DTYPE:
        raise ValueError(f"Unsupported array dtype {dtype} in {header_path}")
    data = np.fromfile(bin_path, dtype=ARRAY_DTYPE)
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{bin_path} holds {data.size} values, header expects shape {shape}")
    return data.reshape(shape).astype(np.float32)


def _manifest_of(tensors: Mapping[str, torch.Tensor]) -> Dict[str, Dict[str, Any]]:
    return {name: {"shape": list(t.shape), "dtype": str(t.dtype)} for name, t in tensors.items()}


class WorkspaceManager:
    """Manages the files of one run directory"""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        logger.debug(f"Workspace ready at {self.root}")

    def path(self, name: str) -> Path:
        return self.root / name

    # ---- arrays ---------------------------------------------------------

    def save_array(self, name: str, array: ArrayLike, role: str = "") -> Path:
        """
        Write `<name>.bin` (raw little-endian float32) and its `<name>.json` header

        Args:
            name: path relative to the workspace, without suffix
            array: numpy array or tensor of any shape
            role: free-form tag stored in the header

        Returns:
            Path of the binary file
        """
        if isinstance(array, torch.Tensor):
            array = array.detach().cpu().numpy()
        data = np.ascontiguousarray(array, dtype=ARRAY_DTYPE)
        bin_path = self.path(f"{name}.bin")
        bin_path.parent.mkdir(parents=True, exist_ok=True)
        data.tofile(bin_path)
        header = {"shape": list(data.shape), "dtype": ARRAY_DTYPE, "role": role}
        self.path(f"{name}.json").write_text(json.dumps(header, indent=2))
        return bin_path

    def load_array(self, name: str) -> np.ndarray:
        """Read an array written by save_array; `name` may carry the .bin suffix"""
        if name.endswith(".bin"):
            name = name[:-4]
        return read_array(self.path(f"{name}.bin"))

    def has_array(self, name: str) -> bool:
        return self.path(f"{name}.bin").exists()

    # ---- json / csv -----------------------------------------------------

    def save_json(self, name: str, payload: Mapping[str, Any]) -> Path:
        target = self.path(name)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str))
        return target

    def load_json(self, name: str) -> Dict[str, Any]:
        target = self.path(name)
        if not target.exists():
            raise FileNotFoundError(f"File not found: {target}")
        return json.loads(target.read_text())

    def save_table(self, name: str, table: pd.DataFrame) -> Path:
        target = self.path(name)
        target.parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(target, index=False, float_format="%.6f")
        logger.info(f"📊 Wrote {len(table)} rows to {target}")
        return target

    def load_table(self, name: str) -> pd.DataFrame:
        target = self.path(name)
        if not target.exists():
            raise FileNotFoundError(f"Table not found: {target}")
        return pd.read_csv(target)

    # ---- checkpoints ----------------------------------------------------

    def save_checkpoint(self, name: str, kind: str, tensors: Mapping[str, torch.Tensor],
                        config: Optional[Mapping[str, Any]] = None,
                        provenance: Optional[Mapping[str, Any]] = None) -> str:
        """
        Save a versioned container of named tensors with a shape/dtype manifest

        Returns:
            checkpoint id (first 16 hex chars of the file's SHA-256)
        """
        tensors = {key: value.detach().cpu().clone() for key, value in tensors.items()}
        container = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "kind": kind,
            "config": dict(config or {}),
            "provenance": dict(provenance or {}),
            "manifest": _manifest_of(tensors),
            "tensors": tensors,
        }
        target = self.path(f"checkpoints/{name}.pt")
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            torch.save(container, target)
        except OSError as e:
            raise CheckpointError(f"Failed to write checkpoint {target}: {e}") from e
        checkpoint_id = file_digest(target)
        logger.info(f"✅ Saved {kind} checkpoint {name} ({checkpoint_id})")
        return checkpoint_id

    def load_checkpoint(self, name: str, kind: Optional[str] = None) -> Checkpoint:
        """Load and verify a checkpoint container"""
        target = self.path(f"checkpoints/{name}.pt")
        if not target.exists():
            raise CheckpointError(f"Checkpoint not found: {target}")
        try:
            container = torch.load(target, map_location="cpu", weights_only=True)
        except Exception as e:
            raise CheckpointError(f"Failed to read checkpoint {target}: {e}") from e

        if container.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointError(f"Unsupported checkpoint version {container.get('format_version')}")
        if kind is not None and container.get("kind") != kind:
            raise CheckpointError(f"Expected a {kind} checkpoint, found {container.get('kind')}")
        if _manifest_of(container["tensors"]) != container["manifest"]:
            raise CheckpointError(f"Checkpoint {target} does not match its manifest")

        return Checkpoint(
            kind=container["kind"],
            checkpoint_id=file_digest(target),
            config=container["config"],
            tensors=container["tensors"],
            provenance=container.get("provenance", {}),
        )

    def has_checkpoint(self, name: str) -> bool:
        return self.path(f"checkpoints/{name}.pt").exists()

    # ---- run manifest ---------------------------------------------------

    def record_stage(self, stage: str, info: Mapping[str, Any]) -> None:
        """Merge a stage entry (rng seeds, checkpoint ids, ...) into run_manifest.json"""
        manifest = self.load_json("run_manifest.json") if self.path("run_manifest.json").exists() else {}
        manifest.setdefault("stages", {})[stage] = dict(info)
        self.save_json("run_manifest.json", manifest)

    def save_resolved_config(self, settings) -> Path:
        return self.save_json("resolved_config.json", settings.model_dump(mode="json"))


_workspace_manager: Optional[WorkspaceManager] = None


def get_workspace_manager(root: Optional[Union[str, Path]] = None) -> WorkspaceManager:
    """Get the workspace manager for `root` (defaults to the active settings' run directory)"""
    global _workspace_manager
    if root is None:
        from .config import get_settings
        root = get_settings().run_dir
    if _workspace_manager is None or _workspace_manager.root != Path(root):
        _workspace_manager = WorkspaceManager(root)
    return _workspace_manager
