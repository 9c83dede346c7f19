"""
Seed Probe
Twin residual classifiers trained on images and on their inverted seeds, to
measure how much domain information the seeds carry.
"""

import copy
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from .config import ProbeConfig
from .errors import DivergenceError, ProvenanceError
from .workspace_manager import WorkspaceManager, array_digest

logger = logging.getLogger(__name__)

PROBE_KIND = "probe"
MIN_SAMPLES_PER_CLASS = 20


class BasicBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.shortcut = nn.Identity()
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class ProbeClassifier(nn.Module):
    """Small residual CNN; the first layer is sized to the input channel count"""

    def __init__(self, in_channels: int, config: ProbeConfig, num_classes: int = 2):
        super().__init__()
        self.in_channels = in_channels
        self.num_classes = num_classes
        width = config.width
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, width, 3, padding=1, bias=False), nn.BatchNorm2d(width), nn.ReLU(),
        )
        blocks = []
        channels = width
        for i in range(config.num_blocks):
            out = width * 2 ** (i // 2)
            blocks.append(BasicBlock(channels, out, stride=2 if i % 2 == 1 else 1))
            channels = out
        self.blocks = nn.Sequential(*blocks)
        self.feature_dim = channels
        self.head = nn.Linear(channels, num_classes)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Penultimate activations (global average pool)"""
        return self.blocks(self.stem(x)).mean(dim=(2, 3))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))


def stratified_split(labels: np.ndarray, val_fraction: float, rng_seed: int,
                     groups: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-class split of groups (default: one group per sample) into train and
    validation indices. Members of a group never straddle the split.
    """
    labels = np.asarray(labels)
    groups = np.arange(len(labels)) if groups is None else np.asarray(groups)
    rng = np.random.default_rng(rng_seed)
    val_groups: List[np.ndarray] = []
    for label in np.unique(labels):
        class_groups = np.unique(groups[labels == label])
        shuffled = rng.permutation(class_groups)
        n_val = max(1, int(round(val_fraction * len(shuffled))))
        val_groups.append(shuffled[:n_val])
    is_val = np.isin(groups, np.concatenate(val_groups))
    return np.flatnonzero(~is_val), np.flatnonzero(is_val)


def split_fingerprint(groups: np.ndarray, train_idx: np.ndarray, val_idx: np.ndarray) -> str:
    train_groups, val_groups = np.unique(groups[train_idx]), np.unique(groups[val_idx])
    if np.intersect1d(train_groups, val_groups).size:
        raise ValueError("Train and validation splits share groups")
    digest = hashlib.sha256(train_groups.tobytes() + b"|" + val_groups.tobytes())
    return digest.hexdigest()[:16]


@dataclass
class ProbeResult:
    model: ProbeClassifier
    best_accuracy: float
    best_epoch: int
    num_train: int
    num_val: int
    split_hash: str
    history: List[Dict[str, float]] = field(default_factory=list)


def _accuracy(model: nn.Module, inputs: torch.Tensor, labels: torch.Tensor, batch_size: int = 512) -> float:
    model.eval()
    correct = 0
    with torch.no_grad():
        for start in range(0, len(inputs), batch_size):
            logits = model(inputs[start:start + batch_size])
            correct += int((logits.argmax(1) == labels[start:start + batch_size]).sum())
    return correct / max(1, len(inputs))


def train_probe(inputs, labels, config: ProbeConfig, groups: Optional[np.ndarray] = None) -> ProbeResult:
    """
    Train a classifier and keep the epoch with the best validation accuracy.

    Args:
        inputs: (N, C, H, W) images or seeds
        labels: (N,) integer classes
        config: probe architecture and schedule
        groups: optional group id per sample; batches and the split act on groups

    Returns:
        ProbeResult with the best-validation model and accuracy in [0, 1]
    """
    inputs = torch.as_tensor(np.asarray(inputs) if not isinstance(inputs, torch.Tensor) else inputs).float()
    labels_np = np.asarray(labels.cpu() if isinstance(labels, torch.Tensor) else labels).astype(np.int64)
    classes, counts = np.unique(labels_np, return_counts=True)
    if len(classes) < 2:
        raise ValueError("train_probe needs at least two classes")
    if counts.min() < MIN_SAMPLES_PER_CLASS:
        raise ValueError(f"Each class needs at least {MIN_SAMPLES_PER_CLASS} samples, got {counts.min()}")
    groups = np.arange(len(labels_np)) if groups is None else np.asarray(groups)

    train_idx, val_idx = stratified_split(labels_np, config.val_fraction, config.rng_seed, groups)
    split_hash = split_fingerprint(groups, train_idx, val_idx)
    labels_t = torch.from_numpy(labels_np)
    val_inputs, val_labels = inputs[val_idx], labels_t[val_idx]

    train_groups = np.unique(groups[train_idx])
    members = {g: train_idx[groups[train_idx] == g] for g in train_groups}

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.rng_seed)
        model = ProbeClassifier(inputs.shape[1], config, num_classes=int(classes.max()) + 1)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    rng = np.random.default_rng(config.rng_seed)

    best_state, best_accuracy, best_epoch = copy.deepcopy(model.state_dict()), -1.0, 0
    history = []
    for epoch in tqdm(range(1, config.max_epochs + 1), desc="probe", leave=False):
        model.train()
        order = rng.permutation(train_groups)
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = np.concatenate([members[g] for g in order[start:start + config.batch_size]])
            if len(idx) < 2:
                continue
            loss = F.cross_entropy(model(inputs[idx]), labels_t[idx])
            if not torch.isfinite(loss):
                raise DivergenceError(f"Non-finite probe loss at epoch {epoch}", step=epoch)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())

        accuracy = _accuracy(model, val_inputs, val_labels)
        history.append({"epoch": epoch, "loss": float(np.mean(losses)) if losses else float("nan"),
                        "val_accuracy": accuracy})
        if accuracy > best_accuracy:
            best_accuracy, best_epoch = accuracy, epoch
            best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)
    model.eval()
    logger.info(f"✅ Probe best validation accuracy {best_accuracy:.4f} at epoch {best_epoch}")
    return ProbeResult(model=model, best_accuracy=best_accuracy, best_epoch=best_epoch,
                       num_train=len(train_idx), num_val=len(val_idx), split_hash=split_hash,
                       history=history)


def predict_fraction(model: nn.Module, inputs, target_class: int, batch_size: int = 512) -> float:
    """Fraction of inputs the classifier assigns to target_class"""
    inputs = torch.as_tensor(np.asarray(inputs) if not isinstance(inputs, torch.Tensor) else inputs).float()
    if len(inputs) == 0:
        return 0.0
    labels = torch.full((len(inputs),), int(target_class), dtype=torch.long)
    return _accuracy(model, inputs, labels, batch_size)


@dataclass
class ProbeReport:
    task: str
    acc_images: float
    acc_seeds: float
    num_train: int
    num_val: int
    rng_seed: int

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(self)])


def compare_seed_vs_image_probe(images_a, images_b, seeds_a, seeds_b, config: ProbeConfig,
                                task: str = "bright/dark", workspace: Optional[WorkspaceManager] = None,
                                sources: Optional[Tuple] = None) -> Tuple[ProbeReport, ProbeResult, ProbeResult]:
    """
    Train the same probe on the images and on their seeds.

    The seeds must be the inversions of exactly these images, or of `sources`
    (the codec latents of the images) when given.

    Returns:
        (report, image probe, seed probe)
    """
    sources_a, sources_b = sources if sources is not None else (images_a, images_b)
    for inverted, seeds, name in ((sources_a, seeds_a, "A"), (sources_b, seeds_b, "B")):
        if len(seeds) != len(inverted) or seeds.provenance.source_digest != array_digest(inverted):
            raise ProvenanceError(f"Domain {name} seeds are not the inversions of the supplied images")

    images = np.concatenate([np.asarray(images_a), np.asarray(images_b)])
    seeds = torch.cat([seeds_a.seeds, seeds_b.seeds])
    labels = np.concatenate([np.zeros(len(images_a), np.int64), np.ones(len(images_b), np.int64)])

    image_probe = train_probe(images, labels, config)
    seed_probe = train_probe(seeds, labels, config)
    report = ProbeReport(task=task, acc_images=image_probe.best_accuracy, acc_seeds=seed_probe.best_accuracy,
                         num_train=image_probe.num_train, num_val=image_probe.num_val, rng_seed=config.rng_seed)
    logger.info(f"📊 Probe accuracy: images {report.acc_images:.4f}, seeds {report.acc_seeds:.4f}")
    if workspace is not None:
        workspace.save_table("probe.csv", report.to_frame())
    return report, image_probe, seed_probe


def save_probe(workspace: WorkspaceManager, name: str, result: ProbeResult, config: ProbeConfig,
               provenance: Optional[dict] = None) -> str:
    return workspace.save_checkpoint(
        name, PROBE_KIND, result.model.state_dict(),
        config={"probe": config.model_dump(mode="json"), "in_channels": result.model.in_channels,
                "num_classes": result.model.num_classes},
        provenance={"best_accuracy": result.best_accuracy, "split_hash": result.split_hash, **(provenance or {})},
    )


def load_probe(workspace: WorkspaceManager, name: str) -> Tuple[ProbeClassifier, str]:
    checkpoint = workspace.load_checkpoint(name, kind=PROBE_KIND)
    model = ProbeClassifier(checkpoint.config["in_channels"], ProbeConfig.model_validate(checkpoint.config["probe"]),
                            num_classes=checkpoint.config["num_classes"])
    model.load_state_dict(checkpoint.tensors)
    model.eval()
    return model, checkpoint.checkpoint_id
