"""
Synthetic Two-Domain Scenes
Bright "day" scenes of rectangles and discs and their "night" counterparts,
plus the edge-map generator used as the spatial condition.

Day intensities live on a 1/256 grid and the night transform uses a power-of-two
gain with luminance-neutral chroma spots on a 1/1024 grid, so a structure-paired
day/night pair has bit-identical edge maps.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Tuple

import numpy as np
import torch
from pydantic import BaseModel, Field, model_validator

logger = logging.getLogger(__name__)

MIN_IMAGE_SIZE = 8
NUM_CHANNELS = 3
DAY_GRID = 256
SPOT_GRID = 1024
NIGHT_GAIN = 0.25
QUANTUM = 1e-6
# weakest luminance gradient (channel-mean units) that can form an edge;
# the faintest night step on the 1/1024 grid is about 1.6e-4
MIN_CONTRAST = 1e-4

SPLITS = ("train_a", "train_b", "eval_a", "eval_b")


class DomainTransform(str, Enum):
    """Appearance map taking a domain-A scene to its domain-B counterpart"""
    DARKEN = "darken"      # day -> night with light spots
    BRIGHTEN = "brighten"  # day -> washed-out overexposure


class StructureSource(BaseModel):
    """Shape generator shared by both domains"""
    min_objects: int = Field(1, ge=1)
    max_objects: int = Field(3, ge=1)
    min_extent: float = Field(0.15, gt=0.0, le=1.0)  # half-size as a fraction of the image
    max_extent: float = Field(0.35, gt=0.0, le=1.0)
    disc_probability: float = Field(0.5, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.min_objects > self.max_objects:
            raise ValueError("min_objects must not exceed max_objects")
        if self.min_extent > self.max_extent:
            raise ValueError("min_extent must not exceed max_extent")
        return self


class TwoDomainDatasetSpec(BaseModel):
    """Everything needed to regenerate a dataset byte for byte"""
    image_size: int = 16
    num_samples: int = Field(512, ge=0)  # unpaired training images per domain
    num_eval: int = Field(256, ge=0)     # structure-paired evaluation pairs
    domain_transform: DomainTransform = DomainTransform.DARKEN
    structure_source: StructureSource = Field(default_factory=StructureSource)
    spot_strength: float = Field(0.12, ge=0.0, le=0.25)
    spot_radius: float = Field(0.6, gt=0.0)
    edge_threshold: float = Field(0.2, gt=0.0, le=1.0)
    rng_seed: int = 0


@dataclass
class Shape:
    kind: str                     # "rect" or "disc"
    center: Tuple[float, float]   # (row, col) in pixels
    half_extent: Tuple[float, float]
    color: np.ndarray             # (3,) on the day grid


@dataclass
class SceneStructure:
    background: np.ndarray
    shapes: List[Shape] = field(default_factory=list)


@dataclass
class TwoDomainDataset:
    """Unpaired training splits and a structure-paired evaluation split, (N, 3, H, W) float32"""
    spec: TwoDomainDatasetSpec
    train_a: np.ndarray
    train_b: np.ndarray
    eval_a: np.ndarray
    eval_b: np.ndarray

    def splits(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in SPLITS}

    def eval_edges(self) -> np.ndarray:
        return edge_map(self.eval_a, self.spec.edge_threshold)

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for name in SPLITS:
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(getattr(self, name)).tobytes())
        return digest.hexdigest()[:16]

    def pooled_training(self) -> Tuple[np.ndarray, np.ndarray]:
        """Both training splits with integer domain labels (0 = A, 1 = B)"""
        images = np.concatenate([self.train_a, self.train_b])
        labels = np.concatenate([np.zeros(len(self.train_a), np.int64), np.ones(len(self.train_b), np.int64)])
        return images, labels

    def save(self, workspace) -> None:
        for name, array in self.splits().items():
            workspace.save_array(f"data/{name}", array, role=f"images:{name}")
        workspace.save_json("data/manifest.json", {
            "spec": self.spec.model_dump(mode="json"),
            "fingerprint": self.fingerprint(),
        })
        logger.info(f"💾 Dataset {self.fingerprint()} saved to {workspace.root / 'data'}")

    @classmethod
    def load(cls, workspace) -> "TwoDomainDataset":
        manifest = workspace.load_json("data/manifest.json")
        arrays = {name: workspace.load_array(f"data/{name}") for name in SPLITS}
        dataset = cls(spec=TwoDomainDatasetSpec.model_validate(manifest["spec"]), **arrays)
        if dataset.fingerprint() != manifest["fingerprint"]:
            logger.warning("⚠️ Dataset fingerprint differs from its manifest")
        return dataset


def _on_grid(values: np.ndarray, grid: int) -> np.ndarray:
    return np.floor(values * grid) / grid


def _draw_structure(rng: np.random.Generator, spec: TwoDomainDatasetSpec) -> SceneStructure:
    size = spec.image_size
    source = spec.structure_source
    background = rng.integers(160, 236, size=NUM_CHANNELS) / DAY_GRID
    num_objects = int(rng.integers(source.min_objects, source.max_objects + 1))
    shapes = []
    for _ in range(num_objects):
        half = tuple(float(h) for h in rng.uniform(source.min_extent, source.max_extent, size=2) * size)
        if rng.random() < source.disc_probability:
            kind, half = "disc", (half[0], half[0])
        else:
            kind = "rect"
        center = tuple(float(c) for c in rng.uniform(0.2 * size, 0.8 * size, size=2))
        color = rng.integers(16, 120, size=NUM_CHANNELS) / DAY_GRID
        shapes.append(Shape(kind=kind, center=center, half_extent=half, color=color))
    return SceneStructure(background=background, shapes=shapes)


def _shape_mask(shape: Shape, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    dy, dx = rows - shape.center[0], cols - shape.center[1]
    if shape.kind == "disc":
        return dy ** 2 + dx ** 2 <= shape.half_extent[0] ** 2
    return (np.abs(dy) <= shape.half_extent[0]) & (np.abs(dx) <= shape.half_extent[1])


def _render_day(structure: SceneStructure, size: int) -> np.ndarray:
    rows, cols = np.meshgrid(np.arange(size) + 0.5, np.arange(size) + 0.5, indexing="ij")
    image = np.broadcast_to(structure.background[:, None, None], (NUM_CHANNELS, size, size)).copy()
    for shape in structure.shapes:
        mask = _shape_mask(shape, rows, cols)
        image[:, mask] = shape.color[:, None]
    return image


def _apply_night(day: np.ndarray, structure: SceneStructure, spec: TwoDomainDatasetSpec) -> np.ndarray:
    night = day * NIGHT_GAIN
    size = spec.image_size
    rows, cols = np.meshgrid(np.arange(size) + 0.5, np.arange(size) + 0.5, indexing="ij")
    for shape in structure.shapes:
        radius = spec.spot_radius * max(shape.half_extent)
        distance_sq = (rows - shape.center[0]) ** 2 + (cols - shape.center[1]) ** 2
        delta = _on_grid(spec.spot_strength * np.exp(-distance_sq / (2.0 * radius ** 2)), SPOT_GRID)
        # keep both channels inside [0, 1] so the shift stays luminance-neutral
        delta = np.minimum(delta, np.minimum(night[2], 1.0 - night[0]))
        night[0] += delta
        night[2] -= delta
    return night


def _apply_transform(day: np.ndarray, structure: SceneStructure, spec: TwoDomainDatasetSpec) -> np.ndarray:
    if spec.domain_transform == DomainTransform.DARKEN:
        return _apply_night(day, structure, spec)
    return 1.0 - NIGHT_GAIN * (1.0 - day)


def _render_domain(rng: np.random.Generator, spec: TwoDomainDatasetSpec, n: int, night: bool) -> np.ndarray:
    size = spec.image_size
    images = np.empty((n, NUM_CHANNELS, size, size), dtype=np.float32)
    for i in range(n):
        structure = _draw_structure(rng, spec)
        day = _render_day(structure, size)
        images[i] = _apply_transform(day, structure, spec) if night else day
    return images


def make_two_domain_dataset(spec: TwoDomainDatasetSpec) -> TwoDomainDataset:
    """
    Generate unpaired training splits and a structure-paired eval split.

    Args:
        spec: dataset parameters including the rng seed

    Returns:
        TwoDomainDataset with images in [0, 1]
    """
    if spec.image_size < MIN_IMAGE_SIZE:
        raise ValueError(f"image_size must be at least {MIN_IMAGE_SIZE}, got {spec.image_size}")

    stream_a, stream_b, stream_eval = (
        np.random.default_rng(s) for s in np.random.SeedSequence(spec.rng_seed).spawn(3)
    )
    train_a = _render_domain(stream_a, spec, spec.num_samples, night=False)
    train_b = _render_domain(stream_b, spec, spec.num_samples, night=True)

    size = spec.image_size
    eval_a = np.empty((spec.num_eval, NUM_CHANNELS, size, size), dtype=np.float32)
    eval_b = np.empty_like(eval_a)
    for i in range(spec.num_eval):
        structure = _draw_structure(stream_eval, spec)
        day = _render_day(structure, size)
        eval_a[i] = day
        eval_b[i] = _apply_transform(day, structure, spec)

    dataset = TwoDomainDataset(spec=spec, train_a=train_a, train_b=train_b, eval_a=eval_a, eval_b=eval_b)
    logger.info(
        f"✅ Generated {spec.num_samples}+{spec.num_samples} training and {spec.num_eval} eval pairs "
        f"({size}x{size}, {spec.domain_transform.value}) fingerprint={dataset.fingerprint()}"
    )
    return dataset


def _suppress_non_maxima(magnitude: np.ndarray, horizontal: np.ndarray) -> np.ndarray:
    """Keep pixels strictly above the previous neighbour and at least the next one"""
    padded = np.pad(magnitude, ((0, 0), (1, 1), (1, 1)))
    centre = padded[:, 1:-1, 1:-1]
    left, right = padded[:, 1:-1, :-2], padded[:, 1:-1, 2:]
    up, down = padded[:, :-2, 1:-1], padded[:, 2:, 1:-1]
    keep_h = (centre > left) & (centre >= right)
    keep_v = (centre > up) & (centre >= down)
    return np.where(horizontal, keep_h, keep_v)


def edge_map(images, threshold: float = 0.2) -> np.ndarray:
    """
    Binary structure map of one image (C, H, W) or a batch (N, C, H, W).

    Central-difference gradients of the luminance, normalised per image,
    thinned by non-maximum suppression along the dominant gradient axis and
    thresholded. Gradients weaker than MIN_CONTRAST never count as edges, so a
    near-constant image gives an empty map. Returns float32 {0, 1} maps shaped (1, H, W) / (N, 1, H, W).
    """
    array = images.detach().cpu().numpy() if isinstance(images, torch.Tensor) else np.asarray(images)
    if array.ndim not in (3, 4):
        raise ValueError(f"Expected (C, H, W) or (N, C, H, W), got shape {array.shape}")
    single = array.ndim == 3
    batch = array[None] if single else array
    if not np.isfinite(batch).all():
        raise ValueError("edge_map needs finite input")

    luminance = batch.astype(np.float64).sum(axis=1)
    padded = np.pad(luminance, ((0, 0), (1, 1), (1, 1)), mode="edge")
    grad_x = (padded[:, 1:-1, 2:] - padded[:, 1:-1, :-2]) / 2.0
    grad_y = (padded[:, 2:, 1:-1] - padded[:, :-2, 1:-1]) / 2.0
    magnitude = np.sqrt(grad_x ** 2 + grad_y ** 2)
    magnitude = np.where(magnitude >= 3 * MIN_CONTRAST, magnitude, 0.0)  # sum -> mean luminance

    peak = magnitude.reshape(len(magnitude), -1).max(axis=1)[:, None, None]
    normalised = np.divide(magnitude, peak, out=np.zeros_like(magnitude), where=peak > 0)
    normalised = np.round(normalised / QUANTUM) * QUANTUM

    kept = _suppress_non_maxima(normalised, np.abs(grad_x) >= np.abs(grad_y))
    edges = (kept & (normalised >= threshold) & (normalised > 0)).astype(np.float32)[:, None]
    return edges[0] if single else edges


def edge_map_tensor(images: torch.Tensor, threshold: float = 0.2) -> torch.Tensor:
    """edge_map for a (N, C, H, W) tensor, returned on the same device and dtype"""
    return torch.from_numpy(edge_map(images, threshold)).to(device=images.device, dtype=images.dtype)
