"""
Evaluation Metrics
SSIM for structure preservation, kernel MMD and KID for target-domain
appearance, and a frozen probe trunk as the feature space.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy.spatial.distance import cdist

logger = logging.getLogger(__name__)

BANDWIDTH_MULTIPLIERS = (0.5, 1.0, 2.0)


def _flatten(features) -> np.ndarray:
    if isinstance(features, torch.Tensor):
        features = features.detach().cpu().numpy()
    features = np.asarray(features, dtype=np.float64)
    return features.reshape(len(features), -1)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    """Normalised 2D Gaussian kernel (float64)"""
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    kernel = torch.exp(-coords ** 2 / (2.0 * sigma ** 2))
    kernel = kernel / kernel.sum()
    return kernel[:, None] * kernel[None, :]


def ssim_map(x: torch.Tensor, y: torch.Tensor, window_size: int = 11, sigma: float = 1.5,
             k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> torch.Tensor:
    """
    Local SSIM over valid window positions, shape (N, C, H', W').
    Images larger than the window are required; smaller ones shrink it to the
    largest odd size that fits.
    """
    if x.shape != y.shape:
        raise ValueError(f"Shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    x = x.to(torch.float64)
    y = y.to(torch.float64)
    if x.dim() == 3:
        x, y = x[None], y[None]
    channels = x.shape[1]
    size = min(window_size, x.shape[-1], x.shape[-2])
    if size % 2 == 0:
        size -= 1
    window = gaussian_window(size, sigma).to(x.device).expand(channels, 1, size, size)

    def blur(z):
        return F.conv2d(z, window, groups=channels)

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_x, mu_y = blur(x), blur(y)
    sigma_x = blur(x * x) - mu_x * mu_x
    sigma_y = blur(y * y) - mu_y * mu_y
    sigma_xy = blur(x * y) - mu_x * mu_y

    numerator = (2 * mu_x * mu_y + c1) * (2 * sigma_xy + c2)
    denominator = (mu_x * mu_x + mu_y * mu_y + c1) * (sigma_x + sigma_y + c2)
    return numerator / denominator


def ssim_per_image(x, y, **kwargs) -> np.ndarray:
    x, y = torch.as_tensor(x), torch.as_tensor(y)
    values = ssim_map(x, y, **kwargs)
    return values.flatten(1).mean(1).cpu().numpy()


def ssim(x, y, window_size: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 1.0) -> float:
    """
    Mean SSIM between images (C, H, W) or batches (N, C, H, W) in [0, 1].

    Args:
        x, y: images of equal shape
        window_size: Gaussian window size
        sigma: Gaussian window width
        k1, k2: stabilising constants
        data_range: dynamic range of the pixel values

    Returns:
        SSIM in [-1, 1], averaged over images
    """
    values = ssim_per_image(x, y, window_size=window_size, sigma=sigma, k1=k1, k2=k2, data_range=data_range)
    return float(values.mean())


def median_bandwidth(x: np.ndarray, y: np.ndarray) -> float:
    """Median pairwise distance of the pooled sample"""
    pooled = np.concatenate([x, y])
    distances = cdist(pooled, pooled, "euclidean")
    upper = distances[np.triu_indices(len(pooled), k=1)]
    median = float(np.median(upper)) if upper.size else 0.0
    return median if median > 0 else 1.0


def mmd_rbf(x, y, bandwidths: Optional[Sequence[float]] = None, scale: float = 1.0) -> float:
    """
    Biased multi-bandwidth RBF estimate of MMD^2 between two sample sets.

    Args:
        x: (n, ...) samples, flattened per row
        y: (m, ...) samples
        bandwidths: kernel widths; defaults to the median heuristic x {0.5, 1, 2}
        scale: multiplier applied to the result (1e3 for reporting)

    Returns:
        Non-negative MMD^2, times `scale`
    """
    x, y = _flatten(x), _flatten(y)
    if len(x) < 2 or len(y) < 2:
        raise ValueError("mmd_rbf needs at least two samples in each set")
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"Feature dimensions differ: {x.shape[1]} vs {y.shape[1]}")
    if bandwidths is None:
        median = median_bandwidth(x, y)
        bandwidths = [median * m for m in BANDWIDTH_MULTIPLIERS]

    d_xx = cdist(x, x, "sqeuclidean")
    d_yy = cdist(y, y, "sqeuclidean")
    d_xy = cdist(x, y, "sqeuclidean")
    d_yx = cdist(y, x, "sqeuclidean")

    total = 0.0
    for bw in bandwidths:
        k_xx = np.exp(-d_xx / (2.0 * bw ** 2)).mean()
        k_yy = np.exp(-d_yy / (2.0 * bw ** 2)).mean()
        k_cross = (np.exp(-d_xy / (2.0 * bw ** 2)).mean() + np.exp(-d_yx / (2.0 * bw ** 2)).mean()) / 2.0
        total += (k_xx + k_yy) - 2.0 * k_cross
    return max(0.0, total / len(bandwidths)) * scale


def polynomial_kernel(x: np.ndarray, y: np.ndarray, degree: int = 3) -> np.ndarray:
    """K(x, y) = (x.y / d + 1) ** degree"""
    return (x @ y.T / x.shape[1] + 1.0) ** degree


def unbiased_mmd2(x: np.ndarray, y: np.ndarray, degree: int = 3) -> float:
    """Paired U-statistic: every kernel sum excludes the i == j terms"""
    m = len(x)
    k_xx = polynomial_kernel(x, x, degree)
    k_yy = polynomial_kernel(y, y, degree)
    k_xy = polynomial_kernel(x, y, degree)
    off_xx = k_xx.sum() - np.trace(k_xx)
    off_yy = k_yy.sum() - np.trace(k_yy)
    off_xy = k_xy.sum() - np.trace(k_xy)
    return float((off_xx + off_yy - 2.0 * off_xy) / (m * (m - 1)))


@dataclass
class KidResult:
    mean: float
    std: float
    num_subsets: int


def kid_subsets(feats_x, feats_y, subset_size: int = 100, num_subsets: int = 50,
                rng_seed: int = 0, scale: float = 1.0) -> KidResult:
    """
    Kernel Inception Distance: unbiased polynomial-kernel MMD^2 averaged
    over random subsets. Subsets are sorted index draws, shared by both sets
    when they have equal size.
    """
    x, y = _flatten(feats_x), _flatten(feats_y)
    if subset_size < 2:
        raise ValueError("subset_size must be at least 2")
    if len(x) < subset_size or len(y) < subset_size:
        raise ValueError(
            f"Insufficient samples for KID: need {subset_size}, got {len(x)} and {len(y)}"
        )
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"Feature dimensions differ: {x.shape[1]} vs {y.shape[1]}")

    rng = np.random.default_rng(rng_seed)
    estimates = np.empty(num_subsets)
    for s in range(num_subsets):
        idx_x = np.sort(rng.choice(len(x), subset_size, replace=False))
        idx_y = idx_x if len(x) == len(y) else np.sort(rng.choice(len(y), subset_size, replace=False))
        estimates[s] = unbiased_mmd2(x[idx_x], y[idx_y])
    return KidResult(mean=float(estimates.mean()) * scale,
                     std=float(estimates.std()) * scale,
                     num_subsets=num_subsets)


def kid(feats_x, feats_y, subset_size: int = 100, num_subsets: int = 50,
        rng_seed: int = 0, scale: float = 1.0) -> float:
    """Mean KID over subsets, times `scale`"""
    return kid_subsets(feats_x, feats_y, subset_size, num_subsets, rng_seed, scale).mean


class FeatureExtractor:
    """
    Frozen classifier trunk used as the embedding for MMD and KID.
    The network must expose `features(x)` returning penultimate activations.
    """

    def __init__(self, network: nn.Module, checkpoint_id: str, batch_size: int = 256):
        self.network = network.eval()
        self.network.requires_grad_(False)
        self.checkpoint_id = checkpoint_id
        self.batch_size = batch_size

    @property
    def dim(self) -> int:
        return self.network.feature_dim

    def __call__(self, images) -> np.ndarray:
        images = torch.as_tensor(np.asarray(images) if not isinstance(images, torch.Tensor) else images)
        param = next(self.network.parameters())
        chunks = []
        with torch.no_grad():
            for start in range(0, len(images), self.batch_size):
                batch = images[start:start + self.batch_size].to(device=param.device, dtype=param.dtype)
                chunks.append(self.network.features(batch).cpu().numpy().astype(np.float64))
        if not chunks:
            return np.zeros((0, self.dim))
        return np.concatenate(chunks)
