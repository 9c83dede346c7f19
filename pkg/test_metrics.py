#!/usr/bin/env python3
"""
Tests for SSIM, RBF-MMD and KID
"""

import math

import numpy as np
import pytest
import torch

from sts_lab.metrics import kid, kid_subsets, mmd_rbf, polynomial_kernel, ssim, ssim_per_image, unbiased_mmd2


def _checkerboard(size: int = 16) -> torch.Tensor:
    rows, cols = torch.meshgrid(torch.arange(size), torch.arange(size), indexing="ij")
    return ((rows + cols) % 2).to(torch.float64).expand(3, size, size)


def test_ssim_identical_images():
    x = torch.rand(4, 3, 16, 16, generator=torch.Generator().manual_seed(0))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)


def test_ssim_checkerboard_against_inverse_is_negative():
    board = _checkerboard()
    assert ssim(board, 1.0 - board) < 0


@pytest.mark.parametrize("a,b", [(0.2, 0.7), (0.5, 0.5), (0.0, 1.0)])
def test_ssim_constant_images(a, b):
    c1 = 0.01 ** 2
    x = torch.full((3, 12, 12), a, dtype=torch.float64)
    y = torch.full((3, 12, 12), b, dtype=torch.float64)
    expected = (2 * a * b + c1) / (a * a + b * b + c1)
    assert ssim(x, y) == pytest.approx(expected, rel=1e-9)


def test_ssim_symmetry_and_per_image():
    generator = torch.Generator().manual_seed(1)
    x, y = torch.rand(3, 3, 16, 16, generator=generator), torch.rand(3, 3, 16, 16, generator=generator)
    assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-12)
    per_image = ssim_per_image(x, y)
    assert per_image.shape == (3,)
    assert float(per_image.mean()) == pytest.approx(ssim(x, y), abs=1e-12)


def test_ssim_small_images_shrink_window():
    x = torch.rand(2, 3, 8, 8)
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        ssim(x, x[:, :, :4])


def test_mmd_same_sample_is_zero():
    x = np.random.default_rng(0).normal(size=(40, 6))
    assert mmd_rbf(x, x) <= 1e-9


def test_mmd_two_point_closed_form():
    sigma, r = 1.3, 0.8
    x = np.zeros((2, 3))
    y = np.zeros((2, 3))
    y[:, 0] = r
    expected = 2.0 * (1.0 - math.exp(-r * r / (2 * sigma * sigma)))
    assert mmd_rbf(x, y, bandwidths=[sigma]) == pytest.approx(expected, rel=1e-12)
    assert mmd_rbf(x, y, bandwidths=[sigma], scale=1e3) == pytest.approx(1e3 * expected, rel=1e-12)


def test_mmd_symmetry_and_growth():
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(50, 4)), rng.normal(size=(60, 4)) + 0.5
    assert mmd_rbf(x, y) == pytest.approx(mmd_rbf(y, x), rel=1e-10)
    assert mmd_rbf(x, y + 2.0, bandwidths=[1.0]) > mmd_rbf(x, y, bandwidths=[1.0])


def test_mmd_accepts_image_tensors():
    a, b = torch.rand(5, 3, 4, 4), torch.rand(5, 3, 4, 4)
    assert mmd_rbf(a, b) >= 0.0


def test_mmd_rejects_bad_input():
    with pytest.raises(ValueError):
        mmd_rbf(np.zeros((1, 3)), np.zeros((4, 3)))
    with pytest.raises(ValueError):
        mmd_rbf(np.zeros((4, 3)), np.zeros((4, 2)))


def test_polynomial_kernel_hand_value():
    assert polynomial_kernel(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]))[0, 0] == pytest.approx(3.375)


def test_kid_same_sample_is_zero():
    x = np.random.default_rng(2).normal(size=(120, 8))
    assert kid(x, x, subset_size=50, num_subsets=10) == pytest.approx(0.0, abs=1e-9)


def test_kid_single_full_subset_equals_unbiased_mmd():
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(30, 5)), rng.normal(size=(30, 5)) + 0.3
    result = kid_subsets(x, y, subset_size=30, num_subsets=1)
    assert result.num_subsets == 1 and result.std == 0.0
    assert result.mean == pytest.approx(unbiased_mmd2(x, y), rel=1e-12)


def test_kid_grows_with_shift():
    rng = np.random.default_rng(4)
    x, y = rng.normal(size=(200, 2)), rng.normal(size=(200, 2))
    values = [kid(x, y + shift, subset_size=100, num_subsets=20) for shift in (0.0, 1.0, 2.0)]
    assert values == sorted(values)
    assert values[-1] > values[0]


def test_kid_is_unbiased_for_identical_distributions():
    rng = np.random.default_rng(5)
    estimates = np.array([
        kid(rng.normal(size=(50, 4)), rng.normal(size=(50, 4)), subset_size=25, num_subsets=10, rng_seed=t)
        for t in range(100)
    ])
    standard_error = estimates.std(ddof=1) / math.sqrt(len(estimates))
    assert abs(estimates.mean()) < 3 * standard_error


def test_kid_scale_and_seed():
    rng = np.random.default_rng(6)
    x, y = rng.normal(size=(60, 4)), rng.normal(size=(80, 4)) + 1.0
    base = kid(x, y, subset_size=40, num_subsets=5, rng_seed=1)
    assert kid(x, y, subset_size=40, num_subsets=5, rng_seed=1, scale=1e3) == pytest.approx(1e3 * base)
    assert kid(x, y, subset_size=40, num_subsets=5, rng_seed=1) == base


def test_kid_rejects_insufficient_samples():
    x = np.zeros((10, 4))
    with pytest.raises(ValueError, match="Insufficient"):
        kid(x, np.zeros((50, 4)), subset_size=20)
    with pytest.raises(ValueError):
        kid(np.zeros((50, 4)), np.zeros((50, 4)), subset_size=1)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
