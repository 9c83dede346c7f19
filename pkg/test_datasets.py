#!/usr/bin/env python3
"""
Tests for the synthetic two-domain scenes and the edge-map condition
"""

import numpy as np
import pytest
import torch

from sts_lab.datasets import (
    DomainTransform,
    TwoDomainDataset,
    TwoDomainDatasetSpec,
    edge_map,
    edge_map_tensor,
    make_two_domain_dataset,
)
from sts_lab.workspace_manager import WorkspaceManager


@pytest.fixture(scope="module")
def small_spec():
    return TwoDomainDatasetSpec(image_size=16, num_samples=64, num_eval=32, rng_seed=7)


@pytest.fixture(scope="module")
def dataset(small_spec):
    return make_two_domain_dataset(small_spec)


def test_shapes_and_range(dataset):
    for name, array in dataset.splits().items():
        assert array.dtype == np.float32, name
        assert array.shape[1:] == (3, 16, 16)
        assert array.min() >= 0.0 and array.max() <= 1.0
    assert len(dataset.train_a) == len(dataset.train_b) == 64
    assert len(dataset.eval_a) == len(dataset.eval_b) == 32


def test_darken_separates_mean_intensity(dataset):
    assert dataset.train_a.mean() - dataset.train_b.mean() > 0.2
    assert dataset.eval_a.mean() - dataset.eval_b.mean() > 0.2


def test_brighten_separates_mean_intensity():
    spec = TwoDomainDatasetSpec(image_size=16, num_samples=32, num_eval=8,
                                domain_transform=DomainTransform.BRIGHTEN)
    data = make_two_domain_dataset(spec)
    assert data.train_b.mean() - data.train_a.mean() > 0.2


def test_regeneration_is_byte_identical(small_spec, dataset):
    again = make_two_domain_dataset(small_spec)
    for name in dataset.splits():
        assert getattr(again, name).tobytes() == getattr(dataset, name).tobytes()
    assert again.fingerprint() == dataset.fingerprint()


def test_different_seed_changes_data(small_spec, dataset):
    other = make_two_domain_dataset(small_spec.model_copy(update={"rng_seed": 8}))
    assert other.fingerprint() != dataset.fingerprint()


def test_training_splits_are_unpaired(dataset):
    edges_a = edge_map(dataset.train_a)
    edges_b = edge_map(dataset.train_b)
    matches = sum(np.array_equal(a, b) for a, b in zip(edges_a, edges_b))
    assert matches < len(edges_a) // 4


@pytest.mark.parametrize("transform", list(DomainTransform))
def test_eval_pairs_share_edge_maps(transform):
    spec = TwoDomainDatasetSpec(image_size=16, num_samples=0, num_eval=64, domain_transform=transform, rng_seed=3)
    data = make_two_domain_dataset(spec)
    edges_a, edges_b = edge_map(data.eval_a), edge_map(data.eval_b)
    assert np.array_equal(edges_a, edges_b)
    assert edges_a.sum() > 0


def test_rejects_tiny_images():
    with pytest.raises(ValueError):
        make_two_domain_dataset(TwoDomainDatasetSpec(image_size=4, num_samples=2, num_eval=2))


def test_raw_pixel_linear_separability(dataset):
    """A least-squares linear probe on pixels separates the domains"""
    images, labels = dataset.pooled_training()
    features = np.concatenate([images.reshape(len(images), -1), np.ones((len(images), 1))], axis=1)
    targets = labels * 2.0 - 1.0
    weights, *_ = np.linalg.lstsq(features, targets, rcond=None)
    accuracy = np.mean((features @ weights > 0) == (labels == 1))
    assert accuracy >= 0.99


def test_save_and_load(tmp_path, dataset):
    workspace = WorkspaceManager(tmp_path)
    dataset.save(workspace)
    loaded = TwoDomainDataset.load(workspace)
    assert loaded.fingerprint() == dataset.fingerprint()
    assert loaded.spec == dataset.spec


def test_edge_map_constant_image():
    assert edge_map(np.full((3, 8, 8), 0.4)).sum() == 0


def test_edge_map_ignores_negligible_steps():
    image = np.full((3, 8, 8), 0.5)
    image[:, :, 4:] += 1e-5
    assert edge_map(image).sum() == 0
    assert edge_map(image, threshold=0.0).sum() == 0

    image[:, :, 4:] += 1.0 / 1024
    assert edge_map(image).sum() > 0


def test_edge_map_vertical_step_is_one_column():
    image = np.zeros((3, 8, 8))
    image[:, :, 4:] = 1.0
    edges = edge_map(image)
    assert edges.shape == (1, 8, 8)
    columns = np.flatnonzero(edges[0].sum(axis=0))
    assert len(columns) == 1
    assert edges[0, :, columns[0]].sum() == 8


def test_edge_map_invariant_to_inversion(dataset):
    images = dataset.eval_a[:16].astype(np.float64)
    assert np.array_equal(edge_map(images), edge_map(1.0 - images))


def test_edge_map_batch_and_tensor_agree(dataset):
    images = torch.from_numpy(dataset.eval_a[:4])
    edges = edge_map_tensor(images)
    assert edges.shape == (4, 1, 16, 16)
    assert edges.dtype == images.dtype
    assert np.array_equal(edges.numpy(), edge_map(dataset.eval_a[:4]))
    assert set(np.unique(edges.numpy())) <= {0.0, 1.0}


def test_edge_map_rejects_bad_input():
    with pytest.raises(ValueError):
        edge_map(np.zeros((8, 8)))
    with pytest.raises(ValueError):
        edge_map(np.full((3, 8, 8), np.nan))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
