"""Shared fixtures: a small dataset, a frozen backbone, and the feature
cache built from them, reused across test modules to keep runs quick."""

import numpy as np
import pytest

from dpcsearch.proxy.backbone import Backbone, BackboneConfig
from dpcsearch.proxy.cache import compute_features
from dpcsearch.proxy.data import SyntheticDatasetConfig, generate_dataset


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(SyntheticDatasetConfig(num_images=40, seed=11))


@pytest.fixture(scope="session")
def small_backbone():
    return Backbone(BackboneConfig(seed=11), frozen=True)


@pytest.fixture(scope="session")
def small_cache(small_dataset, small_backbone):
    return compute_features(small_dataset, small_backbone)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
