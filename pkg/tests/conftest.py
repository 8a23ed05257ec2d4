import numpy as np
import pytest

from models import AffinityConfig, NetConfig, PointCloud, RegionCenters
from network import LatentPartitionSDF


def fibonacci_sphere(n: int, radius: float = 0.3) -> np.ndarray:
    """Evenly spread, deterministic points on a sphere."""
    i = np.arange(n) + 0.5
    polar = np.arccos(1 - 2 * i / n)
    azimuth = np.pi * (1 + 5 ** 0.5) * i
    return radius * np.stack([np.cos(azimuth) * np.sin(polar), np.sin(azimuth) * np.sin(polar), np.cos(polar)], axis=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_net_config():
    return NetConfig(latent_dim=8, hidden_width=16, n_layers=2, skip_layer=0, softplus_beta=10.0, init_radius=0.3)


@pytest.fixture
def sphere_cloud():
    return PointCloud(fibonacci_sphere(400))


@pytest.fixture
def sphere_centers(sphere_cloud):
    return RegionCenters.from_indices(sphere_cloud, [0, 100, 200, 300])


@pytest.fixture
def tiny_model(tiny_net_config):
    return LatentPartitionSDF(tiny_net_config, n_codes=4, seed=3)


@pytest.fixture
def euclidean():
    return AffinityConfig()
