import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ganticket import datasets, metrics
from ganticket.datasets import DatasetSpec
from ganticket.errors import ConfigError, ContractError


def test_noiseless_ring_on_unit_circle():
    x = datasets.sample(DatasetSpec("r", "ring", components=8, radius=1.0, noise=0.0), 500, 0)
    np.testing.assert_allclose(np.hypot(x[:, 0], x[:, 1]), 1.0, atol=1e-15)
    angles = np.round(np.arctan2(x[:, 1], x[:, 0]) / (np.pi / 4)) % 8
    assert set(angles.astype(int)) == set(range(8))


def test_grid_mixture_near_centers():
    spec = DatasetSpec("g", "grid-mixture", components=4, spacing=2.0, noise=1e-6)
    x = datasets.sample(spec, 400, 1)
    centers = datasets.grid_centers(4, 2.0)
    np.testing.assert_array_equal(centers, [[-1, -1], [-1, 1], [1, -1], [1, 1]])
    dist = np.min(np.linalg.norm(x[:, None, :] - centers[None], axis=2), axis=1)
    assert dist.max() < 1e-5


def test_ring_radial_moments():
    x = datasets.sample(DatasetSpec("r", "ring", radius=1.0, noise=0.05), 100_000, 2)
    r = np.hypot(x[:, 0], x[:, 1])
    assert abs(r.mean() - 1.0) <= 1e-3
    assert abs(r.std() - 0.05) <= 2e-3


def test_continuous_ring_and_moons():
    x = datasets.sample(DatasetSpec("c", "ring", components=0, noise=0.0), 200, 3)
    np.testing.assert_allclose(np.hypot(x[:, 0], x[:, 1]), 1.0, atol=1e-15)
    m = datasets.sample("moons", 200, 0)
    assert m.shape == (200, 2) and np.all(np.isfinite(m))


@settings(max_examples=20, deadline=None)
@given(name=st.sampled_from(sorted(datasets.REGISTRY)), n=st.integers(1, 300), seed=st.integers(0, 2**32 - 1))
def test_property_deterministic(name, n, seed):
    a, b = datasets.sample(name, n, seed), datasets.sample(name, n, seed)
    assert a.shape == (n, 2) and a.tobytes() == b.tobytes()


def test_transfer_pair_is_non_trivial():
    a = metrics.gaussian_fit(datasets.sample("ring8", 20_000, 0))
    b = metrics.gaussian_fit(datasets.sample("grid25", 20_000, 0))
    assert metrics.frechet_distance(a, b) > 0.5


def test_spec_validation():
    with pytest.raises(ConfigError):
        DatasetSpec("x", "spiral")
    with pytest.raises(ConfigError):
        DatasetSpec("x", "ring", radius=0)
    with pytest.raises(ConfigError):
        DatasetSpec("x", "grid-mixture", components=5)
    with pytest.raises(ConfigError):
        datasets.get("nope")
    with pytest.raises(ContractError):
        datasets.sample("ring8", 0, 0)
