import numpy as np
import pytest

from dcar.models.dataset import SyntheticSpec
from dcar.models.mixture import GaussianComponent, LabeledComponent
from dcar.models.spd import SpdMatrix
from dcar.services.synth_service import write_dataset


def make_spd(rng, d, scale=1.0):
    a = rng.standard_normal((d, d))
    return SpdMatrix(scale * (a @ a.T / d + 0.5 * np.eye(d)))


def make_components(rng, n, d, labels=None):
    labels = labels or [f"e{i % 2}" for i in range(n)]
    return [
        LabeledComponent(
            GaussianComponent(1.0, rng.standard_normal(d), make_spd(rng, d)),
            label=labels[i],
            track_id=f"t{i}",
        )
        for i in range(n)
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def spd_factory(rng):
    return lambda d, scale=1.0: make_spd(rng, d, scale)


@pytest.fixture
def components_factory(rng):
    return lambda n, d, labels=None: make_components(rng, n, d, labels)


@pytest.fixture(scope='session')
def small_synthetic(tmp_path_factory):
    """Three events, 8 dimensions, a few short tracks: quick pipeline runs."""
    spec = SyntheticSpec(n_events=3, train_tracks=6, test_tracks=3, frames=120, dim=8, planted_dim=3,
                         clusters=1, separation=6.0, seed=7)
    out = tmp_path_factory.mktemp('small_synth')
    manifest = write_dataset(spec, str(out))
    return out, manifest


@pytest.fixture(scope='session')
def acceptance_synthetic(tmp_path_factory):
    """Planted 4-dimensional structure in d=12, 30 train and 10 test tracks per event."""
    spec = SyntheticSpec(n_events=3, train_tracks=30, test_tracks=10, frames=200, dim=12, planted_dim=4,
                         separation=5.0, seed=11)
    out = tmp_path_factory.mktemp('acceptance_synth')
    manifest = write_dataset(spec, str(out))
    return out, manifest
