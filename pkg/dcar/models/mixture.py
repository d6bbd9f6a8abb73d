"""
Gaussian mixture components, per-track mixtures and labeled pools.
"""
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from dcar.models.errors import DataError
from dcar.models.spd import SpdMatrix


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    """One (weight, mean, covariance) triple of a mixture."""

    weight: float
    mean: np.ndarray
    covariance: SpdMatrix

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        covariance = self.covariance if isinstance(self.covariance, SpdMatrix) else SpdMatrix(self.covariance)
        if not 0.0 < float(self.weight) <= 1.0:
            raise DataError(f"Component weight must be in (0, 1], got {self.weight}")
        if covariance.dim != mean.size:
            raise DataError(f"Mean of length {mean.size} does not match covariance of dim {covariance.dim}")
        mean.setflags(write=False)
        object.__setattr__(self, 'weight', float(self.weight))
        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'covariance', covariance)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True, eq=False)
class TrackGMM:
    """Mixture fitted to the frames of one track."""

    track_id: str
    components: Tuple[GaussianComponent, ...]
    log_likelihood_trace: Tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        components = tuple(self.components)
        if not components:
            raise DataError(f"Track {self.track_id}: mixture has no components")
        if len({c.dim for c in components}) != 1:
            raise DataError(f"Track {self.track_id}: components have different dimensions")
        total = sum(c.weight for c in components)
        if abs(total - 1.0) > 1e-9:
            raise DataError(f"Track {self.track_id}: weights sum to {total!r}, expected 1")
        object.__setattr__(self, 'components', components)
        object.__setattr__(self, 'log_likelihood_trace', tuple(self.log_likelihood_trace))

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    def __len__(self):
        return len(self.components)


@dataclass(frozen=True, eq=False)
class LabeledComponent:
    """A pooled component carrying the event label of its source track."""

    component: GaussianComponent
    label: str
    track_id: str

    def __post_init__(self):
        if self.label is None or str(self.label) == '':
            raise DataError(f"Component from track {self.track_id} has no label")
        object.__setattr__(self, 'label', str(self.label))

    @property
    def mean(self) -> np.ndarray:
        return self.component.mean

    @property
    def covariance(self) -> SpdMatrix:
        return self.component.covariance

    @property
    def weight(self) -> float:
        return self.component.weight

    @property
    def dim(self) -> int:
        return self.component.dim
