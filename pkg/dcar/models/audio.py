"""
Audio and frame-level feature containers.
"""
from dataclasses import dataclass

import numpy as np

from dcar.models.errors import DataError

STANDARD_DIM = 60


@dataclass(frozen=True, eq=False)
class AudioTrack:
    """Mono PCM samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int
    track_id: str

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float).ravel()
        if samples.size == 0:
            raise DataError(f"Track {self.track_id} has no samples")
        if int(self.sample_rate) <= 0:
            raise DataError(f"Track {self.track_id}: sample rate must be positive")
        object.__setattr__(self, 'samples', samples)
        object.__setattr__(self, 'sample_rate', int(self.sample_rate))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True, eq=False)
class FrameMatrix:
    """d x m matrix of per-frame features for one track (one column per frame)."""

    columns: np.ndarray
    track_id: str

    def __post_init__(self):
        columns = np.asarray(self.columns, dtype=float)
        if columns.ndim != 2 or columns.shape[0] == 0 or columns.shape[1] == 0:
            raise DataError(f"Track {self.track_id}: frame matrix must be non-empty d x m, got {columns.shape}")
        if not np.all(np.isfinite(columns)):
            raise DataError(f"Track {self.track_id}: frame matrix has non-finite entries")
        object.__setattr__(self, 'columns', columns)

    @property
    def dim(self) -> int:
        return self.columns.shape[0]

    @property
    def frame_count(self) -> int:
        return self.columns.shape[1]

    @property
    def samples(self) -> np.ndarray:
        """Frames as rows (m x d), the layout estimators expect."""
        return self.columns.T


@dataclass(frozen=True, eq=False)
class PcaProjection:
    """Frame-level pre-reduction fitted on training frames: x -> W^T (x - mean)."""

    mean: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        basis = np.asarray(self.basis, dtype=float)
        if basis.ndim != 2 or basis.shape[0] != mean.size or basis.shape[1] > basis.shape[0]:
            raise DataError(f"PCA basis shape {basis.shape} does not match mean of length {mean.size}")
        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'basis', basis)

    @property
    def input_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def output_dim(self) -> int:
        return self.basis.shape[1]
