"""
Kernel ridge regression classifier state.
"""
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from dcar.config import EM_MAX_ITER, EM_TOLERANCE
from dcar.models.audio import PcaProjection
from dcar.models.embedding import Embedding
from dcar.models.errors import DataError
from dcar.models.mixture import LabeledComponent


@dataclass(frozen=True, eq=False)
class LabelMatrix:
    """N x L one-hot label indicator."""

    matrix: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.matrix, dtype=float)
        if y.ndim != 2 or y.shape[1] < 2:
            raise DataError("Label matrix must be N x L with L >= 2")
        if not np.all((y == 0) | (y == 1)) or not np.all(y.sum(axis=1) == 1):
            raise DataError("Every label row must contain exactly one 1")
        object.__setattr__(self, 'matrix', y)

    @classmethod
    def from_labels(cls, labels: Sequence[str], events: Sequence[str]) -> 'LabelMatrix':
        index = {e: i for i, e in enumerate(events)}
        y = np.zeros((len(labels), len(events)))
        for row, label in enumerate(labels):
            if label not in index:
                raise DataError(f"Label {label!r} is not in the event catalog")
            y[row, index[label]] = 1.0
        return cls(y)


@dataclass(frozen=True)
class KernelParams:
    """lam weighs the mean term; sigmas are kernel bandwidths; alpha is the ridge."""

    lam: float
    sigma_mean: float
    sigma_cov: float
    alpha: float

    def __post_init__(self):
        for name in ('lam', 'sigma_mean', 'sigma_cov', 'alpha'):
            if not getattr(self, name) > 0:
                raise DataError(f"Kernel parameter {name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """
    Everything needed to classify a new track

    ``method`` is 'dcar' (learned W), 'gmm' (identity W) or 'mv'
    (mean/variance vectors in ``vectors`` instead of components).
    """

    method: str
    events: Tuple[str, ...]
    params: KernelParams
    coefficients: np.ndarray
    labels: Tuple[str, ...]
    embedding: Optional[Embedding] = None
    components: Tuple[LabeledComponent, ...] = ()
    vectors: Optional[np.ndarray] = None
    n_components: int = 1
    gmm_seed: int = 0
    gmm_tolerance: float = EM_TOLERANCE
    gmm_max_iter: int = EM_MAX_ITER
    normalize: bool = False
    projection: Optional[PcaProjection] = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, 'events', tuple(self.events))
        object.__setattr__(self, 'labels', tuple(self.labels))
        object.__setattr__(self, 'components', tuple(self.components))
        c = np.asarray(self.coefficients, dtype=float)
        atoms = len(self.components) if self.method != 'mv' else (0 if self.vectors is None else len(self.vectors))
        if c.shape != (atoms, len(self.events)):
            raise DataError(f"Coefficient matrix {c.shape} does not match {atoms} atoms x {len(self.events)} events")
        if len(self.labels) != atoms:
            raise DataError("One label per training atom is required")
        if self.method != 'mv' and self.embedding is None:
            raise DataError("Mixture models need an embedding")
        object.__setattr__(self, 'coefficients', c)

    @property
    def input_dim(self) -> int:
        """Feature dimension expected from (possibly projected) frames."""
        if self.method == 'mv':
            return self.vectors.shape[1] // 2
        return self.embedding.d


@dataclass(frozen=True, eq=False)
class MembershipMatrix:
    """P x L scores of one test track, with the mixture weights used for voting."""

    scores: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        scores = np.atleast_2d(np.asarray(self.scores, dtype=float))
        weights = np.asarray(self.weights, dtype=float).ravel()
        if scores.shape[0] != weights.size:
            raise DataError("One weight per membership row is required")
        if not np.all(np.isfinite(scores)):
            raise DataError("Membership scores must be finite")
        object.__setattr__(self, 'scores', scores)
        object.__setattr__(self, 'weights', weights)

    def event_scores(self) -> np.ndarray:
        return self.weights @ self.scores
