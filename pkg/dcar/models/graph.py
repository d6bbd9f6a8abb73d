"""
Signed label-aware affinity graph over pooled components.
"""
from dataclasses import dataclass

import numpy as np

from dcar.models.errors import DataError


@dataclass(frozen=True, eq=False)
class AffinityGraph:
    """A = S_w - S_b with S_w linking same-label neighbors and S_b different-label ones."""

    within: np.ndarray
    between: np.ndarray
    n_within: int
    n_between: int
    lam: float
    sigma_mean: np.ndarray
    sigma_cov: np.ndarray

    def __post_init__(self):
        within = np.asarray(self.within, dtype=float)
        between = np.asarray(self.between, dtype=float)
        if within.shape != between.shape or within.ndim != 2 or within.shape[0] != within.shape[1]:
            raise DataError("S_w and S_b must be square matrices of equal size")
        for name, m in (('S_w', within), ('S_b', between)):
            if not np.all((m == 0) | (m == 1)):
                raise DataError(f"{name} must be binary")
            if not np.array_equal(m, m.T):
                raise DataError(f"{name} must be symmetric")
            if np.any(np.diag(m) != 0):
                raise DataError(f"{name} must have a zero diagonal")
        if np.any((within == 1) & (between == 1)):
            raise DataError("A pair cannot be both a within-class and a between-class neighbor")
        object.__setattr__(self, 'within', within)
        object.__setattr__(self, 'between', between)
        object.__setattr__(self, 'sigma_mean', np.asarray(self.sigma_mean, dtype=float))
        object.__setattr__(self, 'sigma_cov', np.asarray(self.sigma_cov, dtype=float))

    @property
    def matrix(self) -> np.ndarray:
        return self.within - self.between

    @property
    def size(self) -> int:
        return self.within.shape[0]

    @classmethod
    def from_matrix(cls, a: np.ndarray, lam: float = 1.0) -> 'AffinityGraph':
        """Wrap a given {-1, 0, 1} matrix, e.g. an empty graph or a hand-built one."""
        a = np.asarray(a, dtype=float)
        n = a.shape[0]
        return cls(
            within=(a > 0).astype(float),
            between=(a < 0).astype(float),
            n_within=0,
            n_between=0,
            lam=lam,
            sigma_mean=np.ones(n),
            sigma_cov=np.ones(n),
        )
