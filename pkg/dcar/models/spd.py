"""
Symmetric and symmetric-positive-definite matrix value types.
"""
from dataclasses import dataclass

import numpy as np

from dcar.models.errors import DataError, NumericalError

SYMMETRY_TOLERANCE = 1e-12


def symmetrize(entries):
    """(M + M^T) / 2 as a float array."""
    m = np.asarray(entries, dtype=float)
    return (m + m.T) / 2.0


def _check_square(m):
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        raise DataError(f"Expected a non-empty square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DataError("Matrix has non-finite entries")


@dataclass(frozen=True, eq=False)
class SymMatrix:
    """Real symmetric matrix; entries are symmetrized on construction."""

    entries: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=float)
        _check_square(m)
        m = symmetrize(m)
        m.setflags(write=False)
        object.__setattr__(self, 'entries', m)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


@dataclass(frozen=True, eq=False)
class SpdMatrix(SymMatrix):
    """Symmetric matrix whose smallest eigenvalue is strictly positive."""

    def __post_init__(self):
        super().__post_init__()
        smallest = float(np.linalg.eigvalsh(self.entries)[0])
        if not smallest > 0:
            raise NumericalError(f"Matrix is not positive definite: smallest eigenvalue {smallest:.6g}")

    @classmethod
    def identity(cls, dim: int) -> 'SpdMatrix':
        return cls(np.eye(dim))
