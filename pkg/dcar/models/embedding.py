"""
Points and tangent vectors on the Grassmannian, optimizer settings and trace.
"""
from dataclasses import dataclass, field
from typing import List

import numpy as np
import pandas as pd

from dcar.models.errors import DataError, NumericalError

ORTHONORMAL_TOLERANCE = 1e-10
TANGENT_TOLERANCE = 1e-8


@dataclass(frozen=True, eq=False)
class Embedding:
    """d x r matrix W with orthonormal columns."""

    matrix: np.ndarray

    def __post_init__(self):
        w = np.array(self.matrix, dtype=float)
        if w.ndim != 2 or w.shape[1] == 0 or w.shape[1] > w.shape[0]:
            raise DataError(f"Embedding must be d x r with 1 <= r <= d, got {w.shape}")
        error = np.linalg.norm(w.T @ w - np.eye(w.shape[1]))
        if error > ORTHONORMAL_TOLERANCE:
            raise NumericalError(f"Embedding columns are not orthonormal (||W^T W - I|| = {error:.3g})")
        w.setflags(write=False)
        object.__setattr__(self, 'matrix', w)

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def r(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def identity(cls, d: int) -> 'Embedding':
        return cls(np.eye(d))


@dataclass(frozen=True, eq=False)
class TangentVector:
    """d x r matrix V at base point W with W^T V = 0."""

    base: Embedding
    matrix: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.matrix, dtype=float)
        if v.shape != self.base.matrix.shape:
            raise DataError(f"Tangent vector shape {v.shape} does not match base point {self.base.matrix.shape}")
        scale = max(1.0, float(np.linalg.norm(v)))
        error = np.linalg.norm(self.base.matrix.T @ v)
        if error > TANGENT_TOLERANCE * scale:
            raise NumericalError(f"Vector is not tangent at its base point (||W^T V|| = {error:.3g})")
        object.__setattr__(self, 'matrix', v)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix))


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings of the conjugate-gradient embedding optimizer."""

    lam: float = 1.0
    max_iters: int = 100
    tolerance: float = 1e-8
    patience: int = 3
    restart_period: int = 0
    line_search_xtol: float = 1e-10
    armijo_c: float = 1e-4
    max_backtracks: int = 30
    init: str = 'random'
    log_derivative: str = 'exact'
    seed: int = 0

    def __post_init__(self):
        if self.lam <= 0:
            raise DataError("lambda must be positive")
        if self.tolerance <= 0 or self.line_search_xtol <= 0:
            raise DataError("tolerances must be positive")
        if self.max_iters < 0:
            raise DataError("max_iters must be >= 0")
        if self.init not in ('random', 'pca'):
            raise DataError(f"Unknown initialization {self.init!r}")
        if self.log_derivative not in ('exact', 'inverse'):
            raise DataError(f"Unknown log derivative {self.log_derivative!r}")


@dataclass
class OptimizerTrace:
    """Per-iteration objective, step, gradient norm and restart flags."""

    objective: List[float] = field(default_factory=list)
    step: List[float] = field(default_factory=list)
    grad_norm: List[float] = field(default_factory=list)
    restarted: List[bool] = field(default_factory=list)

    def record(self, objective, step, grad_norm, restarted):
        self.objective.append(float(objective))
        self.step.append(float(step))
        self.grad_norm.append(float(grad_norm))
        self.restarted.append(bool(restarted))

    def __len__(self):
        return len(self.objective)

    def is_non_increasing(self, slack: float = 1e-10) -> bool:
        values = np.asarray(self.objective)
        return bool(np.all(np.diff(values) <= slack * np.maximum(1.0, np.abs(values[:-1]))))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'iter': np.arange(len(self.objective)),
            'F': self.objective,
            't': self.step,
            'grad_norm': self.grad_norm,
            'restarted': [int(r) for r in self.restarted],
        })
