"""
Matrix functions and distances on the cone of SPD matrices.

Matrix logarithm and exponential go through the symmetric
eigendecomposition. Three covariance metrics are provided (log-Euclidean,
affine-invariant and Stein) together with the k-nearest-neighbor purity
statistic used to compare them.
"""
import logging
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from scipy.linalg import eigvalsh

from dcar.models.errors import DataError, NumericalError
from dcar.models.spd import SpdMatrix, SymMatrix, symmetrize

logger = logging.getLogger(__name__)

METRICS = ('lem', 'airm', 'stein')


def default_epsilon(m) -> float:
    """Scale-aware jitter: 1e-6 * trace / dim, floored at 1e-10."""
    entries = np.asarray(m, dtype=float)
    return max(1e-6 * float(np.trace(entries)) / entries.shape[0], 1e-10)


def regularize_spd(m, epsilon: Optional[float] = None) -> SpdMatrix:
    """
    Add epsilon to the diagonal so a PSD matrix becomes SPD

    Args:
        m: symmetric matrix (SymMatrix or array)
        epsilon: diagonal jitter; defaults to :func:`default_epsilon`

    Returns:
        SpdMatrix: m + epsilon * I
    """
    entries = symmetrize(m)
    if epsilon is None:
        epsilon = default_epsilon(entries)
    if epsilon <= 0:
        raise DataError(f"epsilon must be positive, got {epsilon}")
    shifted = entries + epsilon * np.eye(entries.shape[0])
    smallest = float(np.linalg.eigvalsh(shifted)[0])
    if not smallest > 0:
        raise NumericalError(
            f"Regularized matrix is still not SPD: smallest eigenvalue {smallest:.6g} "
            f"after adding epsilon={epsilon:.3g}"
        )
    return SpdMatrix(shifted)


def _eig_log(entries):
    values, vectors = np.linalg.eigh(symmetrize(entries))
    if values[0] <= 0:
        raise NumericalError(f"Matrix logarithm needs positive eigenvalues, found {values[0]:.6g}")
    return (vectors * np.log(values)) @ vectors.T


def logm_array(entries) -> np.ndarray:
    """Matrix logarithm of a single SPD array, returned as a plain array."""
    return symmetrize(_eig_log(entries))


def logm_stack(stack) -> np.ndarray:
    """Matrix logarithms of an (N, k, k) stack of SPD arrays."""
    stack = np.asarray(stack, dtype=float)
    stack = (stack + np.swapaxes(stack, -1, -2)) / 2.0
    values, vectors = np.linalg.eigh(stack)
    smallest = values[..., 0].min() if values.size else 1.0
    if smallest <= 0:
        raise NumericalError(f"Matrix logarithm needs positive eigenvalues, found {smallest:.6g}")
    logs = np.einsum('nij,nj,nkj->nik', vectors, np.log(values), vectors)
    return (logs + np.swapaxes(logs, -1, -2)) / 2.0


def sym_log(m: SpdMatrix) -> SymMatrix:
    """U diag(ln lambda) U^T from the eigendecomposition of m."""
    return SymMatrix(_eig_log(np.asarray(m)))


def sym_exp(m: SymMatrix) -> SpdMatrix:
    """Inverse of :func:`sym_log`."""
    values, vectors = np.linalg.eigh(symmetrize(m))
    return SpdMatrix((vectors * np.exp(values)) @ vectors.T)


def _check_pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DataError(f"Dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def lem_distance(a: SpdMatrix, b: SpdMatrix) -> float:
    """Log-Euclidean distance ||log a - log b||_F."""
    a, b = _check_pair(a, b)
    return float(np.linalg.norm(_eig_log(a) - _eig_log(b), 'fro'))


def airm_distance(a: SpdMatrix, b: SpdMatrix) -> float:
    """Affine-invariant distance ||log(a^{-1/2} b a^{-1/2})||_F."""
    a, b = _check_pair(a, b)
    try:
        # generalized eigenvalues of (b, a) are the eigenvalues of a^{-1/2} b a^{-1/2}
        values = eigvalsh(symmetrize(b), symmetrize(a))
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"AIRM distance needs SPD inputs: {e}") from e
    if values[0] <= 0:
        raise NumericalError(f"AIRM distance needs SPD inputs, found eigenvalue {values[0]:.6g}")
    return float(np.sqrt(np.sum(np.log(values) ** 2)))


def stein_divergence(a: SpdMatrix, b: SpdMatrix) -> float:
    """Symmetric Stein divergence ln det((a+b)/2) - 1/2 ln det(ab)."""
    a, b = _check_pair(a, b)
    sign_mid, logdet_mid = np.linalg.slogdet((a + b) / 2.0)
    sign_a, logdet_a = np.linalg.slogdet(a)
    sign_b, logdet_b = np.linalg.slogdet(b)
    if min(sign_mid, sign_a, sign_b) <= 0:
        raise NumericalError("Stein divergence needs SPD inputs")
    return max(0.0, float(logdet_mid - 0.5 * (logdet_a + logdet_b)))


_METRIC_FUNCTIONS: Dict[str, Callable] = {
    'lem': lem_distance,
    'airm': airm_distance,
    'stein': stein_divergence,
}


def metric_function(metric: str) -> Callable:
    try:
        return _METRIC_FUNCTIONS[metric]
    except KeyError:
        raise DataError(f"Unknown metric {metric!r}; expected one of {', '.join(METRICS)}") from None


def pairwise_distances(covariances: Sequence, metric: str = 'lem') -> np.ndarray:
    """
    Symmetric N x N distance matrix between covariances

    Args:
        covariances: SPD matrices of equal dimension
        metric: one of 'lem', 'airm', 'stein'

    Returns:
        np.ndarray: distances with an exact zero diagonal
    """
    fn = metric_function(metric)
    mats = [np.asarray(c, dtype=float) for c in covariances]
    n = len(mats)
    if n and any(m.shape != mats[0].shape for m in mats):
        raise DataError("All covariances must have the same dimension")
    out = np.zeros((n, n))
    if metric == 'lem':
        logs = logm_stack(np.stack(mats)).reshape(n, -1) if n else np.zeros((0, 0))
        for i in range(n):
            out[i, i + 1:] = np.linalg.norm(logs[i + 1:] - logs[i], axis=1)
    else:
        for i in range(n):
            for j in range(i + 1, n):
                out[i, j] = fn(mats[i], mats[j])
    return out + out.T


def pc_purity(components: Sequence, labels: Sequence, metric: str = 'lem', k: int = 1) -> float:
    """
    Average fraction of each component's k nearest neighbors sharing its label

    Neighbors are ranked by covariance distance under ``metric``; the
    component itself is excluded and ties go to the lower index.

    Args:
        components: GaussianComponent objects (only covariances are used)
        labels: event label per component
        metric: one of 'lem', 'airm', 'stein'
        k: neighbor count, 1 <= k < N

    Returns:
        float: PC(k) in [0, 1]
    """
    n = len(components)
    if len(labels) != n:
        raise DataError("components and labels must have the same length")
    if k < 1 or k >= n:
        raise DataError(f"k must satisfy 1 <= k < N={n}, got {k}")
    if len(set(labels)) < 2:
        raise DataError("pc_purity needs at least two distinct labels")
    distances = pairwise_distances([c.covariance for c in components], metric)
    return purity_from_distances(distances, labels, k)


def purity_from_distances(distances: np.ndarray, labels: Sequence, k: int) -> float:
    """PC(k) from a precomputed distance matrix."""
    labels = np.asarray(labels)
    n = len(labels)
    order = np.arange(n)
    total = 0.0
    for i in range(n):
        others = order[order != i]
        # lexsort: last key is primary
        ranked = others[np.lexsort((others, distances[i, others]))][:k]
        total += np.count_nonzero(labels[ranked] == labels[i]) / k
    return total / n
