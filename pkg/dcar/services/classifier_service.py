"""
Kernel ridge regression over (reduced) GMM components with weighted
average voting, plus the mean/variance-vector and base-GMM baselines.

The feature map of the combined kernel is never formed: training solves
(K + alpha I) C = Y and every prediction is a kernel row times C.
"""
import logging
from dataclasses import replace
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.distance import cdist, pdist, squareform

from dcar.models.audio import FrameMatrix
from dcar.models.classifier import KernelParams, LabelMatrix, MembershipMatrix, TrainedModel
from dcar.models.embedding import Embedding
from dcar.models.errors import DataError, NumericalError
from dcar.models.mixture import GaussianComponent, LabeledComponent, TrackGMM
from dcar.services.affinity_service import BANDWIDTH_FLOOR
from dcar.services.grassmann_service import reduce_components
from dcar.services.spd_service import lem_distance, logm_stack

logger = logging.getLogger(__name__)

RIDGE_RETRIES = 3


def kernel_value(a, b, params: KernelParams) -> float:
    """lam * exp(-||mu_a - mu_b||^2 / (2 s_mu^2)) + exp(-||log S_a - log S_b||_F^2 / (2 s_S^2))."""
    if a.dim != b.dim:
        raise DataError(f"Dimension mismatch: {a.dim} vs {b.dim}")
    d_mean = float(np.sum((a.mean - b.mean) ** 2))
    d_cov = lem_distance(a.covariance, b.covariance) ** 2
    return (params.lam * np.exp(-d_mean / (2.0 * params.sigma_mean ** 2))
            + np.exp(-d_cov / (2.0 * params.sigma_cov ** 2)))


def _features(components: Sequence) -> Tuple[np.ndarray, np.ndarray]:
    means = np.stack([c.mean for c in components])
    logs = logm_stack(np.stack([c.covariance.entries for c in components]))
    return means, logs.reshape(len(components), -1)


def _combine(mean_sq, cov_sq, params: KernelParams) -> np.ndarray:
    return (params.lam * np.exp(-mean_sq / (2.0 * params.sigma_mean ** 2))
            + np.exp(-cov_sq / (2.0 * params.sigma_cov ** 2)))


def kernel_matrix(rows: Sequence, cols: Optional[Sequence], params: KernelParams) -> np.ndarray:
    """
    Combined kernel between two component lists

    With ``cols=None`` the symmetric training matrix is returned; its
    diagonal is exactly lam + 1.
    """
    row_means, row_logs = _features(rows)
    if cols is None:
        if len(rows) == 1:
            return np.full((1, 1), params.lam + 1.0)
        mean_sq = squareform(pdist(row_means, 'sqeuclidean'))
        cov_sq = squareform(pdist(row_logs, 'sqeuclidean'))
        return _combine(mean_sq, cov_sq, params)
    col_means, col_logs = _features(cols)
    if row_means.shape[1] != col_means.shape[1]:
        raise DataError(f"Dimension mismatch: {row_means.shape[1]} vs {col_means.shape[1]}")
    return _combine(cdist(row_means, col_means, 'sqeuclidean'), cdist(row_logs, col_logs, 'sqeuclidean'), params)


def median_bandwidths(components: Sequence) -> Tuple[float, float]:
    """Median pairwise mean distance and log-Euclidean covariance distance."""
    means, logs = _features(components)
    if len(components) < 2:
        return 1.0, 1.0
    sigma_mean = max(float(np.median(pdist(means))), BANDWIDTH_FLOOR)
    sigma_cov = max(float(np.median(pdist(logs))), BANDWIDTH_FLOOR)
    return sigma_mean, sigma_cov


def solve_ridge(kernel: np.ndarray, targets: np.ndarray, alpha: float) -> Tuple[np.ndarray, float]:
    """
    Solve (K + alpha I) C = Y by Cholesky factorization

    Retries with alpha * 10 up to three times when the factorization fails.

    Returns:
        tuple: (C, alpha actually used)
    """
    identity = np.eye(kernel.shape[0])
    for attempt in range(RIDGE_RETRIES + 1):
        try:
            factor = cho_factor(kernel + alpha * identity, lower=True)
            return cho_solve(factor, targets), alpha
        except LinAlgError:
            if attempt == RIDGE_RETRIES:
                break
            logger.warning(f"Kernel ridge factorization failed with alpha={alpha:g}; retrying with {alpha * 10:g}")
            alpha *= 10.0
    smallest = float(np.linalg.eigvalsh(kernel)[0])
    raise NumericalError(
        f"Kernel ridge system is not positive definite (alpha={alpha:g}, smallest kernel eigenvalue {smallest:.3g})"
    )


def catalog(labels: Sequence[str]) -> Tuple[str, ...]:
    """Event catalog in sorted order."""
    return tuple(sorted(set(labels)))


def train(components: Sequence[LabeledComponent], params: KernelParams, events: Optional[Sequence[str]] = None,
          embedding: Optional[Embedding] = None, method: str = 'dcar', **metadata) -> TrainedModel:
    """
    Fit the KRR classifier on reduced labeled components

    Args:
        components: reduced labeled training components
        params: kernel parameters
        events: event catalog (defaults to the sorted labels present)
        embedding: W used to reduce the components (identity if omitted)
        method: 'dcar' or 'gmm'
        **metadata: stored on the model (n_components, gmm_seed, normalize, projection)

    Returns:
        TrainedModel: model holding C = (K + alpha I)^{-1} Y
    """
    if not components:
        raise DataError("Cannot train on an empty component list")
    labels = [c.label for c in components]
    events = tuple(events) if events is not None else catalog(labels)
    if len(components) < len(events):
        raise DataError(f"Need at least as many components ({len(components)}) as events ({len(events)})")
    y = LabelMatrix.from_labels(labels, events).matrix
    k = kernel_matrix(components, None, params)
    coefficients, alpha = solve_ridge(k, y, params.alpha)
    if alpha != params.alpha:
        params = replace(params, alpha=alpha)
    return TrainedModel(
        method=method,
        events=events,
        params=params,
        coefficients=coefficients,
        labels=tuple(labels),
        embedding=embedding if embedding is not None else Embedding.identity(components[0].dim),
        components=tuple(components),
        **metadata,
    )


def gmm_baseline(components: Sequence[LabeledComponent], params: KernelParams,
                 events: Optional[Sequence[str]] = None, **metadata) -> TrainedModel:
    """The same classifier on unreduced components (W = I)."""
    return train(components, params, events, Embedding.identity(components[0].dim), method='gmm', **metadata)


def predict_membership(model: TrainedModel, components: Sequence[GaussianComponent]) -> MembershipMatrix:
    """M_p = K_p C for each reduced test component."""
    if not components:
        raise DataError("No test components given")
    if model.method == 'mv':
        raise DataError("Use predict_vector for mean/variance models")
    r = model.embedding.r
    if any(c.dim != r for c in components):
        raise DataError(f"Test components must be reduced to r={r} with the model's embedding")
    rows = kernel_matrix(components, model.components, model.params)
    return MembershipMatrix(rows @ model.coefficients, [c.weight for c in components])


def vote(membership: MembershipMatrix, events: Sequence[str]) -> str:
    """Weighted average vote; ties go to the lowest event index."""
    if membership.scores.size == 0:
        raise DataError("Cannot vote on an empty membership matrix")
    scores = membership.event_scores()
    if scores.size != len(events):
        raise DataError(f"{scores.size} scores for {len(events)} events")
    return events[int(np.argmax(scores))]


def classify_mixture(model: TrainedModel, gmm: TrackGMM) -> Tuple[str, np.ndarray]:
    """Reduce a test mixture with the model's W, score it and vote."""
    reduced = reduce_components(model.embedding.matrix, gmm.components)
    membership = predict_membership(model, reduced)
    return vote(membership, model.events), membership.event_scores()


def mv_vector(frames: FrameMatrix) -> np.ndarray:
    """Per-dimension mean followed by per-dimension population variance."""
    if frames.frame_count < 2:
        raise DataError(f"Track {frames.track_id}: mv-vector needs at least 2 frames")
    x = frames.columns
    return np.concatenate([x.mean(axis=1), x.var(axis=1)])


def vector_bandwidth(vectors: np.ndarray) -> float:
    if len(vectors) < 2:
        return 1.0
    return max(float(np.median(pdist(vectors))), BANDWIDTH_FLOOR)


def _gaussian(sq_dist, sigma):
    return np.exp(-sq_dist / (2.0 * sigma ** 2))


def train_vectors(vectors: np.ndarray, labels: Sequence[str], alpha: float, sigma: Optional[float] = None,
                  events: Optional[Sequence[str]] = None, **metadata) -> TrainedModel:
    """
    KRR with a Gaussian kernel on euclidean distance between mv-vectors

    ``sigma`` defaults to the median pairwise distance.
    """
    vectors = np.asarray(vectors, dtype=float)
    events = tuple(events) if events is not None else catalog(labels)
    sigma = sigma or vector_bandwidth(vectors)
    y = LabelMatrix.from_labels(labels, events).matrix
    k = _gaussian(squareform(pdist(vectors, 'sqeuclidean')), sigma) if len(vectors) > 1 else np.ones((1, 1))
    coefficients, alpha = solve_ridge(k, y, alpha)
    # lam and sigma_cov do not enter the vector kernel
    params = KernelParams(lam=1.0, sigma_mean=sigma, sigma_cov=1.0, alpha=alpha)
    return TrainedModel(method='mv', events=events, params=params, coefficients=coefficients,
                        labels=tuple(labels), vectors=vectors, **metadata)


def predict_vector(model: TrainedModel, vector: np.ndarray) -> MembershipMatrix:
    vector = np.atleast_2d(np.asarray(vector, dtype=float))
    if vector.shape[1] != model.vectors.shape[1]:
        raise DataError(f"Vector has length {vector.shape[1]}, model expects {model.vectors.shape[1]}")
    row = _gaussian(cdist(vector, model.vectors, 'sqeuclidean'), model.params.sigma_mean)
    return MembershipMatrix(row @ model.coefficients, [1.0])
