"""
Label-aware nearest-neighbor graph over labeled GMM components.

Similarity between two components mixes a heat kernel on the euclidean
distance of their means with one on the log-Euclidean distance of their
covariances; bandwidths are self-tuned per component.
"""
import logging
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import pdist, squareform

from dcar.models.errors import DataError
from dcar.models.graph import AffinityGraph
from dcar.models.mixture import LabeledComponent
from dcar.services.spd_service import lem_distance, pairwise_distances

logger = logging.getLogger(__name__)

SELF_TUNING_NEIGHBOR = 7
BANDWIDTH_FLOOR = 1e-12


def component_similarity(g_i, g_j, lam: float, sigma_mean: float, sigma_cov: float) -> float:
    """lam * exp(-d_mu^2 / (2 s_mu^2)) + exp(-d_Sigma^2 / (2 s_Sigma^2))."""
    if g_i.dim != g_j.dim:
        raise DataError(f"Dimension mismatch: {g_i.dim} vs {g_j.dim}")
    if sigma_mean <= 0 or sigma_cov <= 0:
        raise DataError("Bandwidths must be positive")
    d_mean = float(np.linalg.norm(g_i.mean - g_j.mean))
    d_cov = lem_distance(g_i.covariance, g_j.covariance)
    return lam * np.exp(-d_mean ** 2 / (2.0 * sigma_mean ** 2)) + np.exp(-d_cov ** 2 / (2.0 * sigma_cov ** 2))


def component_distances(components: Sequence) -> Tuple[np.ndarray, np.ndarray]:
    """Pairwise euclidean mean distances and log-Euclidean covariance distances."""
    means = np.stack([c.mean for c in components])
    mean_d = squareform(pdist(means)) if len(components) > 1 else np.zeros((1, 1))
    cov_d = pairwise_distances([c.covariance for c in components], 'lem')
    return mean_d, cov_d


def median_distance(distances: np.ndarray) -> float:
    """Median of the strictly-upper-triangular entries, floored."""
    upper = distances[np.triu_indices_from(distances, k=1)]
    if upper.size == 0:
        return BANDWIDTH_FLOOR
    return max(float(np.median(upper)), BANDWIDTH_FLOOR)


def _neighbor_bandwidths(distances: np.ndarray, neighbor: int) -> np.ndarray:
    n = distances.shape[0]
    if n <= neighbor:
        sigma = median_distance(distances)
        return np.full(n, sigma)
    masked = distances + np.diag(np.full(n, np.inf))
    kth = np.sort(masked, axis=1)[:, neighbor - 1]
    return np.maximum(kth, BANDWIDTH_FLOOR)


def self_tuning_bandwidths(components: Sequence, neighbor: int = SELF_TUNING_NEIGHBOR,
                           distances: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-component bandwidths: distance to the k-th nearest neighbor

    With fewer than ``neighbor + 1`` components every bandwidth falls back to
    the median pairwise distance.

    Args:
        components: components the bandwidths are computed over
        neighbor: rank of the neighbor whose distance is the bandwidth
        distances: precomputed output of :func:`component_distances`

    Returns:
        tuple: (sigma_mean, sigma_cov), each of length N
    """
    if len(components) <= neighbor:
        logger.warning(
            f"Only {len(components)} components; using the median pairwise distance as a global bandwidth"
        )
    mean_d, cov_d = distances if distances is not None else component_distances(components)
    return _neighbor_bandwidths(mean_d, neighbor), _neighbor_bandwidths(cov_d, neighbor)


def similarity_matrix(mean_d, cov_d, lam, sigma_mean, sigma_cov) -> np.ndarray:
    """Component similarity for all pairs, with sigma^2 replaced by sigma_i * sigma_j."""
    scale_mean = np.outer(sigma_mean, sigma_mean)
    scale_cov = np.outer(sigma_cov, sigma_cov)
    return lam * np.exp(-mean_d ** 2 / (2.0 * scale_mean)) + np.exp(-cov_d ** 2 / (2.0 * scale_cov))


def _nearest(similarities: np.ndarray, candidates: np.ndarray, count: int) -> np.ndarray:
    """Most similar candidates first; ties go to the lower index."""
    if candidates.size == 0:
        return candidates
    return candidates[np.lexsort((candidates, -similarities[candidates]))][:count]


def build_affinity(components: Sequence[LabeledComponent], n_within: int, n_between: int, lam: float,
                   bandwidth: str = 'self-tuning', exclude_same_track: bool = False) -> AffinityGraph:
    """
    Build the signed affinity graph A = S_w - S_b

    Args:
        components: labeled components, in pooled order
        n_within: number of same-label neighbors per component
        n_between: number of different-label neighbors per component
        lam: weight of the mean term in the similarity
        bandwidth: 'self-tuning' (per component) or 'global' (median distance)
        exclude_same_track: skip same-track components as within-class neighbors

    Returns:
        AffinityGraph: the symmetric graph with its bandwidth tables
    """
    if n_within < 1 or n_between < 1:
        raise DataError("n_within and n_between must be >= 1")
    if lam <= 0:
        raise DataError("lambda must be positive")
    n = len(components)
    if n < 2:
        raise DataError("An affinity graph needs at least two components")
    labels = np.array([c.label for c in components])
    tracks = np.array([c.track_id for c in components])
    if len(set(labels)) < 2:
        logger.warning("Only one label present; the between-class graph is empty")

    mean_d, cov_d = component_distances(components)
    if bandwidth == 'self-tuning':
        sigma_mean, sigma_cov = self_tuning_bandwidths(components, distances=(mean_d, cov_d))
    elif bandwidth == 'global':
        sigma_mean = np.full(n, median_distance(mean_d))
        sigma_cov = np.full(n, median_distance(cov_d))
    else:
        raise DataError(f"Unknown bandwidth rule {bandwidth!r}")
    similarities = similarity_matrix(mean_d, cov_d, lam, sigma_mean, sigma_cov)

    within = np.zeros((n, n))
    between = np.zeros((n, n))
    index = np.arange(n)
    short = set()
    for i in range(n):
        same = (labels == labels[i]) & (index != i)
        if exclude_same_track:
            same &= tracks != tracks[i]
        same_idx = index[same]
        if same_idx.size < n_within:
            short.add(labels[i])
        chosen = _nearest(similarities[i], same_idx, n_within)
        within[i, chosen] = within[chosen, i] = 1.0

        chosen = _nearest(similarities[i], index[labels != labels[i]], n_between)
        between[i, chosen] = between[chosen, i] = 1.0

    for label in sorted(short):
        logger.warning(f"Event {label!r} has too few members for {n_within} within-class neighbors per component")

    return AffinityGraph(
        within=within,
        between=between,
        n_within=n_within,
        n_between=n_between,
        lam=lam,
        sigma_mean=sigma_mean,
        sigma_cov=sigma_cov,
    )
