"""
Phase 1: full-covariance Gaussian mixtures fitted per track by EM.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from itertools import repeat
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import logsumexp
from sklearn.cluster import kmeans_plusplus
from tqdm import tqdm

from dcar.config import EM_MAX_ITER, EM_TOLERANCE
from dcar.models.audio import FrameMatrix
from dcar.models.errors import DataError, NumericalError
from dcar.models.mixture import GaussianComponent, LabeledComponent, TrackGMM
from dcar.services.spd_service import default_epsilon, regularize_spd

logger = logging.getLogger(__name__)

COLLAPSE_FRACTION = 1e-6
MONOTONE_SLACK = 1e-9


def _log_gaussian(x, mean, cov):
    """Log density of every row of x under N(mean, cov)."""
    try:
        chol = cholesky(cov, lower=True)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"Covariance is not positive definite: {e}") from e
    z = solve_triangular(chol, (x - mean).T, lower=True)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (x.shape[1] * np.log(2.0 * np.pi) + log_det + np.sum(z * z, axis=0))


def _log_joint(x, weights, means, covs):
    return np.column_stack([
        np.log(w) + _log_gaussian(x, mu, cov) for w, mu, cov in zip(weights, means, covs)
    ])


class _EMState:
    """Mutable parameter arrays of one EM run."""

    def __init__(self, x, epsilon):
        self.x = x
        self.epsilon = epsilon
        self.global_cov = np.atleast_2d(np.cov(x, rowvar=False, bias=True)) if len(x) > 1 else np.zeros((x.shape[1],) * 2)
        self.weights = None
        self.means = None
        self.covs = None

    def maximize(self, resp, point_scores):
        """M-step; re-seeds collapsed components at the least explained point. Returns True if any re-seed happened."""
        x = self.x
        m, d = x.shape
        mass = resp.sum(axis=0)
        collapsed = mass < COLLAPSE_FRACTION * m
        means = np.zeros((resp.shape[1], d))
        covs = np.zeros((resp.shape[1], d, d))
        order = np.argsort(point_scores, kind='stable')
        used = 0
        for k in range(resp.shape[1]):
            if collapsed[k]:
                means[k] = x[order[used % m]]
                used += 1
                covs[k] = regularize_spd(self.global_cov, self.epsilon).entries
                mass[k] = 1.0
                continue
            means[k] = resp[:, k] @ x / mass[k]
            centered = x - means[k]
            covs[k] = regularize_spd((resp[:, k, None] * centered).T @ centered / mass[k], self.epsilon).entries
        self.weights = mass / mass.sum()
        self.means = means
        self.covs = covs
        if np.any(collapsed):
            logger.debug(f"Re-seeded {int(collapsed.sum())} collapsed component(s)")
        return bool(np.any(collapsed))


def fit_track_gmm(frames: FrameMatrix, n_components: int, seed: int = 0,
                  tolerance: float = EM_TOLERANCE, max_iter: int = EM_MAX_ITER) -> TrackGMM:
    """
    Fit a full-covariance GMM to one track's frames

    EM starts from k-means++ centres (seeded) followed by one hard-assignment
    M-step, and stops when the relative log-likelihood change falls below
    ``tolerance`` or after ``max_iter`` iterations.

    Args:
        frames (FrameMatrix): d x m features of the track
        n_components (int): number of components P; clamped to m when m < P
        seed (int): seed for the k-means++ initialization
        tolerance (float): relative log-likelihood change for convergence
        max_iter (int): maximum number of EM iterations

    Returns:
        TrackGMM: the fitted mixture, with its per-iteration log-likelihoods
    """
    if n_components < 1:
        raise DataError(f"Component count must be >= 1, got {n_components}")
    x = frames.samples
    m = x.shape[0]
    if m < n_components:
        logger.warning(f"Track {frames.track_id}: {m} frames < P={n_components}; clamping P to {m}")
        n_components = m

    state = _EMState(x, default_epsilon(np.atleast_2d(np.cov(x, rowvar=False, bias=True))) if m > 1 else 1e-10)

    centers, _ = kmeans_plusplus(x, n_components, random_state=seed)
    sq_dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assignment = np.argmin(sq_dist, axis=1)
    resp = np.zeros((m, n_components))
    resp[np.arange(m), assignment] = 1.0
    reseeded = state.maximize(resp, -sq_dist.min(axis=1))

    history = []
    for it in range(max_iter + 1):
        log_joint = _log_joint(x, state.weights, state.means, state.covs)
        per_point = logsumexp(log_joint, axis=1)
        ll = float(per_point.sum())
        if not np.isfinite(ll):
            raise NumericalError(f"Track {frames.track_id}: non-finite log-likelihood at EM iteration {it}")
        if history and not reseeded:
            prev = history[-1]
            if ll < prev - MONOTONE_SLACK * max(1.0, abs(prev)):
                logger.warning(f"Track {frames.track_id}: log-likelihood decreased {prev:.10g} -> {ll:.10g}")
        converged = bool(history) and not reseeded and abs(ll - history[-1]) < tolerance * abs(history[-1])
        history.append(ll)
        if converged or it == max_iter:
            break
        resp = np.exp(log_joint - per_point[:, None])
        reseeded = state.maximize(resp, per_point)

    components = tuple(
        GaussianComponent(weight=w, mean=mu, covariance=cov)
        for w, mu, cov in zip(state.weights, state.means, state.covs)
    )
    return TrackGMM(track_id=frames.track_id, components=components, log_likelihood_trace=tuple(history))


def log_likelihood(g: TrackGMM, frames) -> float:
    """Total log-likelihood of the frames under the mixture."""
    x = frames.samples if isinstance(frames, FrameMatrix) else np.atleast_2d(np.asarray(frames, dtype=float))
    if x.shape[1] != g.dim:
        raise DataError(f"Frames have dim {x.shape[1]}, mixture has dim {g.dim}")
    log_joint = _log_joint(
        x,
        g.weights,
        [c.mean for c in g.components],
        [c.covariance.entries for c in g.components],
    )
    return float(logsumexp(log_joint, axis=1).sum())


def pool_components(models: Sequence[Tuple[TrackGMM, str]]) -> List[LabeledComponent]:
    """
    Flatten per-track mixtures into one labeled list

    Order is track order, then component index.
    """
    if not models:
        raise DataError("Cannot pool an empty list of mixtures")
    pooled = []
    for gmm, label in models:
        if label is None or str(label) == '':
            raise DataError(f"Track {gmm.track_id} has no label")
        pooled.extend(LabeledComponent(component=c, label=label, track_id=gmm.track_id) for c in gmm.components)
    return pooled


def _fit_one(frames, n_components, seed, tolerance, max_iter):
    return fit_track_gmm(frames, n_components, seed, tolerance, max_iter)


def fit_tracks(tracks: Sequence[FrameMatrix], n_components: int, seed: int = 0,
               tolerance: float = EM_TOLERANCE, max_iter: int = EM_MAX_ITER,
               jobs: int = 1, progress: Optional[bool] = None) -> List[TrackGMM]:
    """
    Fit one mixture per track, optionally on a process pool

    Results keep the input order regardless of ``jobs``.
    """
    disable = not progress if progress is not None else not logger.isEnabledFor(logging.INFO)
    args = (tracks, repeat(n_components), repeat(seed), repeat(tolerance), repeat(max_iter))
    if jobs <= 1 or len(tracks) <= 1:
        return list(tqdm(map(_fit_one, *args), total=len(tracks), desc='Fitting GMMs', disable=disable))
    with ProcessPoolExecutor(max_workers=jobs) as executor:
        return list(tqdm(executor.map(_fit_one, *args), total=len(tracks), desc='Fitting GMMs', disable=disable))
