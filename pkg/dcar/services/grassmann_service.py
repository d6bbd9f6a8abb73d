"""
Phase 2: learn the embedding W by conjugate gradient on the Grassmannian.

The objective is

    F(W) = sum_ij A_ij (lam * ||W^T (mu_i - mu_j)||^2
                        + ||log(W^T S_i W) - log(W^T S_j W)||_F^2)

over d x r matrices with orthonormal columns. F(W) = F(WR) for every
rotation R, so the search runs on G(r, d): iterates move along closed-form
geodesics and previous directions are parallel transported.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import subspace_angles
from scipy.optimize import minimize_scalar

from dcar.models.embedding import Embedding, OptimizerConfig, OptimizerTrace, TangentVector
from dcar.models.errors import DataError, NumericalError
from dcar.models.graph import AffinityGraph
from dcar.models.mixture import GaussianComponent, LabeledComponent
from dcar.models.spd import SpdMatrix, symmetrize
from dcar.services.spd_service import logm_stack

logger = logging.getLogger(__name__)

GRADIENT_FLOOR = 1e-12
EIGEN_GAP = 1e-10


def _as_array(x) -> np.ndarray:
    return np.asarray(getattr(x, 'matrix', x), dtype=float)


def _component_arrays(components: Sequence) -> Tuple[np.ndarray, np.ndarray]:
    means = np.stack([c.mean for c in components])
    covs = np.stack([c.covariance.entries for c in components])
    return means, covs


def _polar(w: np.ndarray) -> np.ndarray:
    """Nearest matrix with orthonormal columns."""
    u, _, vt = np.linalg.svd(w, full_matrices=False)
    return u @ vt


class _Objective:
    """F and its euclidean gradient for fixed components and affinity."""

    def __init__(self, means, covs, affinity: np.ndarray, lam: float, log_derivative: str = 'exact'):
        self.means = means
        self.covs = covs
        self.affinity = affinity
        self.lam = lam
        self.log_derivative = log_derivative
        rows, cols = np.nonzero(affinity)
        self.pairs = (rows, cols, affinity[rows, cols])
        self.laplacian = np.diag(affinity.sum(axis=1)) - affinity

    def _reduced(self, w):
        reduced = np.einsum('di,nde,ej->nij', w, self.covs, w)
        reduced = (reduced + np.swapaxes(reduced, -1, -2)) / 2.0
        values, vectors = np.linalg.eigh(reduced)
        if values.size and values[..., 0].min() <= 0:
            raise NumericalError(f"Reduced covariance is not SPD (eigenvalue {values[..., 0].min():.3g})")
        logs = np.einsum('nij,nj,nkj->nik', vectors, np.log(values), vectors)
        return values, vectors, logs

    def evaluate(self, w):
        """Objective value and the cache reused by :meth:`gradient`."""
        cache = self._reduced(w)
        rows, cols, weights = self.pairs
        if rows.size == 0:
            return 0.0, cache
        logs = cache[2]
        projected = self.means @ w
        mean_term = np.sum((projected[rows] - projected[cols]) ** 2, axis=1)
        cov_term = np.sum((logs[rows] - logs[cols]) ** 2, axis=(1, 2))
        return float(np.sum(weights * (self.lam * mean_term + cov_term))), cache

    def value(self, w) -> float:
        return self.evaluate(w)[0]

    def gradient(self, w, cache=None) -> np.ndarray:
        if cache is None:
            cache = self._reduced(w)
        values, vectors, logs = cache
        grad = 4.0 * self.lam * self.means.T @ (self.laplacian @ (self.means @ w))

        degree = self.affinity.sum(axis=1)
        b = degree[:, None, None] * logs - np.einsum('ij,jab->iab', self.affinity, logs)
        if self.log_derivative == 'exact':
            # Frechet derivative of log via divided differences in the eigenbasis
            lk = values[:, :, None]
            ll = values[:, None, :]
            gap = lk - ll
            close = np.abs(gap) <= EIGEN_GAP * np.maximum(lk, ll)
            log_gap = np.log(lk) - np.log(ll)
            divided = np.where(close, 1.0 / ((lk + ll) / 2.0), log_gap / np.where(close, 1.0, gap))
            inner = np.einsum('nji,njk,nkl->nil', vectors, b, vectors)
            g = np.einsum('nij,njk,nlk->nil', vectors, divided * inner, vectors)
        else:
            inverse = np.einsum('nij,nj,nkj->nik', vectors, 1.0 / values, vectors)
            g = inverse @ b
        grad += 8.0 * np.einsum('ndr,nrs->ds', self.covs @ w, g)
        return grad


def _objective_for(components, graph, lam, log_derivative='exact') -> _Objective:
    means, covs = _component_arrays(components)
    affinity = graph.matrix if isinstance(graph, AffinityGraph) else np.asarray(graph, dtype=float)
    if affinity.shape != (len(components), len(components)):
        raise DataError(f"Affinity of shape {affinity.shape} does not match {len(components)} components")
    return _Objective(means, covs, affinity, lam, log_derivative)


def objective(w, components: Sequence, graph, lam: float) -> float:
    """
    Evaluate F(W) for labeled components and their affinity graph

    Args:
        w: Embedding (or d x r orthonormal array)
        components: components the graph was built over
        graph: AffinityGraph or N x N signed matrix
        lam: weight of the mean term

    Returns:
        float: objective value (may be negative)
    """
    return _objective_for(components, graph, lam).value(_as_array(w))


def euclidean_gradient(w, components: Sequence, graph, lam: float, log_derivative: str = 'exact') -> np.ndarray:
    """d x r euclidean gradient of F at W."""
    return _objective_for(components, graph, lam, log_derivative).gradient(_as_array(w))


def project_to_tangent(w, g) -> TangentVector:
    """Remove the normal component: D = G - W W^T G."""
    w_arr = _as_array(w)
    g = _as_array(g)
    base = w if isinstance(w, Embedding) else Embedding(w_arr)
    return TangentVector(base, g - w_arr @ (w_arr.T @ g))


def _compact_svd(h):
    u, s, vt = np.linalg.svd(h, full_matrices=False)
    return u, s, vt.T


def _geodesic(w, u, s, v, t):
    return _polar((w @ v) * np.cos(s * t) @ v.T + (u * np.sin(s * t)) @ v.T)


def _transport_direction(w, u, s, v, t):
    return ((-(w @ v) * np.sin(s * t) + u * np.cos(s * t)) * s) @ v.T


def _transport_vector(w, d, u, s, v, t):
    return d - ((w @ v) * np.sin(s * t) + u * (1.0 - np.cos(s * t))) @ (u.T @ d)


def geodesic(w, h, t: float) -> Embedding:
    """
    Point W(t) on the geodesic leaving W in direction H

    W(t) = [W V, U] [cos(Lambda t); sin(Lambda t)] V^T with U Lambda V^T the
    compact SVD of H.
    """
    w_arr, h = _as_array(w), _as_array(h)
    if t == 0 or not np.any(h):
        return w if isinstance(w, Embedding) else Embedding(w_arr)
    u, s, v = _compact_svd(h)
    return Embedding(_geodesic(w_arr, u, s, v, t))


def transport_search_direction(w, h, t: float) -> TangentVector:
    """Parallel transport of H along its own geodesic to W(t)."""
    w_arr, h = _as_array(w), _as_array(h)
    new_base = geodesic(w, h, t)
    if t == 0 or not np.any(h):
        return TangentVector(new_base, h.copy())
    u, s, v = _compact_svd(h)
    return TangentVector(new_base, _transport_direction(w_arr, u, s, v, t))


def transport_gradient(w, d, h, t: float) -> TangentVector:
    """Parallel transport of a tangent vector D along the geodesic defined by H."""
    w_arr, d, h = _as_array(w), _as_array(d), _as_array(h)
    new_base = geodesic(w, h, t)
    if t == 0 or not np.any(h):
        return TangentVector(new_base, d.copy())
    u, s, v = _compact_svd(h)
    return TangentVector(new_base, _transport_vector(w_arr, d, u, s, v, t))


def cg_step_size(d_new, transported_d_old, d_old) -> float:
    """gamma = <D_new - dD_old, D_new> / <D_old, D_old>; 0 when D_old vanishes."""
    d_new, moved, d_old = _as_array(d_new), _as_array(transported_d_old), _as_array(d_old)
    if not d_new.shape == moved.shape == d_old.shape:
        raise DataError("cg_step_size needs arrays of equal shape")
    denominator = float(np.sum(d_old * d_old))
    if denominator == 0.0:
        return 0.0
    return float(np.sum((d_new - moved) * d_new)) / denominator


@dataclass(frozen=True)
class LineSearchResult:
    step: float
    value: float
    restart: bool


def line_search(w, h, objective_fn: Callable[[np.ndarray], float], f0: Optional[float] = None,
                slope: Optional[float] = None, config: OptimizerConfig = OptimizerConfig()) -> LineSearchResult:
    """
    Minimize t -> F(W(t)) over the first quarter period of the geodesic

    A bounded scalar search on [0, pi / (2 sigma_max(H))] is tried first; the
    better of its minimizer and the interval end is kept. If neither improves
    on F(W), Armijo backtracking from the interval end takes over. When no
    step decreases F the result is t = 0 with ``restart`` set.

    Args:
        w: current point (Embedding or array)
        h: search direction, tangent at w
        objective_fn: maps a d x r array to F
        f0: F(w) if already known
        slope: <grad F, H> if known (negative for a descent direction)
        config: optimizer settings (tolerance, Armijo constants)

    Returns:
        LineSearchResult: step, objective at that step, restart flag
    """
    w_arr, h = _as_array(w), _as_array(h)
    if f0 is None:
        f0 = objective_fn(w_arr)
    if not np.any(h):
        return LineSearchResult(0.0, f0, False)

    u, s, v = _compact_svd(h)
    t_max = np.pi / (2.0 * s[0])

    def phi(t):
        value = objective_fn(_geodesic(w_arr, u, s, v, t))
        return value if np.isfinite(value) else np.inf

    result = minimize_scalar(phi, bounds=(0.0, t_max), method='bounded',
                             options={'xatol': config.line_search_xtol * t_max})
    candidates = [(float(result.fun), float(result.x)), (phi(t_max), t_max)]
    best_value, best_t = min(candidates)
    if best_value < f0:
        return LineSearchResult(best_t, best_value, False)

    t = t_max
    for _ in range(config.max_backtracks):
        t *= 0.5
        value = phi(t)
        bound = f0 + config.armijo_c * t * slope if slope is not None and slope < 0 else f0
        if value < f0 and value <= bound:
            return LineSearchResult(t, value, False)
    return LineSearchResult(0.0, f0, True)


def initial_embedding(components: Sequence, r: int, mode: str = 'random', seed: int = 0) -> Embedding:
    """
    Starting point W(0)

    'random' takes the orthonormal factor of a seeded Gaussian d x r matrix;
    'pca' takes the top-r left singular vectors of the centred means stacked
    with the log-covariances.
    """
    d = components[0].dim
    if mode == 'random':
        rng = np.random.default_rng(seed)
        q, upper = np.linalg.qr(rng.standard_normal((d, r)))
        return Embedding(q * np.sign(np.where(np.diag(upper) == 0, 1.0, np.diag(upper))))
    if mode == 'pca':
        means, covs = _component_arrays(components)
        logs = logm_stack(covs)
        stacked = np.hstack([(means - means.mean(axis=0)).T] + list(logs))
        u, _, _ = np.linalg.svd(stacked, full_matrices=False)
        return Embedding(_polar(u[:, :r]))
    raise DataError(f"Unknown initialization {mode!r}")


def learn_embedding(components: Sequence[LabeledComponent], graph, r: int,
                    config: OptimizerConfig = OptimizerConfig()) -> Tuple[Embedding, OptimizerTrace]:
    """
    Conjugate gradient on G(r, d) for the discriminative embedding

    Each iteration: compact SVD of H, line search along the geodesic, move,
    transport H and D, new gradient, conjugacy coefficient gamma and new
    direction H = -D + gamma * dH. H is reset to -D every d*r iterations
    (or ``config.restart_period``), whenever it is not a descent direction,
    and whenever gamma < 0. Stops after ``config.patience`` consecutive
    iterations with relative change below ``config.tolerance`` or after
    ``config.max_iters``.

    Args:
        components: labeled d-dimensional components
        graph: AffinityGraph over the same components
        r: reduced dimension, 1 <= r < d
        config: optimizer settings

    Returns:
        tuple: (Embedding, OptimizerTrace)
    """
    if not components:
        raise DataError("learn_embedding needs components")
    d = components[0].dim
    if not 1 <= r < d:
        raise DataError(f"Reduced dimension must satisfy 1 <= r < d={d}, got {r}")
    problem = _objective_for(components, graph, config.lam, config.log_derivative)
    w = initial_embedding(components, r, config.init, config.seed).matrix.copy()

    value, cache = problem.evaluate(w)
    if not np.isfinite(value):
        raise NumericalError("Objective is not finite at the initial point", iteration=0, last_good=None)
    grad = problem.gradient(w, cache)
    direction_d = grad - w @ (w.T @ grad)
    search = -direction_d
    trace = OptimizerTrace()
    trace.record(value, 0.0, np.linalg.norm(direction_d), True)

    period = config.restart_period or d * r
    since_restart = 0
    stalled = 0
    restart_next = False
    for iteration in range(1, config.max_iters + 1):
        grad_norm = np.linalg.norm(direction_d)
        if grad_norm < GRADIENT_FLOOR:
            break
        restarted = restart_next
        slope = float(np.sum(direction_d * search))
        if slope >= 0:
            search, slope, restarted = -direction_d, -grad_norm ** 2, True

        step = line_search(w, search, problem.value, value, slope, config)
        if step.restart and not restarted:
            search, slope, restarted = -direction_d, -grad_norm ** 2, True
            step = line_search(w, search, problem.value, value, slope, config)
        if step.restart:
            logger.debug(f"No decrease along steepest descent at iteration {iteration}; stopping")
            break

        u, s, v = _compact_svd(search)
        w_new = _geodesic(w, u, s, v, step.step)
        moved_search = _transport_direction(w, u, s, v, step.step)
        moved_d = _transport_vector(w, direction_d, u, s, v, step.step)

        new_value, cache = problem.evaluate(w_new)
        if not np.isfinite(new_value):
            raise NumericalError(f"Objective became non-finite at iteration {iteration}",
                                 iteration=iteration, last_good=Embedding(_polar(w)))
        grad = problem.gradient(w_new, cache)
        new_d = grad - w_new @ (w_new.T @ grad)

        gamma = cg_step_size(new_d, moved_d, direction_d)
        since_restart += 1
        restart_next = gamma < 0 or since_restart >= period
        if restart_next:
            search = -new_d
            since_restart = 0
        else:
            search = -new_d + gamma * moved_search
        trace.record(new_value, step.step, np.linalg.norm(new_d), restarted)

        change = abs(value - new_value) / max(abs(value), GRADIENT_FLOOR)
        stalled = stalled + 1 if change < config.tolerance else 0
        w, value, direction_d = w_new, new_value, new_d
        if stalled >= config.patience:
            break

    logger.info(f"Embedding learned: F {trace.objective[0]:.6g} -> {trace.objective[-1]:.6g} "
                f"in {len(trace) - 1} iteration(s)")
    return Embedding(w), trace


def reduce_component(w, g: GaussianComponent) -> GaussianComponent:
    """mu -> W^T mu, Sigma -> W^T Sigma W (symmetrized); weight unchanged."""
    w = _as_array(w)
    if w.shape[0] != g.dim:
        raise DataError(f"Embedding has d={w.shape[0]}, component has dim {g.dim}")
    return GaussianComponent(
        weight=g.weight,
        mean=w.T @ g.mean,
        covariance=SpdMatrix(symmetrize(w.T @ g.covariance.entries @ w)),
    )


def reduce_components(w, components: Sequence) -> list:
    """Reduce plain or labeled components, preserving labels and track ids."""
    out = []
    for c in components:
        if isinstance(c, LabeledComponent):
            out.append(LabeledComponent(reduce_component(w, c.component), c.label, c.track_id))
        else:
            out.append(reduce_component(w, c))
    return out


def principal_angles(w, reference) -> np.ndarray:
    """Principal angles in radians between span(W) and span(reference), smallest first."""
    a, b = _as_array(w), _as_array(reference)
    if a.shape[0] != b.shape[0]:
        raise DataError(f"Subspaces live in different dimensions: {a.shape[0]} vs {b.shape[0]}")
    return np.sort(subspace_angles(a, b))
