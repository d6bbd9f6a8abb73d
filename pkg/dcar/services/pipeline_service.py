"""
End-to-end runs over a manifest: feature extraction, GMM fitting,
training of the three methods, prediction, evaluation, parameter tuning,
pairwise binary experiments and the covariance-metric comparison.
"""
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from itertools import combinations, repeat
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from dcar.config import ExperimentConfig, MAX_REDUCED_DIM, reduced_dim_grid
from dcar.models.audio import FrameMatrix, PcaProjection
from dcar.models.classifier import KernelParams, TrainedModel
from dcar.models.dataset import Manifest, ManifestEntry
from dcar.models.embedding import Embedding, OptimizerConfig, OptimizerTrace
from dcar.models.errors import ConfigError, DataError, DcarError
from dcar.models.graph import AffinityGraph
from dcar.models.mixture import LabeledComponent, TrackGMM
from dcar.services import classifier_service
from dcar.services.affinity_service import build_affinity
from dcar.services.evaluation_service import (
    agreement_by_event,
    cross_validate,
    evaluate_predictions,
    mcnemar,
    win_tie_loss,
)
from dcar.services.feature_service import apply_projection, extract_features, fit_projection, normalize_track, read_wav
from dcar.services.gmm_service import fit_track_gmm, fit_tracks, pool_components
from dcar.services.grassmann_service import learn_embedding, principal_angles, reduce_components
from dcar.services.spd_service import METRICS, pairwise_distances, purity_from_distances
from dcar.utils.formats import read_frames, read_gmms, read_predictions, write_frames, write_gmms

logger = logging.getLogger(__name__)

AUDIO_EXTENSIONS = ('.wav', '.wave')
WIN_TIE_LOSS_LEVELS = (0.05, 0.01)


@dataclass
class ExtractSummary:
    written: List[str] = field(default_factory=list)
    cached: List[str] = field(default_factory=list)
    failed: List[Tuple[str, str]] = field(default_factory=list)

    def __str__(self):
        return f"{len(self.written)} extracted, {len(self.cached)} cached, {len(self.failed)} failed"


@dataclass
class TrainResult:
    model: TrainedModel
    trace: Optional[OptimizerTrace] = None
    graph: Optional[AffinityGraph] = None


@contextmanager
def stage(name: str):
    """Log which stage a failure came from, then re-raise it unchanged."""
    try:
        yield
    except DcarError as e:
        logger.error(f"Stage '{name}' failed: {e}")
        raise


def is_audio(path: str) -> bool:
    return path.lower().endswith(AUDIO_EXTENSIONS)


def _extract_one(entry: ManifestEntry, out_path: str) -> Tuple[str, str, str]:
    try:
        features = extract_features(read_wav(entry.path, entry.track_id))
        write_frames(out_path, features)
        return entry.track_id, 'written', f"{features.frame_count} frames"
    except (DcarError, OSError, ValueError) as e:
        return entry.track_id, 'failed', str(e)


def _predict_one(model: TrainedModel, frames: FrameMatrix) -> Tuple[str, np.ndarray]:
    if model.method == 'mv':
        membership = classifier_service.predict_vector(model, classifier_service.mv_vector(frames))
        return classifier_service.vote(membership, model.events), membership.event_scores()
    gmm = fit_track_gmm(frames, model.n_components, model.gmm_seed, model.gmm_tolerance, model.gmm_max_iter)
    return classifier_service.classify_mixture(model, gmm)


class PipelineService:
    """Runs pipeline stages for one experiment configuration."""

    def __init__(self, config: ExperimentConfig = ExperimentConfig(), jobs: int = 1,
                 force: bool = False, progress: Optional[bool] = None):
        self.config = config
        self.jobs = max(1, jobs)
        self.force = force
        self.progress = progress

    @property
    def _quiet(self) -> bool:
        if self.progress is not None:
            return not self.progress
        return not logger.isEnabledFor(logging.INFO)

    def _map(self, fn, *iterables, total: int, desc: str) -> list:
        """Ordered map, on a process pool when jobs > 1."""
        if self.jobs <= 1 or total <= 1:
            return list(tqdm(map(fn, *iterables), total=total, desc=desc, disable=self._quiet))
        with ProcessPoolExecutor(max_workers=self.jobs) as executor:
            return list(tqdm(executor.map(fn, *iterables), total=total, desc=desc, disable=self._quiet))

    # features

    def feature_path(self, entry: ManifestEntry) -> str:
        return os.path.join(self.config.features_dir, f"{entry.track_id}.frames")

    def extract(self, manifest: Manifest) -> ExtractSummary:
        """
        Write a frames-v1 file for every audio track in the manifest

        Tracks already extracted are skipped unless ``force`` is set; tracks
        listed with a feature file instead of audio are left alone.

        Returns:
            ExtractSummary: written, cached and failed track ids
        """
        os.makedirs(self.config.features_dir, exist_ok=True)
        summary = ExtractSummary()
        todo = []
        for entry in manifest:
            if not is_audio(entry.path):
                summary.cached.append(entry.track_id)
            elif os.path.exists(self.feature_path(entry)) and not self.force:
                summary.cached.append(entry.track_id)
            else:
                todo.append(entry)
        results = self._map(_extract_one, todo, [self.feature_path(e) for e in todo],
                            total=len(todo), desc='Extracting features')
        for track_id, status, message in results:
            if status == 'written':
                summary.written.append(track_id)
            else:
                logger.error(f"Track {track_id}: {message}")
                summary.failed.append((track_id, message))
        logger.info(f"Feature extraction: {summary}")
        return summary

    def load_frames(self, entry: ManifestEntry) -> FrameMatrix:
        """Cached features first, then the manifest path if it is a frames-v1 file."""
        cached = self.feature_path(entry)
        if os.path.exists(cached):
            frames = read_frames(cached)
        elif not is_audio(entry.path):
            frames = read_frames(entry.path)
        else:
            raise DataError(f"Track {entry.track_id}: no features found; run 'extract' first")
        if frames.track_id != entry.track_id:
            raise DataError(f"Feature file for {entry.track_id} holds track {frames.track_id}")
        return frames

    def prepare(self, entries: Sequence[ManifestEntry], projection: Optional[PcaProjection] = None,
                normalize: Optional[bool] = None) -> List[FrameMatrix]:
        normalize = self.config.features_normalize if normalize is None else normalize
        tracks = []
        for entry in entries:
            frames = self.load_frames(entry)
            if normalize:
                frames = normalize_track(frames)
            if projection is not None:
                frames = apply_projection(projection, frames)
            tracks.append(frames)
        return tracks

    # phase 1

    def fit_gmms(self, tracks: Sequence[FrameMatrix], n_components: Optional[int] = None) -> List[TrackGMM]:
        c = self.config
        return fit_tracks(tracks, n_components or c.gmm_components, c.seed_gmm, c.gmm_tolerance,
                          c.gmm_max_iter, jobs=self.jobs, progress=not self._quiet)

    def fit(self, manifest: Manifest, out_path: str) -> List[Tuple[TrackGMM, str]]:
        """Fit one mixture per track and write them all to a gmm-v1 file."""
        entries = list(manifest)
        with stage('fit'):
            gmms = self.fit_gmms(self.prepare(entries))
        models = list(zip(gmms, [e.label for e in entries]))
        write_gmms(out_path, models)
        return models

    # phase 2 and classifier

    def optimizer_config(self, lam: Optional[float] = None) -> OptimizerConfig:
        c = self.config
        return OptimizerConfig(
            lam=lam or c.opt_lambda,
            max_iters=c.opt_max_iters,
            tolerance=c.opt_tolerance,
            init=c.opt_init,
            log_derivative=c.opt_log_derivative,
            seed=c.seed_init,
        )

    def kernel_params(self, reduced: Sequence, lam: float, alpha: float) -> KernelParams:
        sigma_mean, sigma_cov = classifier_service.median_bandwidths(reduced)
        return KernelParams(
            lam=lam,
            sigma_mean=self.config.krr_sigma_mean or sigma_mean,
            sigma_cov=self.config.krr_sigma_cov or sigma_cov,
            alpha=alpha,
        )

    def train_components(self, pooled: Sequence[LabeledComponent], events: Sequence[str], method: str,
                         r: Optional[int] = None, lam: Optional[float] = None, alpha: Optional[float] = None,
                         **metadata) -> TrainResult:
        """Affinity, embedding, reduction and KRR on already pooled components."""
        c = self.config
        lam = lam or c.opt_lambda
        alpha = alpha or c.krr_alpha
        if method == 'gmm':
            with stage('krr'):
                params = self.kernel_params(pooled, lam, alpha)
                return TrainResult(classifier_service.gmm_baseline(pooled, params, events, **metadata))

        r = r or c.opt_reduced_dim
        with stage('affinity'):
            graph = build_affinity(pooled, c.affinity_within, c.affinity_between, lam,
                                   c.affinity_bandwidth, c.affinity_exclude_same_track)
        with stage('embedding'):
            embedding, trace = learn_embedding(pooled, graph, r, self.optimizer_config(lam))
        with stage('krr'):
            reduced = reduce_components(embedding.matrix, pooled)
            params = self.kernel_params(reduced, lam, alpha)
            model = classifier_service.train(reduced, params, events, embedding, method='dcar', **metadata)
        return TrainResult(model, trace, graph)

    def train(self, manifest: Manifest, method: Optional[str] = None) -> TrainResult:
        """
        Train one method on the manifest's training split

        Args:
            manifest: tracks (already restricted to the wanted events)
            method: 'dcar', 'gmm' or 'mv' (defaults to the configured method)

        Returns:
            TrainResult: model, optimizer trace (dcar only) and affinity graph
        """
        c = self.config
        method = method or c.method
        entries = list(manifest.split('train'))
        if not entries:
            raise DataError("Manifest has no training tracks")
        labels = [e.label for e in entries]
        events = tuple(sorted(set(labels)))

        with stage('features'):
            projection = None
            if c.features_pca_dim:
                projection = fit_projection(self.prepare(entries), c.features_pca_dim)
            tracks = self.prepare(entries, projection)
        metadata = {'normalize': c.features_normalize, 'projection': projection}
        settings = {'n_components': c.gmm_components, 'gmm_seed': c.seed_gmm,
                    'gmm_tolerance': c.gmm_tolerance, 'gmm_max_iter': c.gmm_max_iter}

        if method == 'mv':
            with stage('krr'):
                vectors = np.stack([classifier_service.mv_vector(t) for t in tracks])
                model = classifier_service.train_vectors(vectors, labels, c.krr_alpha, c.krr_sigma_mean,
                                                         events, **metadata)
            logger.info(f"Trained mv model on {len(tracks)} tracks, {len(events)} events")
            return TrainResult(model)

        with stage('gmm'):
            gmms = self.fit_gmms(tracks)
            pooled = pool_components(list(zip(gmms, labels)))
        d = pooled[0].dim
        if method == 'dcar' and not 1 <= c.opt_reduced_dim < d:
            raise ConfigError(f"OPT_REDUCED_DIM={c.opt_reduced_dim} must be in [1, {d - 1}] for d={d}")
        result = self.train_components(pooled, events, method, **settings, **metadata)
        logger.info(f"Trained {method} model on {len(pooled)} components from {len(tracks)} tracks")
        return result

    # prediction and evaluation

    def predict(self, model: TrainedModel, manifest: Manifest,
                split: Optional[str] = 'test') -> List[Tuple[str, str, str, np.ndarray]]:
        """
        Classify tracks with a trained model

        Returns:
            list: (track_id, true_label, predicted_label, per-event scores) in manifest order
        """
        entries = list(manifest.split(split) if split else manifest)
        if not entries:
            logger.warning("No tracks to predict")
            return []
        with stage('features'):
            tracks = self.prepare(entries, model.projection, model.normalize)
        for track in tracks:
            if track.dim != model.input_dim:
                raise DataError(f"Track {track.track_id} has d={track.dim}, model expects d={model.input_dim}")
        with stage('predict'):
            results = self._map(_predict_one, repeat(model, len(tracks)), tracks,
                                total=len(tracks), desc='Predicting')
        return [(e.track_id, e.label, label, scores) for e, (label, scores) in zip(entries, results)]

    @staticmethod
    def _check_aligned(paths: Sequence[str], frames: Sequence[pd.DataFrame]) -> None:
        for (i, a), (j, b) in combinations(enumerate(frames), 2):
            if list(a['track_id']) != list(b['track_id']):
                raise DataError(f"Track ids of {paths[i]} and {paths[j]} do not match")
            if list(a['truth']) != list(b['truth']):
                raise DataError(f"Ground truth of {paths[i]} and {paths[j]} differs")

    @staticmethod
    def evaluate_files(paths: Sequence[str]) -> Tuple[pd.DataFrame, pd.DataFrame]:
        """
        Metric table per prediction file and McNemar tests between every pair of files

        Returns:
            tuple: (metrics table, comparison table)
        """
        frames = [read_predictions(p) for p in paths]
        PipelineService._check_aligned(paths, frames)
        rows = []
        for path, frame in zip(paths, frames):
            events = frame.attrs['events']
            report = evaluate_predictions(list(frame['predicted']), list(frame['truth']), events)
            rows.append({'file': os.path.basename(path), 'tracks': len(frame), **report.summary()})
        comparisons = []
        for (i, a), (j, b) in combinations(enumerate(frames), 2):
            p_value = mcnemar(list(a['predicted']), list(b['predicted']), list(a['truth']))
            comparisons.append({'a': os.path.basename(paths[i]), 'b': os.path.basename(paths[j]),
                                'p_value': p_value})
        return pd.DataFrame(rows), pd.DataFrame(comparisons, columns=['a', 'b', 'p_value'])

    @staticmethod
    def agreement_files(paths: Sequence[str]) -> pd.DataFrame:
        """Per-event share of test tracks that 0..M of the prediction files classify correctly."""
        frames = [read_predictions(p) for p in paths]
        PipelineService._check_aligned(paths, frames)
        truth = list(frames[0]['truth'])
        return agreement_by_event([list(f['predicted']) for f in frames], truth, frames[0].attrs['events'])

    # tuning

    def tune_grid(self, n_events: int, d: int, method: Optional[str] = None) -> Dict[str, list]:
        c = self.config
        method = method or c.method
        if method == 'mv':
            return {'alpha': list(c.cv_alphas)}
        grid = {'n_components': list(c.cv_components), 'lam': list(c.cv_lambdas), 'alpha': list(c.cv_alphas)}
        if method == 'dcar':
            dims = c.cv_reduced_dims or reduced_dim_grid(n_events, min(MAX_REDUCED_DIM, d - 1))
            dims = [r for r in dims if 1 <= r < d]
            if not dims:
                raise DataError(f"No reduced dimension candidates below d={d}")
            grid['reduced_dim'] = dims
        return grid

    def fold_tracks(self, tracks: Sequence[FrameMatrix], train_idx: Sequence[int],
                    cache: Dict[tuple, List[FrameMatrix]]) -> List[FrameMatrix]:
        """Tracks as ``train`` would see them with only ``train_idx`` available: PCA is refitted per fold."""
        pca_dim = self.config.features_pca_dim
        if not pca_dim:
            return list(tracks)
        key = tuple(train_idx)
        if key not in cache:
            projection = fit_projection([tracks[i] for i in train_idx], pca_dim)
            cache[key] = [apply_projection(projection, t) for t in tracks]
        return cache[key]

    def tune(self, manifest: Manifest, method: Optional[str] = None) -> Tuple[Dict, pd.DataFrame]:
        """
        Cross-validated parameter selection on the training split

        Mixtures are fitted once per track and P (once per fold when a PCA
        pre-reduction is configured); embeddings are cached per fold, P, r
        and lambda since alpha does not affect them.
        """
        c = self.config
        method = method or c.method
        entries = list(manifest.split('train'))
        if not entries:
            raise DataError("Manifest has no training tracks")
        labels = [e.label for e in entries]
        events = tuple(sorted(set(labels)))
        tracks = self.prepare(entries)
        d = tracks[0].dim
        if c.features_pca_dim:
            if not 1 <= c.features_pca_dim <= d:
                raise DataError(f"FEATURES_PCA_DIM={c.features_pca_dim} must be in [1, {d}]")
            d = c.features_pca_dim
        grid = self.tune_grid(len(events), d, method)
        projected: Dict[tuple, List[FrameMatrix]] = {}

        def fold_key(train_idx) -> Optional[tuple]:
            return tuple(train_idx) if c.features_pca_dim else None

        if method == 'mv':
            vector_cache: Dict[Optional[tuple], np.ndarray] = {}

            def evaluate(params, train_idx, test_idx):
                key = fold_key(train_idx)
                if key not in vector_cache:
                    vector_cache[key] = np.stack([classifier_service.mv_vector(t)
                                                  for t in self.fold_tracks(tracks, train_idx, projected)])
                vectors = vector_cache[key]
                model = classifier_service.train_vectors(vectors[train_idx], [labels[i] for i in train_idx],
                                                         params['alpha'], c.krr_sigma_mean, events)
                predicted = [classifier_service.vote(classifier_service.predict_vector(model, vectors[i]), events)
                             for i in test_idx]
                return np.mean([p == labels[i] for p, i in zip(predicted, test_idx)])

            return cross_validate(labels, grid, evaluate, c.cv_folds, c.seed_cv, not self._quiet)

        gmm_cache: Dict[tuple, List[TrackGMM]] = {}
        embedding_cache: Dict[tuple, Embedding] = {}

        def evaluate(params, train_idx, test_idx):
            n_components = params['n_components']
            gmm_key = (fold_key(train_idx), n_components)
            if gmm_key not in gmm_cache:
                gmm_cache[gmm_key] = self.fit_gmms(self.fold_tracks(tracks, train_idx, projected), n_components)
            gmms = gmm_cache[gmm_key]
            pooled = pool_components([(gmms[i], labels[i]) for i in train_idx])
            lam, alpha = params['lam'], params['alpha']
            if method == 'dcar':
                key = (tuple(train_idx), n_components, params['reduced_dim'], lam)
                if key not in embedding_cache:
                    graph = build_affinity(pooled, c.affinity_within, c.affinity_between, lam,
                                           c.affinity_bandwidth, c.affinity_exclude_same_track)
                    embedding_cache[key], _ = learn_embedding(pooled, graph, params['reduced_dim'],
                                                              self.optimizer_config(lam))
                embedding = embedding_cache[key]
                reduced = reduce_components(embedding.matrix, pooled)
                model = classifier_service.train(reduced, self.kernel_params(reduced, lam, alpha), events, embedding)
            else:
                model = classifier_service.gmm_baseline(pooled, self.kernel_params(pooled, lam, alpha), events)
            predicted = [classifier_service.classify_mixture(model, gmms[i])[0] for i in test_idx]
            return np.mean([p == labels[i] for p, i in zip(predicted, test_idx)])

        return cross_validate(labels, grid, evaluate, c.cv_folds, c.seed_cv, not self._quiet)

    # pairwise binary experiments

    def binary_experiments(self, manifest: Manifest, methods: Tuple[str, str] = ('dcar', 'gmm'),
                           levels: Sequence[float] = WIN_TIE_LOSS_LEVELS) -> Tuple[pd.DataFrame, pd.DataFrame]:
        """
        One-vs-one detection for every pair of events

        Both methods are trained and tested on the tracks of each pair; each
        pair gets a McNemar p-value and the pairs are summarized as
        win-tie-loss of the first method over the second.

        Returns:
            tuple: (per-pair table, win-tie-loss table per significance level)
        """
        method_a, method_b = methods
        rows, pair_results = [], []
        for event_a, event_b in combinations(manifest.events, 2):
            subset = manifest.restrict([event_a, event_b])
            predictions = {}
            for method in methods:
                model = self.train(subset, method).model
                predictions[method] = self.predict(model, subset)
            truth = [row[1] for row in predictions[method_a]]
            pred_a = [row[2] for row in predictions[method_a]]
            pred_b = [row[2] for row in predictions[method_b]]
            if not truth:
                logger.warning(f"Pair {event_a}/{event_b} has no test tracks; skipped")
                continue
            pair_results.append((pred_a, pred_b, truth))
            rows.append({
                'event_a': event_a,
                'event_b': event_b,
                f'accuracy_{method_a}': float(np.mean(np.array(pred_a) == np.array(truth))),
                f'accuracy_{method_b}': float(np.mean(np.array(pred_b) == np.array(truth))),
                'p_value': mcnemar(pred_a, pred_b, truth),
            })
        summary = pd.DataFrame(
            [dict(zip(('level', 'wins', 'ties', 'losses'), (level, *win_tie_loss(pair_results, level))))
             for level in levels]
        )
        return pd.DataFrame(rows), summary

    @staticmethod
    def subspace_report(model: TrainedModel, reference: Embedding) -> pd.DataFrame:
        """
        Principal angles between a model's embedding and a reference subspace

        A PCA pre-reduction is folded into W first, so the comparison happens
        in the original feature space (e.g. against the planted subspace
        written next to a synthetic dataset).
        """
        if model.method == 'mv':
            raise DataError("mv models have no embedding")
        w = model.embedding.matrix
        if model.projection is not None:
            w = model.projection.basis @ w
        angles = principal_angles(w, reference)
        return pd.DataFrame({'index': np.arange(1, angles.size + 1), 'radians': angles,
                             'degrees': np.degrees(angles)})

    # covariance metrics

    @staticmethod
    def metric_compare(gmm_paths: Sequence[str], k_values: Sequence[int]) -> pd.DataFrame:
        """PC(k) of every covariance metric over the components in gmm-v1 files."""
        models = [m for path in gmm_paths for m in read_gmms(path)]
        components = pool_components(models)
        labels = [c.label for c in components]
        n = len(components)
        if len(set(labels)) < 2:
            raise DataError("Metric comparison needs components of at least two events")
        bad = [k for k in k_values if not 1 <= k < n]
        if bad:
            raise DataError(f"k must satisfy 1 <= k < N={n}, got {bad}")
        rows = []
        for metric in METRICS:
            distances = pairwise_distances([c.covariance for c in components], metric)
            for k in k_values:
                rows.append({'metric': metric, 'k': k, 'pc': purity_from_distances(distances, labels, k)})
        return pd.DataFrame(rows, columns=['metric', 'k', 'pc'])
