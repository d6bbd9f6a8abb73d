"""
Synthetic datasets whose discriminative structure lives in a planted
low-dimensional subspace.

Every event owns a few Gaussian clusters. Inside the planted subspace the
clusters of different events have separated means and event-specific
covariance scalings; the orthogonal complement carries noise shared by all
events plus a random per-track offset that has nothing to do with the label.
"""
import logging
import os
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from dcar.models.audio import FrameMatrix
from dcar.models.dataset import Manifest, ManifestEntry, SyntheticSpec
from dcar.models.embedding import Embedding
from dcar.utils.formats import write_embedding, write_frames, write_manifest

logger = logging.getLogger(__name__)

# Scales relative to the noise level
CLUSTER_SPREAD = 0.5
NUISANCE_FRAME_SCALE = 1.5
NUISANCE_TRACK_SCALE = 2.0
# Log-scale of the covariance scaling per unit of separation
COVARIANCE_LOG_SCALE = np.log(2.0) / 5.0


@dataclass(frozen=True, eq=False)
class SyntheticTrack:
    frames: FrameMatrix
    label: str
    split: str


def event_name(index: int) -> str:
    return f"event{index + 1}"


def _event_centres(rng, n_events: int, planted_dim: int) -> np.ndarray:
    """Unit-norm centre directions, mutually orthogonal when L <= k."""
    if n_events <= planted_dim:
        q, _ = np.linalg.qr(rng.standard_normal((planted_dim, n_events)))
        return q.T
    z = rng.standard_normal((n_events, planted_dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def generate(spec: SyntheticSpec) -> Tuple[List[SyntheticTrack], Embedding]:
    """
    Sample a dataset in memory

    Args:
        spec: dataset settings

    Returns:
        tuple: (tracks in event/split/index order, planted subspace as d x k Embedding)
    """
    rng = np.random.default_rng(spec.seed)
    d, k = spec.dim, spec.planted_dim
    basis, _ = np.linalg.qr(rng.standard_normal((d, d)))
    planted, nuisance = basis[:, :k], basis[:, k:]

    centres = spec.separation * spec.noise * _event_centres(rng, spec.n_events, k)
    cluster_means = centres[:, None, :] + CLUSTER_SPREAD * spec.noise * rng.standard_normal(
        (spec.n_events, spec.clusters, k))
    scalings = np.exp(spec.separation * COVARIANCE_LOG_SCALE * rng.uniform(-1.0, 1.0, (spec.n_events, k)))

    tracks = []
    for e in range(spec.n_events):
        label = event_name(e)
        std = spec.noise * np.sqrt(scalings[e])
        for split, count in (('train', spec.train_tracks), ('test', spec.test_tracks)):
            for i in range(count):
                cluster = rng.integers(spec.clusters, size=spec.frames)
                inside = cluster_means[e, cluster] + std * rng.standard_normal((spec.frames, k))
                offset = NUISANCE_TRACK_SCALE * spec.noise * rng.standard_normal(d - k)
                outside = offset + NUISANCE_FRAME_SCALE * spec.noise * rng.standard_normal((spec.frames, d - k))
                columns = planted @ inside.T + nuisance @ outside.T
                track_id = f"{label}_{split}_{i:03d}"
                tracks.append(SyntheticTrack(FrameMatrix(columns, track_id), label, split))
    return tracks, Embedding(planted)


def write_dataset(spec: SyntheticSpec, out_dir: str) -> Manifest:
    """
    Generate a dataset and write it to ``out_dir``

    Writes ``features/<track_id>.frames`` (frames-v1), ``manifest.csv`` and the
    ground-truth subspace ``subspace.emb`` (emb-v1).
    """
    tracks, subspace = generate(spec)
    out_dir = os.path.abspath(out_dir)
    features_dir = os.path.join(out_dir, 'features')
    os.makedirs(features_dir, exist_ok=True)
    entries = []
    for track in tracks:
        path = os.path.join(features_dir, f"{track.frames.track_id}.frames")
        write_frames(path, track.frames)
        entries.append(ManifestEntry(track.frames.track_id, path, track.label, track.split))
    manifest = Manifest(tuple(entries))
    write_manifest(os.path.join(out_dir, 'manifest.csv'), manifest)
    write_embedding(os.path.join(out_dir, 'subspace.emb'), subspace)
    logger.info(f"Wrote {len(tracks)} synthetic tracks ({spec.n_events} events, d={spec.dim}, "
                f"planted dim {spec.planted_dim}) to {out_dir}")
    return manifest
