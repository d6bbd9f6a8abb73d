"""
Versioned text formats: frames-v1, gmm-v1, emb-v1, model-v1, pred-v1,
plus the CSV manifest, optimizer trace and affinity dump.

Every real number is written with 17 significant digits so that
write -> read -> write is byte-identical.
"""
import logging
import os
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from dcar.models.audio import FrameMatrix, PcaProjection
from dcar.models.classifier import KernelParams, TrainedModel
from dcar.models.dataset import Manifest, ManifestEntry
from dcar.models.embedding import Embedding, OptimizerTrace
from dcar.models.errors import DataError
from dcar.models.graph import AffinityGraph
from dcar.models.mixture import GaussianComponent, LabeledComponent, TrackGMM

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'
MANIFEST_COLUMNS = ['track_id', 'path', 'label', 'split']


def fmt(value: float) -> str:
    return FLOAT_FORMAT % value


def _row(values) -> str:
    return ' '.join(fmt(v) for v in np.ravel(values))


def _token(value: str, what: str) -> str:
    value = str(value)
    if not value or any(ch.isspace() for ch in value):
        raise DataError(f"{what} {value!r} must be non-empty and contain no whitespace")
    return value


class _Lines:
    """Line cursor with positional error messages."""

    def __init__(self, path: str):
        self.path = path
        try:
            with open(path) as f:
                self.lines = [line.rstrip('\n') for line in f]
        except UnicodeDecodeError as e:
            raise DataError(f"{path}: not a text file") from e
        self.pos = 0

    def done(self) -> bool:
        while self.pos < len(self.lines) and not self.lines[self.pos].strip():
            self.pos += 1
        return self.pos >= len(self.lines)

    def next(self) -> List[str]:
        if self.done():
            raise DataError(f"{self.path}: unexpected end of file")
        self.pos += 1
        return self.lines[self.pos - 1].split()

    def header(self, tag: str, count: int) -> List[str]:
        parts = self.next()
        if not parts or parts[0] != tag or len(parts) != count + 1:
            raise DataError(f"{self.path}:{self.pos}: expected '{tag}' header with {count} fields")
        return parts[1:]

    def floats(self, count: int) -> np.ndarray:
        parts = self.next()
        if len(parts) != count:
            raise DataError(f"{self.path}:{self.pos}: expected {count} values, found {len(parts)}")
        try:
            return np.array([float(p) for p in parts])
        except ValueError as e:
            raise DataError(f"{self.path}:{self.pos}: {e}") from e

    def matrix(self, rows: int, cols: int) -> np.ndarray:
        if rows == 0:
            return np.zeros((0, cols))
        return np.vstack([self.floats(cols) for _ in range(rows)])

    def number(self, part: str) -> float:
        try:
            return float(part)
        except ValueError as e:
            raise DataError(f"{self.path}:{self.pos}: {e}") from e

    def ints(self, parts: Sequence[str]) -> List[int]:
        try:
            return [int(p) for p in parts]
        except ValueError as e:
            raise DataError(f"{self.path}:{self.pos}: {e}") from e


# frames-v1

def write_frames(path: str, frames: FrameMatrix) -> None:
    with open(path, 'w') as f:
        f.write(f"frames-v1 {_token(frames.track_id, 'track_id')} {frames.dim} {frames.frame_count}\n")
        for column in frames.columns.T:
            f.write(_row(column) + '\n')


def read_frames(path: str) -> FrameMatrix:
    lines = _Lines(path)
    track_id, *sizes = lines.header('frames-v1', 3)
    d, m = lines.ints(sizes)
    return FrameMatrix(lines.matrix(m, d).T, track_id)


# gmm-v1

def _write_components(f, components: Iterable[GaussianComponent]) -> None:
    for c in components:
        f.write(fmt(c.weight) + '\n')
        f.write(_row(c.mean) + '\n')
        for row in c.covariance.entries:
            f.write(_row(row) + '\n')


def _read_component(lines: _Lines, d: int) -> GaussianComponent:
    weight = lines.floats(1)[0]
    mean = lines.floats(d)
    return GaussianComponent(weight, mean, lines.matrix(d, d))


def write_gmms(path: str, models: Sequence[Tuple[TrackGMM, str]]) -> None:
    """One or more labeled track mixtures in a single file."""
    with open(path, 'w') as f:
        for gmm, label in models:
            f.write(f"gmm-v1 {_token(gmm.track_id, 'track_id')} {_token(label, 'label')} {gmm.dim} {len(gmm)}\n")
            _write_components(f, gmm.components)


def read_gmms(path: str) -> List[Tuple[TrackGMM, str]]:
    lines = _Lines(path)
    models = []
    while not lines.done():
        track_id, label, *sizes = lines.header('gmm-v1', 4)
        d, count = lines.ints(sizes)
        components = [_read_component(lines, d) for _ in range(count)]
        models.append((TrackGMM(track_id, components), label))
    if not models:
        raise DataError(f"{path}: no mixtures found")
    return models


# emb-v1

def _write_embedding(f, embedding: Embedding) -> None:
    f.write(f"emb-v1 {embedding.d} {embedding.r}\n")
    for row in embedding.matrix:
        f.write(_row(row) + '\n')


def _read_embedding(lines: _Lines) -> Embedding:
    d, r = lines.ints(lines.header('emb-v1', 2))
    return Embedding(lines.matrix(d, r))


def write_embedding(path: str, embedding: Embedding) -> None:
    with open(path, 'w') as f:
        _write_embedding(f, embedding)


def read_embedding(path: str) -> Embedding:
    return _read_embedding(_Lines(path))


# model-v1

def write_model(path: str, model: TrainedModel, config: Optional[Dict[str, str]] = None) -> None:
    """
    Serialize a trained model

    Args:
        path: output file
        model: the trained model
        config: optional config-file mapping stored alongside for provenance
    """
    p = model.params
    with open(path, 'w') as f:
        f.write(f"model-v1 {model.method}\n")
        f.write(f"events {len(model.events)} {' '.join(_token(e, 'event') for e in model.events)}\n")
        f.write(f"params {_row([p.lam, p.sigma_mean, p.sigma_cov, p.alpha])}\n")
        f.write(f"gmm {model.n_components} {model.gmm_seed} {int(model.normalize)} "
                f"{fmt(model.gmm_tolerance)} {model.gmm_max_iter}\n")
        if model.projection is None:
            f.write("pca 0 0\n")
        else:
            projection = model.projection
            f.write(f"pca {projection.input_dim} {projection.output_dim}\n")
            f.write(_row(projection.mean) + '\n')
            for row in projection.basis:
                f.write(_row(row) + '\n')
        if model.method == 'mv':
            f.write(f"vectors {len(model.vectors)} {model.vectors.shape[1]}\n")
            for label, vector in zip(model.labels, model.vectors):
                f.write(f"{_token(label, 'label')} {_row(vector)}\n")
        else:
            _write_embedding(f, model.embedding)
            f.write(f"components {len(model.components)} {model.embedding.r}\n")
            for c in model.components:
                f.write(f"{_token(c.label, 'label')} {_token(c.track_id, 'track_id')}\n")
                _write_components(f, [c.component])
        f.write(f"coefficients {model.coefficients.shape[0]} {model.coefficients.shape[1]}\n")
        for row in model.coefficients:
            f.write(_row(row) + '\n')
        config = config or {}
        f.write(f"config {len(config)}\n")
        for key, value in config.items():
            f.write(f"{key}={value}\n")


def read_model(path: str) -> Tuple[TrainedModel, Dict[str, str]]:
    """Inverse of :func:`write_model`; returns the model and its stored config."""
    lines = _Lines(path)
    (method,) = lines.header('model-v1', 1)
    parts = lines.next()
    if not parts or parts[0] != 'events':
        raise DataError(f"{path}:{lines.pos}: expected 'events'")
    events = tuple(parts[2:])
    if len(events) != lines.ints(parts[1:2])[0]:
        raise DataError(f"{path}:{lines.pos}: event count mismatch")
    lam, sigma_mean, sigma_cov, alpha = (float(v) for v in lines.header('params', 4))
    *settings, gmm_tolerance, gmm_max_iter = lines.header('gmm', 5)
    n_components, gmm_seed, normalize, gmm_max_iter = lines.ints(settings + [gmm_max_iter])
    gmm_tolerance = lines.number(gmm_tolerance)
    pca_in, pca_out = lines.ints(lines.header('pca', 2))
    projection = None
    if pca_in:
        mean = lines.floats(pca_in)
        projection = PcaProjection(mean, lines.matrix(pca_in, pca_out))

    embedding, components, vectors, labels = None, [], None, []
    if method == 'mv':
        count, dim = lines.ints(lines.header('vectors', 2))
        rows = []
        for _ in range(count):
            parts = lines.next()
            if len(parts) != dim + 1:
                raise DataError(f"{path}:{lines.pos}: expected label and {dim} values")
            labels.append(parts[0])
            rows.append([float(v) for v in parts[1:]])
        vectors = np.array(rows, dtype=float).reshape(count, dim)
    else:
        embedding = _read_embedding(lines)
        count, r = lines.ints(lines.header('components', 2))
        for _ in range(count):
            parts = lines.next()
            if len(parts) != 2:
                raise DataError(f"{path}:{lines.pos}: expected label and track_id")
            components.append(LabeledComponent(_read_component(lines, r), parts[0], parts[1]))
            labels.append(parts[0])

    n, width = lines.ints(lines.header('coefficients', 2))
    coefficients = lines.matrix(n, width)
    (count,) = lines.ints(lines.header('config', 1))
    config = {}
    for _ in range(count):
        key, _, value = ' '.join(lines.next()).partition('=')
        config[key] = value
    model = TrainedModel(
        method=method,
        events=events,
        params=KernelParams(lam, sigma_mean, sigma_cov, alpha),
        coefficients=coefficients,
        labels=tuple(labels),
        embedding=embedding,
        components=tuple(components),
        vectors=vectors,
        n_components=n_components,
        gmm_seed=gmm_seed,
        gmm_tolerance=gmm_tolerance,
        gmm_max_iter=gmm_max_iter,
        normalize=bool(normalize),
        projection=projection,
    )
    return model, config


# pred-v1

def write_predictions(path: str, events: Sequence[str], rows: Sequence[Tuple[str, str, str, Sequence[float]]]) -> None:
    """Rows are (track_id, true_label, predicted_label, scores)."""
    with open(path, 'w') as f:
        f.write(f"pred-v1 {len(events)} {' '.join(_token(e, 'event') for e in events)}\n")
        for track_id, truth, predicted, scores in rows:
            f.write(f"{_token(track_id, 'track_id')} {truth} {predicted} {_row(scores)}\n")


def read_predictions(path: str) -> pd.DataFrame:
    """Columns track_id, truth, predicted plus one score column per event."""
    lines = _Lines(path)
    parts = lines.next()
    if not parts or parts[0] != 'pred-v1':
        raise DataError(f"{path}: not a pred-v1 file")
    events = parts[2:]
    if len(events) != lines.ints(parts[1:2])[0]:
        raise DataError(f"{path}:1: event count mismatch")
    records = []
    while not lines.done():
        parts = lines.next()
        if len(parts) != 3 + len(events):
            raise DataError(f"{path}:{lines.pos}: expected {3 + len(events)} fields")
        records.append(parts[:3] + [float(v) for v in parts[3:]])
    frame = pd.DataFrame(records, columns=['track_id', 'truth', 'predicted'] + list(events))
    frame.attrs['events'] = tuple(events)
    return frame


# CSV artifacts

def read_manifest(path: str) -> Manifest:
    """CSV with header track_id,path,label,split; relative paths resolve against the manifest."""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as e:
        raise DataError(f"{path}: {e}") from e
    missing = [c for c in MANIFEST_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"{path}: manifest is missing column(s) {', '.join(missing)}")
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    for record in frame[MANIFEST_COLUMNS].itertuples(index=False):
        track_path = record.path if os.path.isabs(record.path) else os.path.join(base, record.path)
        entries.append(ManifestEntry(record.track_id.strip(), track_path, record.label.strip(), record.split.strip()))
    return Manifest(tuple(entries))


def write_manifest(path: str, manifest: Manifest, relative_to: Optional[str] = None) -> None:
    base = relative_to or os.path.dirname(os.path.abspath(path))
    records = [
        {
            'track_id': e.track_id,
            'path': os.path.relpath(os.path.abspath(e.path), base),
            'label': e.label,
            'split': e.split,
        }
        for e in manifest
    ]
    pd.DataFrame(records, columns=MANIFEST_COLUMNS).to_csv(path, index=False)


def write_trace(path: str, trace: OptimizerTrace) -> None:
    trace.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_table(path: str, frame: pd.DataFrame) -> None:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_affinity(path: str, graph: AffinityGraph) -> None:
    """Dense dump of A for inspection."""
    np.savetxt(path, graph.matrix, fmt='%.17g')
