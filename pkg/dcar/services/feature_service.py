"""
Frame-level acoustic features: 100 ms Hamming frames every 10 ms,
20 MFCCs, first- and second-order regression deltas (60 dimensions),
with optional per-track normalization and PCA pre-reduction.
"""
import logging
import os
from typing import Optional, Sequence

import numpy as np
from scipy.fft import dct
from scipy.io import wavfile
from sklearn.decomposition import PCA

from dcar.models.audio import AudioTrack, FrameMatrix, PcaProjection
from dcar.models.errors import DataError

logger = logging.getLogger(__name__)

WINDOW_SECONDS = 0.1
HOP_SECONDS = 0.01
MFCC_COUNT = 20
MEL_FILTERS = 40
DELTA_HALF_WINDOW = 2
LOG_FLOOR = 1e-10


def read_wav(path: str, track_id: Optional[str] = None) -> AudioTrack:
    """
    Read a PCM WAV file into an AudioTrack

    Integer samples (8/16/32 bit) are scaled to [-1, 1]; float samples are
    taken as-is. Multi-channel audio is downmixed by averaging. No resampling.

    Args:
        path (str): Path to the WAV file
        track_id (str, optional): Identifier; defaults to the file stem

    Returns:
        AudioTrack: the decoded track
    """
    if track_id is None:
        track_id = os.path.splitext(os.path.basename(path))[0]
    try:
        rate, data = wavfile.read(path)
    except (ValueError, OSError) as e:
        raise DataError(f"Cannot read WAV file {path}: {e}") from e

    if data.dtype == np.uint8:
        samples = (data.astype(float) - 128.0) / 128.0
    elif data.dtype == np.int16:
        samples = data.astype(float) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(float) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(float)
    else:
        raise DataError(f"Unsupported WAV sample format {data.dtype} in {path}")

    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return AudioTrack(samples=samples, sample_rate=rate, track_id=track_id)


def frame_geometry(sample_rate: int):
    """Window and hop length in samples for a given rate."""
    return int(round(WINDOW_SECONDS * sample_rate)), int(round(HOP_SECONDS * sample_rate))


def frame_signal(track: AudioTrack) -> np.ndarray:
    """
    Cut a track into Hamming-weighted frames

    Returns:
        np.ndarray: (m, window) array, m = floor((n - window) / hop) + 1
    """
    window, hop = frame_geometry(track.sample_rate)
    if track.samples.size < window:
        raise DataError(
            f"Track {track.track_id} is shorter than one {WINDOW_SECONDS * 1000:.0f} ms window "
            f"({track.samples.size} < {window} samples)"
        )
    frames = np.lib.stride_tricks.sliding_window_view(track.samples, window)[::hop]
    return frames * np.hamming(window)


def mel_filterbank(sample_rate: int, n_fft: int, n_filters: int = MEL_FILTERS) -> np.ndarray:
    """Triangular filters evenly spaced in mel between 0 Hz and Nyquist, shape (n_filters, n_fft//2 + 1)."""
    high_mel = 2595.0 * np.log10(1.0 + (sample_rate / 2.0) / 700.0)
    edges_hz = 700.0 * (10.0 ** (np.linspace(0.0, high_mel, n_filters + 2) / 2595.0) - 1.0)
    bin_hz = np.linspace(0.0, sample_rate / 2.0, n_fft // 2 + 1)

    left, center, right = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    rising = (bin_hz - left) / (center - left)
    falling = (right - bin_hz) / (right - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def mfcc(frames: np.ndarray, sample_rate: int, coeff_count: int = MFCC_COUNT) -> np.ndarray:
    """
    Mel-frequency cepstral coefficients of windowed frames

    Args:
        frames: (m, window) windowed frames
        sample_rate: sampling rate in Hz
        coeff_count: number of coefficients kept (c0 included)

    Returns:
        np.ndarray: coeff_count x m matrix
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=float))
    if frames.shape[0] == 0:
        raise DataError("mfcc needs at least one frame")
    window = frames.shape[1]
    n_fft = 1 << max(0, int(np.ceil(np.log2(window))))

    power = np.abs(np.fft.rfft(frames, n_fft, axis=1)) ** 2 / n_fft
    energies = power @ mel_filterbank(sample_rate, n_fft).T
    log_energies = np.log(np.maximum(energies, LOG_FLOOR))
    cepstra = dct(log_energies, type=2, axis=1, norm='ortho')[:, :coeff_count]
    return cepstra.T


def _deltas(features: np.ndarray, half_window: int) -> np.ndarray:
    padded = np.pad(features, ((0, 0), (half_window, half_window)), mode='edge')
    m = features.shape[1]
    norm = 2.0 * sum(n * n for n in range(1, half_window + 1))
    out = np.zeros_like(features)
    for n in range(1, half_window + 1):
        out += n * (padded[:, half_window + n:half_window + n + m] - padded[:, half_window - n:half_window - n + m])
    return out / norm


def append_deltas(base: np.ndarray, track_id: str = '', half_window: int = DELTA_HALF_WINDOW) -> FrameMatrix:
    """Stack base, its regression deltas and the deltas of the deltas (edge frames replicated)."""
    base = np.asarray(base, dtype=float)
    first = _deltas(base, half_window)
    second = _deltas(first, half_window)
    return FrameMatrix(np.vstack([base, first, second]), track_id)


def normalize_track(frames: FrameMatrix) -> FrameMatrix:
    """Zero mean, unit variance per feature dimension (constant rows become zero)."""
    x = frames.columns
    std = x.std(axis=1, keepdims=True)
    std[std == 0] = 1.0
    return FrameMatrix((x - x.mean(axis=1, keepdims=True)) / std, frames.track_id)


def extract_features(track: AudioTrack, normalize: bool = False) -> FrameMatrix:
    """Full front end: frame, MFCC, deltas."""
    frames = frame_signal(track)
    features = append_deltas(mfcc(frames, track.sample_rate), track.track_id)
    return normalize_track(features) if normalize else features


def pca_reduce(all_training_frames: np.ndarray, r: int):
    """
    Fit a frame-level PCA projection on pooled training frames

    Args:
        all_training_frames: d x M matrix of frames (columns)
        r: target dimensionality, 1 <= r <= d

    Returns:
        tuple: (PcaProjection, r x M projected frames)
    """
    x = np.asarray(all_training_frames, dtype=float)
    d, count = x.shape
    if not 1 <= r <= d:
        raise DataError(f"PCA target dimension must be in [1, {d}], got {r}")
    if count <= d:
        raise DataError(f"PCA needs more frames than dimensions ({count} <= {d})")
    if not np.any(x.var(axis=1) > 0):
        raise DataError("PCA input has zero variance")

    pca = PCA(n_components=r, svd_solver='full').fit(x.T)
    projection = PcaProjection(mean=pca.mean_, basis=pca.components_.T)
    return projection, project_frames(projection, x)


def project_frames(projection: PcaProjection, columns: np.ndarray) -> np.ndarray:
    columns = np.asarray(columns, dtype=float)
    if columns.shape[0] != projection.input_dim:
        raise DataError(f"Frames have dim {columns.shape[0]}, projection expects {projection.input_dim}")
    return projection.basis.T @ (columns - projection.mean[:, None])


def apply_projection(projection: PcaProjection, frames: FrameMatrix) -> FrameMatrix:
    return FrameMatrix(project_frames(projection, frames.columns), frames.track_id)


def fit_projection(tracks: Sequence[FrameMatrix], r: int) -> PcaProjection:
    """PCA pre-reduction fitted on the frames of all given tracks."""
    projection, _ = pca_reduce(np.hstack([t.columns for t in tracks]), r)
    logger.info(f"Fitted frame-level PCA {projection.input_dim} -> {projection.output_dim}")
    return projection
