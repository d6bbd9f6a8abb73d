import numpy as np
import pytest
from scipy.io import wavfile

from dcar.models.audio import AudioTrack, FrameMatrix, STANDARD_DIM
from dcar.models.errors import DataError
from dcar.services.feature_service import (
    append_deltas,
    apply_projection,
    extract_features,
    frame_signal,
    mel_filterbank,
    mfcc,
    normalize_track,
    pca_reduce,
    read_wav,
)


def _tone(seconds=1.0, rate=16000, freq=440.0):
    t = np.arange(int(seconds * rate)) / rate
    return AudioTrack(0.5 * np.sin(2 * np.pi * freq * t), rate, 'tone')


def test_one_second_at_16k_gives_91_frames():
    frames = frame_signal(_tone())
    assert frames.shape == (91, 1600)


def test_track_shorter_than_a_window_is_rejected():
    with pytest.raises(DataError):
        frame_signal(AudioTrack(np.zeros(1000), 16000, 'short'))


def test_extract_features_has_standard_dimension():
    features = extract_features(_tone())
    assert features.dim == STANDARD_DIM
    assert features.frame_count == 91
    assert np.all(np.isfinite(features.columns))


def test_silence_gives_finite_features():
    features = extract_features(AudioTrack(np.zeros(16000), 16000, 'silence'))
    assert np.all(np.isfinite(features.columns))


def test_mel_filterbank_shape_and_support():
    bank = mel_filterbank(16000, 2048)
    assert bank.shape == (40, 1025)
    assert np.all(bank >= 0)
    assert np.all(bank.max(axis=1) > 0)


def test_mfcc_shape():
    coefficients = mfcc(frame_signal(_tone()), 16000)
    assert coefficients.shape == (20, 91)


def test_deltas_of_a_ramp():
    m = 30
    base = np.tile(np.arange(m, dtype=float), (2, 1))
    stacked = append_deltas(base, 'ramp')
    assert stacked.dim == 6
    first, second = stacked.columns[2:4], stacked.columns[4:6]
    np.testing.assert_allclose(first[:, 2:-2], 1.0, atol=1e-12)
    np.testing.assert_allclose(second[:, 4:-4], 0.0, atol=1e-12)


def test_deltas_of_constant_rows_vanish():
    stacked = append_deltas(np.full((3, 10), 4.0))
    np.testing.assert_array_equal(stacked.columns[3:], np.zeros((6, 10)))


def test_read_wav_scales_int16(tmp_path):
    path = tmp_path / 'pcm.wav'
    wavfile.write(path, 8000, np.array([0, 16384, -32768], dtype=np.int16))
    track = read_wav(str(path))
    assert track.track_id == 'pcm'
    assert track.sample_rate == 8000
    np.testing.assert_allclose(track.samples, [0.0, 0.5, -1.0])


def test_read_wav_downmixes_stereo(tmp_path):
    path = tmp_path / 'stereo.wav'
    wavfile.write(path, 8000, np.array([[0.2, 0.4], [-1.0, 1.0]], dtype=np.float32))
    track = read_wav(str(path), 'st')
    np.testing.assert_allclose(track.samples, [0.3, 0.0], atol=1e-7)


def test_read_wav_rejects_garbage(tmp_path):
    path = tmp_path / 'broken.wav'
    path.write_bytes(b'not a riff file')
    with pytest.raises(DataError):
        read_wav(str(path))


def test_normalize_track(rng):
    frames = FrameMatrix(rng.normal(3.0, 2.0, (4, 50)), 't')
    normal = normalize_track(frames).columns
    np.testing.assert_allclose(normal.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(normal.std(axis=1), 1.0, atol=1e-12)


def test_pca_reduce_keeps_dominant_directions(rng):
    x = np.zeros((5, 400))
    x[0] = 10 * rng.standard_normal(400)
    x[1] = 5 * rng.standard_normal(400)
    x[2:] = 0.01 * rng.standard_normal((3, 400))
    projection, projected = pca_reduce(x, 2)
    assert projected.shape == (2, 400)
    captured = np.abs(projection.basis[:2, :])
    np.testing.assert_allclose(np.sort(captured.max(axis=0)), [1.0, 1.0], atol=1e-3)
    reduced = apply_projection(projection, FrameMatrix(x[:, :10], 't'))
    assert reduced.dim == 2


def test_pca_reduce_argument_checks(rng):
    with pytest.raises(DataError):
        pca_reduce(rng.standard_normal((3, 100)), 4)
    with pytest.raises(DataError):
        pca_reduce(rng.standard_normal((3, 3)), 2)
    with pytest.raises(DataError):
        pca_reduce(np.ones((3, 100)), 2)
