import os

import numpy as np
import pytest

from dcar.models.audio import FrameMatrix, PcaProjection
from dcar.models.classifier import KernelParams
from dcar.models.dataset import Manifest, ManifestEntry, SyntheticSpec
from dcar.models.embedding import Embedding
from dcar.models.errors import DataError
from dcar.models.mixture import GaussianComponent, TrackGMM
from dcar.services.classifier_service import train, train_vectors
from dcar.services.grassmann_service import reduce_components
from dcar.services.synth_service import write_dataset
from dcar.utils.formats import (
    read_embedding,
    read_frames,
    read_gmms,
    read_manifest,
    read_model,
    read_predictions,
    write_embedding,
    write_frames,
    write_gmms,
    write_manifest,
    write_model,
    write_predictions,
)
from tests.conftest import make_components, make_spd


def _rewrite(path, read, write):
    """Write -> read -> write and return both byte strings."""
    first = path.read_bytes()
    again = path.with_suffix('.again')
    write(str(again), read(str(path)))
    return first, again.read_bytes()


def _orthonormal(rng, d, r):
    q, _ = np.linalg.qr(rng.standard_normal((d, r)))
    return q


def test_frames_are_byte_stable(tmp_path, rng):
    path = tmp_path / 'a.frames'
    frames = FrameMatrix(rng.standard_normal((5, 7)) * 1e3, 'track_a')
    write_frames(str(path), frames)
    first, second = _rewrite(path, read_frames, write_frames)
    assert first == second
    back = read_frames(str(path))
    assert back.track_id == 'track_a'
    np.testing.assert_array_equal(back.columns, frames.columns)
    assert first.splitlines()[0] == b'frames-v1 track_a 5 7'


def test_gmms_are_byte_stable(tmp_path, rng):
    path = tmp_path / 'x.gmm'
    gmms = [
        (TrackGMM('t1', [GaussianComponent(0.25, rng.standard_normal(3), make_spd(rng, 3)),
                         GaussianComponent(0.75, rng.standard_normal(3), make_spd(rng, 3))]), 'dog'),
        (TrackGMM('t2', [GaussianComponent(1.0, rng.standard_normal(3), make_spd(rng, 3))]), 'cat'),
    ]
    write_gmms(str(path), gmms)
    first, second = _rewrite(path, read_gmms, write_gmms)
    assert first == second
    back = read_gmms(str(path))
    assert [(g.track_id, label, len(g)) for g, label in back] == [('t1', 'dog', 2), ('t2', 'cat', 1)]


def test_embedding_is_byte_stable(tmp_path, rng):
    path = tmp_path / 'w.emb'
    write_embedding(str(path), Embedding(_orthonormal(rng, 6, 2)))
    first, second = _rewrite(path, read_embedding, write_embedding)
    assert first == second


def _mixture_model(rng):
    components = make_components(rng, 6, 4, ['a', 'b', 'c'] * 2)
    w = Embedding(_orthonormal(rng, 4, 2))
    projection = PcaProjection(rng.standard_normal(6), _orthonormal(rng, 6, 4))
    return train(reduce_components(w.matrix, components), KernelParams(0.5, 1.5, 2.5, 0.1), embedding=w,
                 n_components=2, gmm_seed=9, gmm_tolerance=1e-3, gmm_max_iter=17, normalize=True,
                 projection=projection)


def test_mixture_model_round_trip(tmp_path, rng):
    path = tmp_path / 'm.model'
    model = _mixture_model(rng)
    config = {'METHOD': 'dcar', 'OPT_LAMBDA': '0.5'}
    write_model(str(path), model, config)
    back, stored = read_model(str(path))
    assert stored == config
    assert back.method == 'dcar'
    assert back.events == ('a', 'b', 'c')
    assert back.params == model.params
    assert (back.n_components, back.gmm_seed, back.normalize) == (2, 9, True)
    assert (back.gmm_tolerance, back.gmm_max_iter) == (1e-3, 17)
    np.testing.assert_array_equal(back.coefficients, model.coefficients)
    np.testing.assert_array_equal(back.embedding.matrix, model.embedding.matrix)
    np.testing.assert_array_equal(back.projection.basis, model.projection.basis)
    assert [c.track_id for c in back.components] == [c.track_id for c in model.components]

    again = tmp_path / 'again.model'
    write_model(str(again), back, stored)
    assert path.read_bytes() == again.read_bytes()


def test_vector_model_round_trip(tmp_path, rng):
    path = tmp_path / 'mv.model'
    model = train_vectors(rng.standard_normal((4, 6)), ['x', 'y', 'x', 'y'], alpha=0.5)
    write_model(str(path), model)
    back, stored = read_model(str(path))
    assert stored == {}
    assert back.method == 'mv'
    assert back.labels == ('x', 'y', 'x', 'y')
    assert back.input_dim == 3
    np.testing.assert_array_equal(back.vectors, model.vectors)
    again = tmp_path / 'again.model'
    write_model(str(again), back)
    assert path.read_bytes() == again.read_bytes()


def test_predictions_round_trip(tmp_path):
    path = tmp_path / 'p.pred'
    write_predictions(str(path), ('a', 'b'), [('t1', 'a', 'b', [0.25, 0.75]), ('t2', 'b', 'b', [0.0, 1.0])])
    frame = read_predictions(str(path))
    assert list(frame.columns) == ['track_id', 'truth', 'predicted', 'a', 'b']
    assert frame.attrs['events'] == ('a', 'b')
    assert list(frame['predicted']) == ['b', 'b']
    assert frame.loc[0, 'b'] == 0.75


@pytest.mark.parametrize('content', [
    'frames-v2 t 2 1\n1 2\n',
    'frames-v1 t 2\n1 2\n',
    'frames-v1 t 2 2\n1 2\n',
    'frames-v1 t 2 1\n1 x\n',
    'frames-v1 t 2 1\n1 2 3\n',
])
def test_malformed_frames(tmp_path, content):
    path = tmp_path / 'bad.frames'
    path.write_text(content)
    with pytest.raises(DataError):
        read_frames(str(path))


def test_malformed_gmm_weights(tmp_path):
    path = tmp_path / 'bad.gmm'
    path.write_text('gmm-v1 t a 1 2\n0.5\n0\n1\n0.4\n1\n1\n')
    with pytest.raises(DataError):
        read_gmms(str(path))
    path.write_text('')
    with pytest.raises(DataError):
        read_gmms(str(path))


def test_whitespace_in_identifiers_is_rejected(tmp_path):
    with pytest.raises(DataError):
        write_frames(str(tmp_path / 'x.frames'), FrameMatrix(np.ones((1, 1)), 'has space'))


def test_manifest_round_trip(tmp_path):
    entries = tuple(
        ManifestEntry(f"t{i}", str(tmp_path / 'features' / f"t{i}.frames"), label, split)
        for i, (label, split) in enumerate([('a', 'train'), ('b', 'train'), ('a', 'test')])
    )
    path = tmp_path / 'manifest.csv'
    write_manifest(str(path), Manifest(entries))
    assert 'features/t0.frames' in path.read_text()
    assert read_manifest(str(path)) == Manifest(entries)


def test_manifest_relative_paths_resolve_from_the_working_directory(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / 'data').mkdir()
    entry = ManifestEntry('t0', 'data/features/t0.frames', 'a', 'train')
    write_manifest('data/manifest.csv', Manifest((entry,)))
    assert 'data/features' not in (tmp_path / 'data' / 'manifest.csv').read_text()
    back = read_manifest('data/manifest.csv')
    assert os.path.realpath(back.entries[0].path) == os.path.realpath(tmp_path / 'data' / 'features' / 't0.frames')


def test_synthetic_dataset_in_relative_directory_reads_back(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    spec = SyntheticSpec(n_events=2, train_tracks=1, test_tracks=1, frames=20, dim=4, planted_dim=2, seed=0)
    write_dataset(spec, 'data/synth')
    manifest = read_manifest('data/synth/manifest.csv')
    for entry in manifest:
        assert read_frames(entry.path).track_id == entry.track_id


def test_manifest_errors(tmp_path):
    path = tmp_path / 'manifest.csv'
    path.write_text('track_id,path,label,split\nt1,a.wav,a,train\nt1,b.wav,b,test\n')
    with pytest.raises(DataError):
        read_manifest(str(path))
    path.write_text('track_id,path,label\nt1,a.wav,a\n')
    with pytest.raises(DataError):
        read_manifest(str(path))
    path.write_text('track_id,path,label,split\nt1,a.wav,a,validation\n')
    with pytest.raises(DataError):
        read_manifest(str(path))
