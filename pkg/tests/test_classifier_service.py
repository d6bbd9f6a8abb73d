import logging

import numpy as np
import pytest

from dcar.models.audio import FrameMatrix
from dcar.models.classifier import KernelParams, LabelMatrix, MembershipMatrix
from dcar.models.embedding import Embedding
from dcar.models.errors import DataError
from dcar.models.mixture import GaussianComponent, LabeledComponent, TrackGMM
from dcar.models.spd import SpdMatrix
from dcar.services.classifier_service import (
    classify_mixture,
    gmm_baseline,
    kernel_matrix,
    kernel_value,
    median_bandwidths,
    mv_vector,
    predict_membership,
    predict_vector,
    solve_ridge,
    train,
    train_vectors,
    vote,
)
from dcar.services.grassmann_service import reduce_components
from tests.conftest import make_components


def _scalar(mean, var, label='a', track='t'):
    return LabeledComponent(GaussianComponent(1.0, [mean], SpdMatrix([[var]])), label, track)


def test_kernel_value_hand_case():
    params = KernelParams(lam=1.0, sigma_mean=1.0, sigma_cov=1.0, alpha=1.0)
    value = kernel_value(_scalar(0.0, 1.0), _scalar(1.0, np.e ** 2), params)
    assert value == pytest.approx(np.exp(-0.5) + np.exp(-2.0), abs=1e-12)


def test_kernel_value_of_identical_components(rng):
    (g,) = make_components(rng, 1, 3)
    params = KernelParams(lam=0.3, sigma_mean=2.0, sigma_cov=0.5, alpha=1.0)
    assert kernel_value(g, g, params) == pytest.approx(1.3)


def test_kernel_matrix_symmetric_with_exact_diagonal(rng):
    components = make_components(rng, 7, 3)
    params = KernelParams(lam=0.5, sigma_mean=1.0, sigma_cov=1.0, alpha=1.0)
    k = kernel_matrix(components, None, params)
    np.testing.assert_array_equal(k, k.T)
    np.testing.assert_array_equal(np.diag(k), np.full(7, 1.5))
    cross = kernel_matrix(components[:2], components, params)
    assert cross[0, 3] == pytest.approx(kernel_value(components[0], components[3], params), rel=1e-10)


def test_invalid_kernel_parameters():
    with pytest.raises(DataError):
        KernelParams(lam=0.0, sigma_mean=1.0, sigma_cov=1.0, alpha=1.0)


def test_label_matrix_rows():
    y = LabelMatrix.from_labels(['b', 'a', 'b'], ('a', 'b')).matrix
    np.testing.assert_array_equal(y, [[0, 1], [1, 0], [0, 1]])
    with pytest.raises(DataError):
        LabelMatrix.from_labels(['c'], ('a', 'b'))


def test_far_apart_components_give_scaled_labels():
    components = [_scalar(0.0, 1.0, 'a'), _scalar(1e3, 1e3, 'b')]
    params = KernelParams(lam=1.0, sigma_mean=1.0, sigma_cov=1e-3, alpha=1.0)
    model = train(components, params)
    np.testing.assert_allclose(model.coefficients, np.eye(2) / 3.0, atol=1e-12)


def test_duplicate_components_share_coefficients():
    components = [_scalar(0.0, 1.0, 'a'), _scalar(0.0, 1.0, 'a'), _scalar(2.0, 3.0, 'b')]
    params = KernelParams(lam=1.0, sigma_mean=1.0, sigma_cov=1.0, alpha=0.5)
    model = train(components, params)
    np.testing.assert_allclose(model.coefficients[0], model.coefficients[1], atol=1e-12)


def test_solve_residual_is_small(rng):
    components = make_components(rng, 12, 3, [f"e{i % 3}" for i in range(12)])
    params = KernelParams(1.0, *median_bandwidths(components), alpha=0.1)
    model = train(components, params)
    k = kernel_matrix(components, None, params)
    y = LabelMatrix.from_labels(model.labels, model.events).matrix
    assert np.linalg.norm((k + 0.1 * np.eye(12)) @ model.coefficients - y) < 1e-8


def test_ridge_retries_with_larger_alpha(caplog):
    caplog.set_level(logging.WARNING)
    kernel = np.array([[1.0, 2.0], [2.0, 1.0]])
    coefficients, alpha = solve_ridge(kernel, np.eye(2), 0.5)
    assert alpha == pytest.approx(5.0)
    np.testing.assert_allclose((kernel + alpha * np.eye(2)) @ coefficients, np.eye(2), atol=1e-12)
    assert 'retrying' in caplog.text


def test_interpolation_reproduces_training_labels(rng):
    components = make_components(rng, 15, 3, [f"e{i % 3}" for i in range(15)])
    params = KernelParams(1.0, *median_bandwidths(components), alpha=1e-8)
    model = train(components, params)
    for c in components:
        membership = predict_membership(model, [c.component])
        assert vote(membership, model.events) == c.label
        np.testing.assert_allclose(membership.scores[0], LabelMatrix.from_labels([c.label], model.events).matrix[0],
                                   atol=1e-3)


def test_far_test_component_has_near_zero_membership():
    components = [_scalar(0.0, 1.0, 'a'), _scalar(1.0, 2.0, 'b')]
    model = train(components, KernelParams(1.0, 1.0, 1.0, 1.0))
    far = GaussianComponent(1.0, [1e4], SpdMatrix([[1e8]]))
    np.testing.assert_allclose(predict_membership(model, [far]).scores, 0.0, atol=1e-12)


def test_membership_is_linear_in_labels(rng):
    components = make_components(rng, 8, 2, ['a', 'b'] * 4)
    params = KernelParams(1.0, 1.0, 1.0, 0.5)
    model = train(components, params)
    tests = [c.component for c in make_components(rng, 3, 2)]
    k = kernel_matrix(tests, model.components, params)
    np.testing.assert_allclose(predict_membership(model, tests).scores, k @ model.coefficients, atol=1e-12)
    y = LabelMatrix.from_labels(model.labels, model.events).matrix
    stacked = np.linalg.solve(kernel_matrix(components, None, params) + 0.5 * np.eye(8), np.hstack([y, 2 * y]))
    np.testing.assert_allclose(k @ stacked[:, 2:], 2 * (k @ model.coefficients), atol=1e-10)


def test_membership_rejects_wrong_dimension(rng):
    components = make_components(rng, 4, 3)
    model = train(components, KernelParams(1.0, 1.0, 1.0, 1.0))
    with pytest.raises(DataError):
        predict_membership(model, [make_components(rng, 1, 2)[0].component])


def test_vote_weights_and_ties():
    scores = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert vote(MembershipMatrix(scores, [0.9, 0.1]), ('a', 'b')) == 'a'
    assert vote(MembershipMatrix(scores, [0.1, 0.9]), ('a', 'b')) == 'b'
    assert vote(MembershipMatrix(scores, [0.5, 0.5]), ('a', 'b')) == 'a'
    assert vote(MembershipMatrix(7.0 * scores, [0.1, 0.9]), ('a', 'b')) == 'b'
    assert vote(MembershipMatrix([[0.2, 0.4, 0.1]], [1.0]), ('x', 'y', 'z')) == 'y'


def test_vote_rejects_empty():
    with pytest.raises(DataError):
        vote(MembershipMatrix(np.zeros((0, 2)), []), ('a', 'b'))


def test_classify_mixture_uses_the_model_embedding(rng):
    components = make_components(rng, 6, 4, ['a', 'b'] * 3)
    w = Embedding(np.eye(4)[:, :2])
    reduced = reduce_components(w.matrix, components)
    model = train(reduced, KernelParams(1.0, 1.0, 1.0, 1e-8), embedding=w)
    gmm = TrackGMM('query', [components[1].component])
    label, scores = classify_mixture(model, gmm)
    assert label == 'b'
    assert scores.shape == (2,)


def test_gmm_baseline_uses_identity(rng):
    components = make_components(rng, 6, 3, ['a', 'b'] * 3)
    params = KernelParams(1.0, 1.0, 1.0, 1.0)
    model = gmm_baseline(components, params)
    assert model.method == 'gmm'
    np.testing.assert_array_equal(model.embedding.matrix, np.eye(3))
    np.testing.assert_array_equal(kernel_matrix(model.components, None, params),
                                  kernel_matrix(components, None, params))


def test_mv_vector():
    frames = FrameMatrix(np.array([[0.0, 2.0]]), 't')
    np.testing.assert_allclose(mv_vector(frames), [1.0, 1.0])
    constant = FrameMatrix(np.full((3, 5), 2.0), 'c')
    np.testing.assert_array_equal(mv_vector(constant)[3:], np.zeros(3))
    with pytest.raises(DataError):
        mv_vector(FrameMatrix(np.ones((3, 1)), 'one'))


def test_mv_vector_ignores_frame_order(rng):
    x = rng.standard_normal((4, 30))
    a = mv_vector(FrameMatrix(x, 't'))
    b = mv_vector(FrameMatrix(x[:, rng.permutation(30)], 't'))
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_vector_model_interpolates(rng):
    vectors = rng.standard_normal((9, 4))
    labels = ['a', 'b', 'c'] * 3
    model = train_vectors(vectors, labels, alpha=1e-8)
    assert model.method == 'mv'
    for vector, label in zip(vectors, labels):
        assert vote(predict_vector(model, vector), model.events) == label
    with pytest.raises(DataError):
        predict_vector(model, np.zeros(3))
