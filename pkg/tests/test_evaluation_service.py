import logging

import numpy as np
import pytest

from dcar.models.errors import DataError
from dcar.services.evaluation_service import (
    agreement_by_event,
    confusion,
    correct_counts,
    cross_validate,
    discordant_counts,
    evaluate_predictions,
    mcnemar,
    mcnemar_from_counts,
    metrics,
    stratified_folds,
    win_tie_loss,
)

EVENTS = ('event1', 'event2')
TRUTH = ['event1', 'event1', 'event2', 'event2']
PRED = ['event1', 'event2', 'event2', 'event2']


def test_hand_counted_confusion():
    counts = confusion(PRED, TRUTH, EVENTS)
    np.testing.assert_array_equal(counts.tp, [1, 2])
    np.testing.assert_array_equal(counts.fn, [1, 0])
    np.testing.assert_array_equal(counts.fp, [0, 1])
    np.testing.assert_array_equal(counts.tn, [2, 1])


def test_hand_counted_metrics():
    report = evaluate_predictions(PRED, TRUTH, EVENTS)
    assert report.accuracy == 0.75
    assert report.fscore[0] == pytest.approx(2 / 3)
    assert report.fscore[1] == pytest.approx(0.8)
    assert report.far[1] == pytest.approx(0.5)
    assert report.miss_rate[0] == pytest.approx(0.5)
    assert report.summary()['fscore'] == pytest.approx((2 / 3 + 0.8) / 2)


def test_swapping_labels_swaps_counts():
    swap = {'event1': 'event2', 'event2': 'event1'}
    a = confusion(PRED, TRUTH, EVENTS)
    b = confusion([swap[p] for p in PRED], [swap[t] for t in TRUTH], EVENTS)
    np.testing.assert_array_equal(a.tp, b.tp[::-1])
    np.testing.assert_array_equal(a.fp, b.fp[::-1])


def test_perfect_predictions():
    report = evaluate_predictions(TRUTH, TRUTH, EVENTS)
    counts = confusion(TRUTH, TRUTH, EVENTS)
    assert not counts.fp.any() and not counts.fn.any()
    assert report.accuracy == 1.0
    np.testing.assert_array_equal(report.fscore, [1.0, 1.0])


def test_all_wrong():
    report = evaluate_predictions(TRUTH[::-1], TRUTH, EVENTS)
    assert report.accuracy == 0.0
    np.testing.assert_array_equal(report.miss_rate, [1.0, 1.0])


def test_undefined_metrics_are_zero_with_warning(caplog):
    caplog.set_level(logging.WARNING)
    report = evaluate_predictions(['a', 'a'], ['a', 'a'], ('a', 'b', 'c'))
    assert report.fscore[1] == 0.0
    assert report.miss_rate[2] == 0.0
    assert 'undefined' in caplog.text


def test_unknown_label():
    with pytest.raises(DataError):
        confusion(['event3'], ['event1'], EVENTS)
    with pytest.raises(DataError):
        confusion(['event1'], [], EVENTS)


def test_empty_test_set():
    with pytest.raises(DataError):
        evaluate_predictions([], [], EVENTS)


def test_counts_agree_with_a_direct_recount():
    rng = np.random.default_rng(0)
    events = ('a', 'b', 'c')
    for _ in range(100):
        n = int(rng.integers(1, 40))
        truth = list(rng.choice(events, n))
        pred = list(rng.choice(events, n))
        counts = confusion(pred, truth, events)
        for i, e in enumerate(events):
            assert counts.tp[i] == sum(p == e and t == e for p, t in zip(pred, truth))
            assert counts.fp[i] == sum(p == e and t != e for p, t in zip(pred, truth))
            assert counts.fn[i] == sum(p != e and t == e for p, t in zip(pred, truth))
        assert metrics(counts).accuracy == pytest.approx(np.mean([p == t for p, t in zip(pred, truth)]))
        assert np.all(counts.tp + counts.fp + counts.tn + counts.fn == n)


def test_report_table_has_average_row():
    frame = evaluate_predictions(PRED, TRUTH, EVENTS).to_frame()
    assert list(frame['event']) == ['event1', 'event2', 'average']
    assert (frame['accuracy'] == 0.75).all()


def test_mcnemar_closed_forms():
    assert mcnemar_from_counts(10, 0) == pytest.approx(0.001953125)
    assert mcnemar_from_counts(5, 5) == pytest.approx(1.0)
    assert mcnemar_from_counts(0, 0) == 1.0
    assert mcnemar_from_counts(7, 2) == pytest.approx(mcnemar_from_counts(2, 7))


def test_mcnemar_from_predictions():
    truth = ['a'] * 10
    pred_a = ['a'] * 10
    pred_b = ['b'] * 10
    assert discordant_counts(pred_a, pred_b, truth) == (10, 0)
    assert mcnemar(pred_a, pred_b, truth) == pytest.approx(0.001953125)
    assert mcnemar(pred_b, pred_a, truth) == pytest.approx(0.001953125)
    assert mcnemar(pred_a, pred_a, truth) == 1.0
    with pytest.raises(DataError):
        mcnemar(pred_a, pred_b[:3], truth)


def test_win_tie_loss():
    truth = ['a'] * 10
    good, bad = ['a'] * 10, ['b'] * 10
    assert win_tie_loss([(good, good, truth)] * 4) == (0, 4, 0)
    assert win_tie_loss([(good, bad, truth)] * 3) == (3, 0, 0)
    assert win_tie_loss([(good, bad, truth), (bad, good, truth), (good, good, truth)]) == (1, 1, 1)
    # b=9, c=0 gives p=0.0039
    assert win_tie_loss([(good, ['b'] * 9 + ['a'], truth)], level=0.001) == (0, 1, 0)


def test_correct_counts_per_track():
    truth = ['a', 'a', 'b', 'b', 'b']
    first = ['a', 'b', 'b', 'a', 'a']
    second = ['a', 'b', 'a', 'b', 'a']
    np.testing.assert_array_equal(correct_counts([first, second], truth), [2, 0, 1, 1, 0])
    with pytest.raises(DataError):
        correct_counts([first[:4]], truth)
    with pytest.raises(DataError):
        correct_counts([], truth)


def test_agreement_by_event_hand_case():
    truth = ['a', 'a', 'b', 'b', 'b']
    first = ['a', 'b', 'b', 'a', 'a']
    second = ['a', 'b', 'a', 'b', 'a']
    table = agreement_by_event([first, second], truth, events=('a', 'b', 'c'))
    assert list(table.columns) == ['event', 'tracks', 'correct_0', 'correct_1', 'correct_2']
    assert list(table['tracks']) == [2, 3, 0]
    assert list(table.iloc[0, 2:]) == [0.5, 0.0, 0.5]
    assert list(table.iloc[1, 2:]) == pytest.approx([1 / 3, 2 / 3, 0.0])
    assert list(table.iloc[2, 2:]) == [0.0, 0.0, 0.0]


def test_stratified_folds_are_deterministic_and_stratified():
    labels = ['a'] * 5 + ['b'] * 5
    first = stratified_folds(labels, 5, seed=3)
    second = stratified_folds(labels, 5, seed=3)
    assert len(first) == 5
    for (train_a, test_a), (train_b, test_b) in zip(first, second):
        np.testing.assert_array_equal(train_a, train_b)
        np.testing.assert_array_equal(test_a, test_b)
        assert sorted(labels[i] for i in test_a) == ['a', 'b']
    covered = np.sort(np.concatenate([test for _, test in first]))
    np.testing.assert_array_equal(covered, np.arange(10))


def test_folds_shrink_to_smallest_event(caplog):
    caplog.set_level(logging.WARNING)
    folds = stratified_folds(['a'] * 3 + ['b'] * 8, 5, seed=0)
    assert len(folds) == 3
    assert 'reducing folds' in caplog.text
    with pytest.raises(DataError):
        stratified_folds(['a'] + ['b'] * 4, 5, seed=0)


def test_cross_validate_breaks_ties_toward_smaller_values():
    labels = ['a'] * 4 + ['b'] * 4
    best, scores = cross_validate(labels, {'reduced_dim': [5, 3], 'lam': [1.0, 0.1]},
                                  lambda params, train, test: 0.5, folds=2, progress=False)
    assert best == {'reduced_dim': 3, 'lam': 0.1}
    assert len(scores) == 4 * 2
    assert set(scores.columns) == {'reduced_dim', 'lam', 'fold', 'accuracy'}


def test_cross_validate_picks_highest_mean_accuracy():
    labels = ['a'] * 6 + ['b'] * 6
    seen = []

    def evaluate(params, train, test):
        seen.append((len(train), len(test)))
        return 1.0 / (1.0 + abs(params['lam'] - 10.0))

    best, _ = cross_validate(labels, {'lam': [0.1, 1.0, 10.0, 100.0]}, evaluate, folds=3, progress=False)
    assert best == {'lam': 10.0}
    assert set(seen) == {(8, 4)}


def test_cross_validate_single_candidate():
    best, scores = cross_validate(['a', 'a', 'b', 'b'], {'alpha': [0.5]}, lambda p, tr, te: 1.0, folds=2,
                                  progress=False)
    assert best == {'alpha': 0.5}
    assert (scores['accuracy'] == 1.0).all()
