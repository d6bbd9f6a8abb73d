"""
Detection metrics, cross-validated parameter tuning and paired
significance testing between two methods.
"""
import logging
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import binomtest
from sklearn.model_selection import ParameterGrid, StratifiedKFold
from tqdm import tqdm

from dcar.models.errors import DataError
from dcar.models.evaluation import ConfusionCounts, MetricReport

logger = logging.getLogger(__name__)

# Published results on the ten-event YLI-MED task, kept for reference
# only; they cannot be reproduced without that audio.
REFERENCE_ACCURACY = {'mv': 0.3907, 'ivector': 0.4640, 'gmm': 0.4923, 'dcar': 0.5321}
REFERENCE_BINARY_ACCURACY = {'dcar': 0.8293, 'ivector': 0.7489}
REFERENCE_WIN_TIE_LOSS = {0.05: (35, 7, 3), 0.01: (40, 2, 3)}

# Ties in mean fold accuracy prefer smaller values of these, in order
TIE_BREAK_ORDER = ('reduced_dim', 'n_components', 'lam', 'alpha')


def confusion(predictions: Sequence[str], truth: Sequence[str], events: Sequence[str]) -> ConfusionCounts:
    """One-vs-rest counts for every event in the catalog."""
    if len(predictions) != len(truth):
        raise DataError(f"{len(predictions)} predictions for {len(truth)} ground-truth labels")
    events = tuple(events)
    known = set(events)
    for label in list(predictions) + list(truth):
        if label not in known:
            raise DataError(f"Unknown label {label!r}")
    pred = np.asarray(predictions, dtype=object)
    true = np.asarray(truth, dtype=object)
    tp, fp, tn, fn = [], [], [], []
    for event in events:
        p = pred == event
        t = true == event
        tp.append(int(np.sum(p & t)))
        fp.append(int(np.sum(p & ~t)))
        tn.append(int(np.sum(~p & ~t)))
        fn.append(int(np.sum(~p & t)))
    return ConfusionCounts(events, tp, fp, tn, fn, total=len(truth))


def _ratio(numerator, denominator, name, event):
    if denominator == 0:
        logger.warning(f"{name} is undefined for event {event!r}; reporting 0")
        return 0.0
    return numerator / denominator


def metrics(counts: ConfusionCounts) -> MetricReport:
    """
    Accuracy over all tracks and macro-averaged per-event metrics

    Args:
        counts: one-vs-rest confusion counts

    Returns:
        MetricReport: accuracy, FScore, FAR and MissRate
    """
    if counts.total <= 0:
        raise DataError("Cannot compute metrics on an empty test set")
    fscore, far, miss = [], [], []
    for i, event in enumerate(counts.events):
        tp, fp, tn, fn = counts.tp[i], counts.fp[i], counts.tn[i], counts.fn[i]
        fscore.append(_ratio(2 * tp, 2 * tp + fp + fn, 'FScore', event))
        far.append(_ratio(fp, tn + fp, 'FAR', event))
        miss.append(_ratio(fn, fn + tp, 'MissRate', event))
    return MetricReport(
        events=counts.events,
        accuracy=float(counts.tp.sum() / counts.total),
        fscore=np.array(fscore, dtype=float),
        far=np.array(far, dtype=float),
        miss_rate=np.array(miss, dtype=float),
    )


def evaluate_predictions(predictions, truth, events) -> MetricReport:
    return metrics(confusion(predictions, truth, events))


def discordant_counts(pred_a, pred_b, truth) -> Tuple[int, int]:
    """b = A right and B wrong, c = A wrong and B right."""
    if not len(pred_a) == len(pred_b) == len(truth):
        raise DataError("Prediction lists must have equal lengths")
    a_right = np.asarray(pred_a, dtype=object) == np.asarray(truth, dtype=object)
    b_right = np.asarray(pred_b, dtype=object) == np.asarray(truth, dtype=object)
    return int(np.sum(a_right & ~b_right)), int(np.sum(~a_right & b_right))


def mcnemar(pred_a, pred_b, truth) -> float:
    """Exact two-tailed McNemar test on the discordant pairs."""
    b, c = discordant_counts(pred_a, pred_b, truth)
    return mcnemar_from_counts(b, c)


def mcnemar_from_counts(b: int, c: int) -> float:
    if b + c == 0:
        return 1.0
    return float(min(1.0, binomtest(b, b + c, 0.5, alternative='two-sided').pvalue))


def win_tie_loss(pair_results: Iterable[Tuple[Sequence[str], Sequence[str], Sequence[str]]],
                 level: float = 0.05) -> Tuple[int, int, int]:
    """
    Count significant wins, ties and losses of method A over method B

    Args:
        pair_results: (pred_a, pred_b, truth) for each pairwise experiment
        level: significance level of the McNemar test

    Returns:
        tuple: (wins, ties, losses)
    """
    wins = ties = losses = 0
    for pred_a, pred_b, truth in pair_results:
        b, c = discordant_counts(pred_a, pred_b, truth)
        if mcnemar_from_counts(b, c) < level and b != c:
            if b > c:
                wins += 1
            else:
                losses += 1
        else:
            ties += 1
    return wins, ties, losses


def correct_counts(method_predictions: Sequence[Sequence[str]], truth: Sequence[str]) -> np.ndarray:
    """Per test track, how many of the methods predicted its label."""
    truth = np.asarray(truth)
    if not method_predictions:
        raise DataError("At least one method's predictions are required")
    for predictions in method_predictions:
        if len(predictions) != truth.size:
            raise DataError(f"Prediction list of length {len(predictions)} does not match {truth.size} tracks")
    return np.sum([np.asarray(p) == truth for p in method_predictions], axis=0).astype(int)


def agreement_by_event(method_predictions: Sequence[Sequence[str]], truth: Sequence[str],
                       events: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """
    Per-event distribution of the number of methods classifying a track correctly

    Column ``correct_k`` holds the fraction of the event's test tracks that
    exactly k of the M methods got right, for k = 0..M. Tracks no method
    gets right (``correct_0``) point at confusable events.

    Args:
        method_predictions: one prediction list per method, aligned with ``truth``
        truth: true label per test track
        events: event order of the rows (defaults to the sorted labels present)

    Returns:
        pd.DataFrame: one row per event with its track count and the fractions
    """
    counts = correct_counts(method_predictions, truth)
    truth = np.asarray(truth)
    events = tuple(events) if events is not None else tuple(sorted(set(truth)))
    levels = range(len(method_predictions) + 1)
    rows = []
    for event in events:
        mask = truth == event
        tracks = int(np.count_nonzero(mask))
        row = {'event': event, 'tracks': tracks}
        for k in levels:
            row[f'correct_{k}'] = float(np.count_nonzero(counts[mask] == k)) / tracks if tracks else 0.0
        rows.append(row)
    return pd.DataFrame(rows, columns=['event', 'tracks'] + [f'correct_{k}' for k in levels])


def stratified_folds(labels: Sequence[str], folds: int, seed: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    Track-level stratified (train, test) index splits

    The number of folds drops to the size of the smallest event when an
    event has fewer tracks than requested.
    """
    labels = np.asarray(labels, dtype=object)
    _, counts = np.unique(labels, return_counts=True)
    smallest = int(counts.min()) if counts.size else 0
    if smallest < 2:
        raise DataError("Every event needs at least two training tracks for cross-validation")
    if smallest < folds:
        logger.warning(f"Smallest event has {smallest} tracks; reducing folds from {folds} to {smallest}")
        folds = smallest
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    return list(splitter.split(np.zeros(len(labels)), labels))


def _tie_key(params: Mapping) -> tuple:
    return tuple(params[k] for k in TIE_BREAK_ORDER if k in params)


def cross_validate(labels: Sequence[str], grid: Mapping[str, Sequence], evaluate: Callable,
                   folds: int = 5, seed: int = 0, progress: Optional[bool] = None) -> Tuple[Dict, pd.DataFrame]:
    """
    Grid search scored by mean fold accuracy

    Args:
        labels: event label of every training track
        grid: parameter name -> candidate values
        evaluate: callable(params, train_idx, test_idx) -> accuracy on test_idx
        folds: requested number of folds
        seed: fold shuffling seed
        progress: show a progress bar (None follows the log level)

    Returns:
        tuple: (best parameters, fold score table with one row per candidate and fold)
    """
    splits = stratified_folds(labels, folds, seed)
    candidates = list(ParameterGrid({k: list(v) for k, v in grid.items()}))
    if not candidates:
        raise DataError("Empty parameter grid")
    disable = not progress if progress is not None else not logger.isEnabledFor(logging.INFO)

    rows = []
    for params in tqdm(candidates, desc="Cross-validation", disable=disable):
        for fold, (train_idx, test_idx) in enumerate(splits):
            accuracy = float(evaluate(params, train_idx, test_idx))
            rows.append({**params, 'fold': fold, 'accuracy': accuracy})
    scores = pd.DataFrame(rows)

    means = [float(np.mean([r['accuracy'] for r in rows[i * len(splits):(i + 1) * len(splits)]]))
             for i in range(len(candidates))]
    best = min(range(len(candidates)), key=lambda i: (-means[i], _tie_key(candidates[i])))
    logger.info(f"Best parameters {candidates[best]} with mean fold accuracy {means[best]:.4f}")
    return dict(candidates[best]), scores
