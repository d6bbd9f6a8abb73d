"""
Confusion counts and metric reports.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pandas as pd

from dcar.models.errors import DataError


@dataclass(frozen=True, eq=False)
class ConfusionCounts:
    """One-vs-rest TP/FP/TN/FN per event over ``total`` test tracks."""

    events: Tuple[str, ...]
    tp: np.ndarray
    fp: np.ndarray
    tn: np.ndarray
    fn: np.ndarray
    total: int

    def __post_init__(self):
        object.__setattr__(self, 'events', tuple(self.events))
        for name in ('tp', 'fp', 'tn', 'fn'):
            counts = np.asarray(getattr(self, name), dtype=int)
            if counts.shape != (len(self.events),) or np.any(counts < 0):
                raise DataError(f"{name} must hold one nonnegative count per event")
            object.__setattr__(self, name, counts)
        if np.any(self.tp + self.fp + self.tn + self.fn != self.total):
            raise DataError("Per-event counts must add up to the number of tracks")
        if self.tp.sum() > self.total:
            raise DataError("More true positives than tracks")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'event': self.events, 'TP': self.tp, 'FP': self.fp, 'TN': self.tn, 'FN': self.fn})


@dataclass(frozen=True, eq=False)
class MetricReport:
    """Combined accuracy plus per-event and macro-averaged FScore, FAR and MissRate."""

    events: Tuple[str, ...]
    accuracy: float
    fscore: np.ndarray
    far: np.ndarray
    miss_rate: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'events', tuple(self.events))
        values = [self.accuracy, *self.fscore, *self.far, *self.miss_rate]
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise DataError("Metrics must lie in [0, 1]")

    @property
    def mean_fscore(self) -> float:
        return float(np.mean(self.fscore))

    @property
    def mean_far(self) -> float:
        return float(np.mean(self.far))

    @property
    def mean_miss_rate(self) -> float:
        return float(np.mean(self.miss_rate))

    def summary(self) -> dict:
        return {
            'accuracy': self.accuracy,
            'fscore': self.mean_fscore,
            'far': self.mean_far,
            'miss_rate': self.mean_miss_rate,
        }

    def to_frame(self) -> pd.DataFrame:
        """Per-event rows followed by an ``average`` row."""
        frame = pd.DataFrame({
            'event': list(self.events),
            'fscore': self.fscore,
            'far': self.far,
            'miss_rate': self.miss_rate,
        })
        average = pd.DataFrame([{
            'event': 'average',
            'fscore': self.mean_fscore,
            'far': self.mean_far,
            'miss_rate': self.mean_miss_rate,
        }])
        frame = pd.concat([frame, average], ignore_index=True)
        frame['accuracy'] = self.accuracy
        return frame
