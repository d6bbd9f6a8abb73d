"""
Dataset manifests and synthetic dataset settings.
"""
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

from dcar.models.errors import DataError

SPLITS = ('train', 'test')


@dataclass(frozen=True)
class ManifestEntry:
    track_id: str
    path: str
    label: str
    split: str

    def __post_init__(self):
        if not self.track_id:
            raise DataError("Manifest entry without a track_id")
        if not self.label:
            raise DataError(f"Track {self.track_id}: empty label")
        if self.split not in SPLITS:
            raise DataError(f"Track {self.track_id}: split must be 'train' or 'test', got {self.split!r}")


@dataclass(frozen=True)
class Manifest:
    """Ordered list of tracks; the order drives every aggregation."""

    entries: Tuple[ManifestEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, 'entries', tuple(self.entries))
        seen = set()
        for entry in self.entries:
            if entry.track_id in seen:
                raise DataError(f"Duplicate track_id {entry.track_id!r} in manifest")
            seen.add(entry.track_id)

    def __iter__(self) -> Iterator[ManifestEntry]:
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    @property
    def events(self) -> Tuple[str, ...]:
        """Event catalog in sorted order."""
        return tuple(sorted({e.label for e in self.entries}))

    def split(self, name: str) -> 'Manifest':
        if name not in SPLITS:
            raise DataError(f"Unknown split {name!r}")
        return Manifest(tuple(e for e in self.entries if e.split == name))

    def restrict(self, events: Optional[Sequence[str]]) -> 'Manifest':
        """Keep only tracks whose label is in ``events`` (None keeps everything)."""
        if not events:
            return self
        unknown = set(events) - set(self.events)
        if unknown:
            raise DataError(f"Events not in manifest: {', '.join(sorted(unknown))}")
        wanted = set(events)
        return Manifest(tuple(e for e in self.entries if e.label in wanted))

    def get(self, track_id: str) -> ManifestEntry:
        for entry in self.entries:
            if entry.track_id == track_id:
                return entry
        raise DataError(f"Unknown track_id {track_id!r}")

    @property
    def labels(self) -> List[str]:
        return [e.label for e in self.entries]

    @property
    def track_ids(self) -> List[str]:
        return [e.track_id for e in self.entries]

    def require_splits(self):
        if not any(e.split == 'train' for e in self.entries):
            raise DataError("Manifest has no training tracks")
        if not any(e.split == 'test' for e in self.entries):
            raise DataError("Manifest has no test tracks")


@dataclass(frozen=True)
class SyntheticSpec:
    """
    Planted-subspace synthetic dataset

    Events differ only inside a ``planted_dim``-dimensional subspace of the
    d-dimensional feature space; the remaining directions carry shared noise.
    """

    n_events: int = 3
    train_tracks: int = 30
    test_tracks: int = 10
    frames: int = 200
    dim: int = 12
    planted_dim: int = 4
    clusters: int = 2
    separation: float = 5.0
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_events < 2:
            raise DataError("At least two events are required")
        if self.train_tracks < 1 or self.test_tracks < 0:
            raise DataError("Track counts must be positive")
        if self.frames < 2:
            raise DataError("Each track needs at least two frames")
        if not 1 <= self.planted_dim < self.dim:
            raise DataError("planted_dim must satisfy 1 <= planted_dim < dim")
        if self.clusters < 1:
            raise DataError("clusters must be >= 1")
        if self.separation < 0 or self.noise <= 0:
            raise DataError("separation must be >= 0 and noise > 0")
