"""Syllable rate measures and the 50 Hz onset sequence."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DataError

ONSET_RATE = 50
KDE_GRID = (0.0, 20.0, 0.01)

# onset*rate products like 0.58*50 land a hair below the integer
_FLOOR_EPS = 1e-9


@dataclass(frozen=True)
class RateStats:
    syllable_rate: float
    articulation_rate: float
    syllable_mode: Optional[float] = None

    def to_dict(self):
        return {"syllable_rate": self.syllable_rate,
                "articulation_rate": self.articulation_rate,
                "syllable_mode": self.syllable_mode}


@dataclass(frozen=True)
class OnsetSequence:
    bits: np.ndarray
    rate: int = ONSET_RATE

    def __len__(self):
        return len(self.bits)


def syllable_rate(a, recording_duration):
    """Syllables per second of recording, silences included."""
    if recording_duration <= 0:
        raise DataError("recording duration must be positive")
    if len(a) == 0:
        raise DataError("annotation has no syllables")
    return len(a) / recording_duration


def articulation_rate(a):
    """Syllables per second of summed syllable durations."""
    if len(a) == 0:
        raise DataError("annotation has no syllables")
    total = float(np.sum(a.durations))
    if total <= 0:
        raise DataError("total syllable duration is zero")
    return len(a) / total


def scott_bandwidth(x):
    """One-dimensional Scott's rule, ``std(x, ddof=1) * n**(-1/5)``."""
    x = np.asarray(x, dtype=float)
    return np.std(x, ddof=1) * len(x) ** (-0.2)


def kde_grid(grid=KDE_GRID):
    start, stop, step = grid
    n = int(round((stop - start) / step)) + 1
    return start + step * np.arange(n)


def gaussian_kde_density(samples, grid, bandwidth):
    """Gaussian KDE of ``samples`` evaluated on ``grid``."""
    samples = np.asarray(samples, dtype=float)
    acc = np.zeros(len(grid))
    for start in range(0, len(samples), 4096):
        z = (grid[:, None] - samples[None, start:start + 4096]) / bandwidth
        acc += np.exp(-0.5 * z * z).sum(axis=1)
    return acc / (len(samples) * bandwidth * np.sqrt(2 * np.pi))


def syllable_mode(durations, grid=KDE_GRID):
    """Mode of the distribution of reciprocal syllable durations.

    The density is a Gaussian KDE with Scott's-rule bandwidth evaluated on a
    fixed grid (0-20 Hz, 0.01 Hz step by default); the first maximum wins.
    If every duration is the same the common reciprocal is returned as is.
    """
    d = np.asarray(durations, dtype=float)
    if len(d) < 2:
        raise DataError("syllable mode needs at least two durations")
    if np.any(d <= 0):
        raise DataError("syllable durations must be positive")
    rates = 1.0 / d
    h = scott_bandwidth(rates)
    if h == 0:
        return float(rates[0])
    g = kde_grid(grid)
    return float(g[int(np.argmax(gaussian_kde_density(rates, g, h)))])


def rate_stats(annotations, recording_durations, grid=KDE_GRID):
    """Pool several sentences' annotations into one :class:`RateStats`.

    Counts and durations are summed before dividing, so longer sentences
    weigh more.
    """
    count = sum(len(a) for a in annotations)
    if count == 0:
        raise DataError("no syllables to summarize")
    total_rec = float(np.sum(recording_durations))
    durs = np.concatenate([a.durations for a in annotations])
    mode = syllable_mode(durs, grid) if len(durs) >= 2 else None
    return RateStats(count / total_rec, count / float(durs.sum()), mode)


def onset_sequence(a, duration, rate=ONSET_RATE):
    """Binary sequence with a 1 at ``floor(onset * rate)`` for every syllable."""
    n = int(np.ceil(duration * rate - _FLOOR_EPS))
    bits = np.zeros(n, dtype=np.int8)
    for iv in a.intervals:
        if iv.onset >= duration:
            raise DataError(f"syllable onset {iv.onset} s is not before the end ({duration} s)")
        bits[int(np.floor(iv.onset * rate + _FLOOR_EPS))] = 1
    return OnsetSequence(bits, rate)
