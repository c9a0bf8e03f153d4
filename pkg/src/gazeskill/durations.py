"""Descriptive statistics and Vincentile profiles of fixation durations."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyDistribution, TooFewObservations


@dataclass(frozen=True)
class DurationDistribution:
    subject_id: str
    durations_ms: tuple[float, ...]

    def __post_init__(self):
        d = tuple(sorted(float(v) for v in self.durations_ms))
        if any(not (v > 0) for v in d):
            raise ValueError("durations must be positive")
        object.__setattr__(self, "durations_ms", d)

    @classmethod
    def of(cls, durations, subject_id: str = "") -> "DurationDistribution":
        return cls(subject_id, tuple(durations))

    def __len__(self) -> int:
        return len(self.durations_ms)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.durations_ms, dtype=float)


@dataclass(frozen=True)
class DescriptiveStats:
    mean_ms: float
    median_ms: float
    sd_ms: float | None
    min_ms: float
    max_ms: float
    n: int

    def as_dict(self) -> dict:
        return {
            "mean_ms": self.mean_ms, "median_ms": self.median_ms, "sd_ms": self.sd_ms,
            "min_ms": self.min_ms, "max_ms": self.max_ms, "n": self.n,
        }


@dataclass(frozen=True)
class VincentileProfile:
    bin_means_ms: tuple[float, ...]
    bin_counts: tuple[int, ...]

    def as_dict(self) -> dict:
        return {"bin_means_ms": list(self.bin_means_ms), "bin_counts": list(self.bin_counts)}


def _values(dist) -> np.ndarray:
    if isinstance(dist, DurationDistribution):
        return dist.as_array()
    return np.sort(np.asarray(dist, dtype=float))


def describe(dist) -> DescriptiveStats:
    """Mean, median, sample SD (n-1), min and max; SD is ``None`` for n < 2."""
    d = _values(dist)
    n = len(d)
    if n == 0:
        raise EmptyDistribution("cannot describe an empty distribution")
    mean = math.fsum(d) / n
    mid = n // 2
    median = float(d[mid]) if n % 2 else (float(d[mid - 1]) + float(d[mid])) / 2.0
    sd = None
    if n >= 2:
        sd = math.sqrt(math.fsum((d - mean) ** 2) / (n - 1))
    # fsum keeps the mean inside [min, max] even for nearly constant data
    mean = min(max(mean, float(d[0])), float(d[-1]))
    return DescriptiveStats(mean, median, sd, float(d[0]), float(d[-1]), n)


def vincentiles(dist, k: int = 5) -> VincentileProfile:
    """Equal-count rank bins; 0-based rank r of n goes to bin floor(k*r/n)."""
    d = _values(dist)
    n = len(d)
    if k < 1:
        raise ValueError("k must be positive")
    if n < k:
        raise TooFewObservations(f"need at least {k} durations, got {n}")
    bins = (k * np.arange(n)) // n
    means, counts = [], []
    for b in range(k):
        members = d[bins == b]
        counts.append(int(len(members)))
        # clamp to the bin range so rounding can never break monotonicity
        m = math.fsum(members) / len(members)
        means.append(min(max(m, float(members[0])), float(members[-1])))
    return VincentileProfile(tuple(means), tuple(counts))


def pct_over(dist, threshold_ms: float) -> float:
    d = _values(dist)
    if len(d) == 0:
        raise EmptyDistribution("cannot take a tail fraction of an empty distribution")
    return float(np.count_nonzero(d > threshold_ms)) / len(d)
