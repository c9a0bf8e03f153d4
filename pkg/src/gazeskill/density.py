"""Gaussian kernel density over durations, mode finding and duration bands."""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass

import numpy as np

from .durations import _values
from .errors import DegenerateDistribution, EmptyDistribution, InvalidBands, NonPositiveBandwidth, TooFewObservations
from .gazeio import fmt_num

SQRT_2PI = math.sqrt(2.0 * math.pi)
DEFAULT_BANDWIDTH_MS = 30.0
# grid points evaluated per chunk; bounds peak memory to chunk * n doubles
_CHUNK = 256


@dataclass(frozen=True)
class DensityEstimate:
    grid_ms: np.ndarray
    density: np.ndarray
    bandwidth_ms: float
    kernel: str = "gaussian"

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.grid_ms))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t_ms,density\n")
        for t, d in zip(self.grid_ms, self.density):
            buf.write(f"{fmt_num(t)},{fmt_num(d)}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class Mode:
    location_ms: float
    density_value: float
    prominence: float

    def as_dict(self) -> dict:
        return {"location_ms": self.location_ms, "density": self.density_value, "prominence": self.prominence}


class FixationClass(str, enum.Enum):
    AMBIENT = "ambient"
    INTERMEDIATE = "intermediate"
    FOCAL = "focal"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Bands:
    ambient_max_ms: float = 150.0
    focal_min_ms: float = 250.0

    def __post_init__(self):
        if not self.ambient_max_ms < self.focal_min_ms:
            raise InvalidBands(
                f"ambient_max ({self.ambient_max_ms}) must be below focal_min ({self.focal_min_ms})"
            )


DEFAULT_BANDS = Bands()


def classify_fixation(duration_ms: float, bands: Bands = DEFAULT_BANDS) -> FixationClass:
    if not duration_ms > 0:
        raise ValueError("duration must be positive")
    if duration_ms <= bands.ambient_max_ms:
        return FixationClass.AMBIENT
    if duration_ms >= bands.focal_min_ms:
        return FixationClass.FOCAL
    return FixationClass.INTERMEDIATE


def default_grid(d: np.ndarray, bandwidth_ms: float) -> np.ndarray:
    """1 ms steps from 0 to max + 5 bandwidths."""
    top = math.ceil(float(d.max()) + 5.0 * bandwidth_ms)
    return np.arange(0.0, top + 1.0, 1.0)


def gaussian_sum(points: np.ndarray, data: np.ndarray, h: float) -> np.ndarray:
    """(1/(n h)) * sum_i phi((t - d_i)/h) at each t, in a fixed summation order."""
    n = len(data)
    out = np.empty(len(points))
    for start in range(0, len(points), _CHUNK):
        block = points[start:start + _CHUNK, None]
        z = (block - data[None, :]) / h
        out[start:start + _CHUNK] = np.exp(-0.5 * z * z).sum(axis=1)
    return out / (n * h * SQRT_2PI)


def kde(dist, bandwidth_ms: float = DEFAULT_BANDWIDTH_MS, grid_ms=None) -> DensityEstimate:
    d = _values(dist)
    if len(d) == 0:
        raise EmptyDistribution("cannot estimate a density from no durations")
    if not bandwidth_ms > 0:
        raise NonPositiveBandwidth(f"bandwidth must be positive, got {bandwidth_ms}")
    grid = default_grid(d, bandwidth_ms) if grid_ms is None else np.asarray(grid_ms, dtype=float)
    return DensityEstimate(grid, gaussian_sum(grid, d, float(bandwidth_ms)), float(bandwidth_ms))


# -- Sheather-Jones ------------------------------------------------------------

_EXACT_PAIRS_MAX_N = 3000
_N_BINS = 1000
_DELMAX = 1000.0


def _pair_distances(x: np.ndarray):
    """Distances of all pairs i<j, exactly or binned (R-style) for large n.

    Returns (distances, weights).
    """
    n = len(x)
    if n <= _EXACT_PAIRS_MAX_N:
        iu = np.triu_indices(n, k=1)
        return np.abs(x[iu[0]] - x[iu[1]]), None
    lo, hi = float(x.min()), float(x.max())
    width = (hi - lo) * 1.01 / _N_BINS
    idx = np.minimum(((x - lo) / width).astype(int), _N_BINS - 1)
    counts = np.bincount(idx, minlength=_N_BINS).astype(float)
    # pair counts at bin lag k: sum_i c_i c_{i+k}; the k=0 term excludes self pairs
    full = np.correlate(counts, counts, mode="full")[_N_BINS - 1:]
    full[0] = (np.sum(counts * counts) - n) / 2.0
    return np.arange(_N_BINS) * width, full


def _phi4_functional(dist, w, n, h):
    delta = (dist / h) ** 2
    term = np.exp(-delta / 2.0) * (delta * delta - 6.0 * delta + 3.0)
    term[delta >= _DELMAX] = 0.0
    s = term.sum() if w is None else (term * w).sum()
    s = 2.0 * s + n * 3.0
    return s / (n * (n - 1) * h ** 5 * SQRT_2PI)


def _phi6_functional(dist, w, n, h):
    delta = (dist / h) ** 2
    term = np.exp(-delta / 2.0) * (delta ** 3 - 15.0 * delta ** 2 + 45.0 * delta - 15.0)
    term[delta >= _DELMAX] = 0.0
    s = term.sum() if w is None else (term * w).sum()
    s = 2.0 * s - 15.0 * n
    return s / (n * (n - 1) * h ** 7 * SQRT_2PI)


def silverman_bandwidth(d: np.ndarray) -> float:
    sd = float(np.std(d, ddof=1))
    q75, q25 = np.percentile(d, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * len(d) ** (-0.2)


def sj_objective(d: np.ndarray):
    """The solve-the-equation function whose root is the SJ bandwidth, or None."""
    n = len(d)
    sd = float(np.std(d, ddof=1))
    q75, q25 = np.percentile(d, [75, 25])
    scale = min(sd, (q75 - q25) / 1.349) if q75 > q25 else sd
    a = 1.24 * scale * n ** (-1.0 / 7.0)
    b = 1.23 * scale * n ** (-1.0 / 9.0)
    c1 = 1.0 / (2.0 * math.sqrt(math.pi) * n)
    dist, w = _pair_distances(d)
    td = -_phi6_functional(dist, w, n, b)
    sda = _phi4_functional(dist, w, n, a)
    if not (td > 0 and sda > 0):
        return None
    alph2 = 1.357 * (sda / td) ** (1.0 / 7.0)

    def f(h: float) -> float:
        sdh = _phi4_functional(dist, w, n, alph2 * h ** (5.0 / 7.0))
        if sdh <= 0:
            return -h
        return (c1 / sdh) ** 0.2 - h

    return f


def sheather_jones_bandwidth(dist, rtol: float = 1e-6) -> float:
    """Sheather-Jones solve-the-equation bandwidth, by bisection.

    Searches [sd/1000, 10*sd]; without a sign change there the Silverman
    rule of thumb is returned instead.
    """
    d = _values(dist)
    if len(d) < 10:
        raise TooFewObservations(f"need at least 10 durations, got {len(d)}")
    sd = float(np.std(d, ddof=1))
    if not sd > 0:
        raise DegenerateDistribution("all durations are equal")
    f = sj_objective(d)
    if f is None:
        return silverman_bandwidth(d)
    lo, hi = sd / 1000.0, 10.0 * sd
    flo, fhi = f(lo), f(hi)
    if not (flo > 0 > fhi):
        return silverman_bandwidth(d)
    while (hi - lo) > rtol * lo:
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# -- modes ---------------------------------------------------------------------

def _prominences(y: np.ndarray, peaks: list[int]) -> list[float]:
    out = []
    for p in peaks:
        h = y[p]
        left = p
        left_min = h
        while left > 0 and y[left - 1] <= h:
            left -= 1
            left_min = min(left_min, y[left])
        # stop only at a strictly taller sample; equal plateaus belong to the peak
        right = p
        right_min = h
        while right < len(y) - 1 and y[right + 1] <= h:
            right += 1
            right_min = min(right_min, y[right])
        out.append(float(h - max(left_min, right_min)))
    return out


def find_modes(estimate: DensityEstimate, min_prominence_frac: float = 0.05) -> list[Mode]:
    """Local maxima with prominence >= ``min_prominence_frac`` of the global max.

    A flat top reports its midpoint (rounded down to a grid point).
    """
    y = np.asarray(estimate.density, dtype=float)
    x = np.asarray(estimate.grid_ms, dtype=float)
    n = len(y)
    if n == 0:
        raise EmptyDistribution("empty density")
    peaks = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and y[j + 1] == y[i]:
            j += 1
        left_ok = i == 0 or y[i - 1] < y[i]
        right_ok = j == n - 1 or y[j + 1] < y[i]
        if left_ok and right_ok and not (i == 0 and j == n - 1):
            peaks.append((i + j) // 2)
        i = j + 1
    if not peaks:
        return []
    prom = _prominences(y, peaks)
    cutoff = min_prominence_frac * float(y.max())
    return [
        Mode(float(x[p]), float(y[p]), pr)
        for p, pr in zip(peaks, prom)
        if pr >= cutoff and pr > 0
    ]
