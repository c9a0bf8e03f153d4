"""Fixation detection with a per-subject adaptive velocity threshold.

The threshold for each recording is the antimode of a kernel density over
log10 sample-to-sample gaze speeds: fixation jitter and saccades form two
clusters of speeds and the density minimum between them separates them.
Recordings whose speed density has a single cluster fall back to a fixed
threshold.

A fixation is a run of consecutive samples joined by sub-threshold
steps; its onset and offset are the timestamps of its first and last
sample. At 30 Hz the 50 ms minimum duration therefore needs three samples,
which puts the shortest reportable fixation at about 66.7 ms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .density import DensityEstimate, find_modes, silverman_bandwidth
from .durations import DurationDistribution
from .errors import EmptyRecording, InsufficientData

MIN_SPEED_SAMPLES = 100
_LOG_GRID = 512
_LOG_BINS = 2048


@dataclass(frozen=True)
class Fixation:
    onset_ms: float
    offset_ms: float
    duration_ms: float
    cx_px: float
    cy_px: float
    dispersion_px: float
    n_samples: int


@dataclass(frozen=True)
class DetectorConfig:
    min_fixation_ms: float = 50.0
    max_interpolate_gap_ms: float = 100.0
    merge_gap_ms: float = 75.0
    merge_dist_px: float = 30.0
    fallback_velocity_px_per_s: float = 1500.0
    smoothing: str = "median3"
    # fixed threshold; None means estimate one per recording
    velocity_threshold_px_per_s: float | None = None

    def __post_init__(self):
        for name in ("min_fixation_ms", "max_interpolate_gap_ms", "merge_gap_ms", "merge_dist_px"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.fallback_velocity_px_per_s > 0:
            raise ValueError("fallback_velocity_px_per_s must be positive")
        if self.velocity_threshold_px_per_s is not None and not self.velocity_threshold_px_per_s > 0:
            raise ValueError("velocity_threshold_px_per_s must be positive")
        if self.smoothing not in ("none", "median3"):
            raise ValueError("smoothing must be 'none' or 'median3'")


@dataclass
class Segment:
    """Contiguous gap-free stretch of samples after blink interpolation."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray


# -- sample-level stages ---------------------------------------------------------

def split_and_interpolate(t, x, y, valid, max_gap_ms: float) -> list[Segment]:
    """Fill short invalid stretches linearly and split at long ones.

    Two consecutive valid samples further apart than ``max_gap_ms`` end one
    segment and start the next; invalid samples before the first or after
    the last valid sample are dropped.
    """
    t = np.asarray(t, float)
    x = np.array(x, float)
    y = np.array(y, float)
    vidx = np.flatnonzero(np.asarray(valid, bool))
    if len(vidx) == 0:
        return []
    segments = []
    start = vidx[0]
    for a, b in zip(vidx[:-1], vidx[1:]):
        if t[b] - t[a] > max_gap_ms:
            segments.append((start, a))
            start = b
        elif b > a + 1:
            frac = (t[a + 1:b] - t[a]) / (t[b] - t[a])
            x[a + 1:b] = x[a] + (x[b] - x[a]) * frac
            y[a + 1:b] = y[a] + (y[b] - y[a]) * frac
    segments.append((start, vidx[-1]))
    return [Segment(t[s:e + 1].copy(), x[s:e + 1].copy(), y[s:e + 1].copy()) for s, e in segments]


def median3(v: np.ndarray) -> np.ndarray:
    """3-point running median; the two end samples are left as they are."""
    out = np.array(v, float)
    if len(v) >= 3:
        a, b, c = v[:-2], v[1:-1], v[2:]
        out[1:-1] = np.maximum(np.minimum(a, b), np.minimum(np.maximum(a, b), c))
    return out


def segment_speeds(seg: Segment, smoothing: str) -> np.ndarray:
    """Speed in px/s of each of the ``len(seg) - 1`` inter-sample steps."""
    if smoothing == "median3":
        xs, ys = median3(seg.x), median3(seg.y)
    else:
        xs, ys = seg.x, seg.y
    return np.hypot(np.diff(xs), np.diff(ys)) / (np.diff(seg.t) / 1000.0)


# -- adaptive threshold ----------------------------------------------------------

def log_speed_density(speeds: np.ndarray) -> DensityEstimate | None:
    """Binned Gaussian KDE over log10 speeds; None when the speeds do not vary.

    Exact zeros (the median filter repeats samples) carry no scale
    information and are left out.
    """
    moving = speeds[speeds > 0]
    if len(moving) < 2:
        return None
    logs = np.log10(moving)
    if not np.ptp(logs) > 0:
        return None
    h = silverman_bandwidth(logs)
    if not h > 0:
        return None
    lo, hi = float(logs.min()) - 3.0 * h, float(logs.max()) + 3.0 * h
    counts, edges = np.histogram(logs, bins=_LOG_BINS, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    keep = counts > 0
    centers, weights = centers[keep], counts[keep].astype(float)
    grid = np.linspace(lo, hi, _LOG_GRID)
    z = (grid[:, None] - centers[None, :]) / h
    dens = (np.exp(-0.5 * z * z) * weights[None, :]).sum(axis=1) / (len(logs) * h * math.sqrt(2 * math.pi))
    return DensityEstimate(grid, dens, h)


def threshold_from_speeds(speeds: np.ndarray, fallback: float) -> float:
    if len(speeds) < MIN_SPEED_SAMPLES:
        raise InsufficientData(f"need at least {MIN_SPEED_SAMPLES} speed estimates, got {len(speeds)}")
    est = log_speed_density(speeds)
    if est is None:
        return fallback
    modes = find_modes(est)
    if len(modes) < 2:
        return fallback
    top = sorted(modes, key=lambda m: m.prominence, reverse=True)[:2]
    lo, hi = sorted(m.location_ms for m in top)
    inside = (est.grid_ms >= lo) & (est.grid_ms <= hi)
    idx = np.flatnonzero(inside)
    antimode = idx[np.argmin(est.density[idx])]
    return float(10.0 ** est.grid_ms[antimode])


def _all_speeds(recording, config: DetectorConfig) -> np.ndarray:
    segs = split_and_interpolate(recording.t_ms, recording.x_px, recording.y_px, recording.valid,
                                 config.max_interpolate_gap_ms)
    parts = [segment_speeds(s, config.smoothing) for s in segs if len(s.t) >= 2]
    return np.concatenate(parts) if parts else np.empty(0)


def estimate_velocity_threshold(recording, config: DetectorConfig = DetectorConfig()) -> float:
    """Per-recording saccade/fixation speed boundary in px/s."""
    return threshold_from_speeds(_all_speeds(recording, config), config.fallback_velocity_px_per_s)


# -- grouping --------------------------------------------------------------------

def make_fixation(t, x, y, a: int, b: int) -> Fixation:
    """Fixation spanning samples a..b (inclusive) of one segment."""
    xs, ys = np.asarray(x[a:b + 1], float), np.asarray(y[a:b + 1], float)
    cx, cy = float(np.mean(xs)), float(np.mean(ys))
    disp = float(np.sqrt(np.mean((xs - cx) ** 2 + (ys - cy) ** 2)))
    onset, offset = float(t[a]), float(t[b])
    return Fixation(onset, offset, offset - onset, cx, cy, disp, b - a + 1)


def slow_runs(slow: np.ndarray) -> list[tuple[int, int]]:
    """Sample ranges (a, b) covered by maximal runs of slow steps."""
    if len(slow) == 0:
        return []
    s = np.concatenate([[False], slow, [False]]).astype(np.int8)
    edges = np.diff(s)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return [(int(i0), int(i1)) for i0, i1 in zip(starts, ends)]


def should_merge(prev: Fixation, nxt: Fixation, config: DetectorConfig) -> bool:
    return (
        nxt.onset_ms - prev.offset_ms <= config.merge_gap_ms
        and math.hypot(nxt.cx_px - prev.cx_px, nxt.cy_px - prev.cy_px) <= config.merge_dist_px
    )


def keep_fixation(f: Fixation, config: DetectorConfig) -> bool:
    return f.duration_ms >= config.min_fixation_ms and f.n_samples >= 2


def _segment_fixations(seg: Segment, threshold: float, config: DetectorConfig) -> list[Fixation]:
    if len(seg.t) < 2:
        return []
    slow = segment_speeds(seg, config.smoothing) < threshold
    out = []
    cur = None  # (a, b, fixation)
    for a, b in slow_runs(slow):
        fix = make_fixation(seg.t, seg.x, seg.y, a, b)
        if cur is not None and should_merge(cur[2], fix, config):
            a0 = cur[0]
            cur = (a0, b, make_fixation(seg.t, seg.x, seg.y, a0, b))
            continue
        if cur is not None and keep_fixation(cur[2], config):
            out.append(cur[2])
        cur = (a, b, fix)
    if cur is not None and keep_fixation(cur[2], config):
        out.append(cur[2])
    return out


def detect_fixations(recording, config: DetectorConfig = DetectorConfig()) -> list[Fixation]:
    """Segment a gaze recording into ordered, non-overlapping fixations."""
    if len(recording.t_ms) == 0 or not np.any(recording.valid):
        raise EmptyRecording("recording has no valid samples")
    segs = split_and_interpolate(recording.t_ms, recording.x_px, recording.y_px, recording.valid,
                                 config.max_interpolate_gap_ms)
    if config.velocity_threshold_px_per_s is not None:
        threshold = config.velocity_threshold_px_per_s
    else:
        speeds = [segment_speeds(s, config.smoothing) for s in segs if len(s.t) >= 2]
        threshold = threshold_from_speeds(
            np.concatenate(speeds) if speeds else np.empty(0), config.fallback_velocity_px_per_s
        )
    out = []
    for seg in segs:
        out.extend(_segment_fixations(seg, threshold, config))
    return out


def durations_of(fixations, subject_id: str = "") -> DurationDistribution:
    return DurationDistribution.of([f.duration_ms for f in fixations], subject_id)
