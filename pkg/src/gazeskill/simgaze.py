"""Synthetic gaze sessions with planted fixations (ground truth).

A session alternates fixations and saccades. Fixation durations come from a
mixture of (optionally truncated) lognormal or gamma components; gaze during
a fixation is the fixation centre plus isotropic Gaussian jitter, and
saccades follow a minimum-jerk path between centres. Every sample gets the
same jitter, so tracker noise is present during saccades too.

Subject seeds for a cohort are derived from
``SeedSequence([master_seed, group_index, subject_index])``, so adding
subjects to one group never changes the sessions of another.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import InvalidProfile
from .gazeio import GazeRecording
from .levels import SkillLevel

FAMILIES = ("lognormal", "gamma")


@dataclass(frozen=True)
class Component:
    """One mixture component over fixation durations (ms).

    ``lognormal`` uses ``median_ms`` and ``sigma`` (log-scale sd); ``gamma``
    uses ``shape`` and ``scale_ms``. ``lo_ms``/``hi_ms`` truncate the
    component.
    """

    weight: float
    family: str = "lognormal"
    median_ms: float = 0.0
    sigma: float = 0.0
    shape: float = 0.0
    scale_ms: float = 0.0
    lo_ms: float = 0.0
    hi_ms: float = math.inf

    def frozen_dist(self, scale: float = 1.0):
        if self.family == "lognormal":
            return stats.lognorm(s=self.sigma, scale=self.median_ms * scale)
        return stats.gamma(a=self.shape, scale=self.scale_ms * scale)

    def validate(self):
        if self.family not in FAMILIES:
            raise InvalidProfile(f"unknown family {self.family!r}")
        if not self.weight > 0:
            raise InvalidProfile("component weights must be positive")
        if self.family == "lognormal" and not (self.median_ms > 0 and self.sigma > 0):
            raise InvalidProfile("lognormal needs positive median_ms and sigma")
        if self.family == "gamma" and not (self.shape > 0 and self.scale_ms > 0):
            raise InvalidProfile("gamma needs positive shape and scale_ms")
        if not (0 <= self.lo_ms < self.hi_ms):
            raise InvalidProfile("truncation needs 0 <= lo_ms < hi_ms")

    def to_json(self) -> dict:
        d = {"weight": self.weight, "family": self.family}
        if self.family == "lognormal":
            d.update(median_ms=self.median_ms, sigma=self.sigma)
        else:
            d.update(shape=self.shape, scale_ms=self.scale_ms)
        if self.lo_ms > 0:
            d["lo_ms"] = self.lo_ms
        if math.isfinite(self.hi_ms):
            d["hi_ms"] = self.hi_ms
        return d


@dataclass(frozen=True)
class SimProfile:
    duration_mixture: tuple[Component, ...]
    jitter_sd_px: float = 5.0
    saccade_ms: tuple[float, float] = (20.0, 30.0)
    saccade_amp_px: tuple[float, float] = (100.0, 400.0)
    rate_hz: float = 30.0
    session_s: float = 480.0
    seed: int = 0
    # per-subject log-scale sd of a multiplicative duration factor (cohorts only)
    subject_scale_sd: float = 0.0
    dropout_prob: float = 0.0
    screen_px: tuple[int, int] = (1920, 1080)
    name: str = ""

    def validate(self) -> None:
        if not self.duration_mixture:
            raise InvalidProfile("mixture needs at least one component")
        for c in self.duration_mixture:
            c.validate()
        total = sum(c.weight for c in self.duration_mixture)
        if abs(total - 1.0) > 1e-9:
            raise InvalidProfile(f"mixture weights sum to {total}, not 1")
        lo, hi = self.saccade_ms
        alo, ahi = self.saccade_amp_px
        if not (0 < lo <= hi) or not (0 < alo <= ahi):
            raise InvalidProfile("saccade ranges must be positive and ordered")
        if not (self.jitter_sd_px >= 0 and self.rate_hz > 0 and self.session_s > 0):
            raise InvalidProfile("jitter must be >= 0; rate and session length positive")
        if not (self.subject_scale_sd >= 0 and 0 <= self.dropout_prob < 1):
            raise InvalidProfile("subject_scale_sd must be >= 0 and dropout_prob in [0, 1)")
        w, h = self.screen_px
        if w <= 2 * 50 or h <= 2 * 50:
            raise InvalidProfile("screen too small")

    def scaled(self, factor: float) -> "SimProfile":
        """Multiply every component's location by ``factor``; truncation bounds stay."""
        comps = []
        for c in self.duration_mixture:
            if c.family == "lognormal":
                comps.append(replace(c, median_ms=c.median_ms * factor))
            else:
                comps.append(replace(c, scale_ms=c.scale_ms * factor))
        return replace(self, duration_mixture=tuple(comps))

    # -- mixture distribution --------------------------------------------------

    def _bounds(self):
        out = []
        for c in self.duration_mixture:
            dist = c.frozen_dist()
            out.append((c, dist, dist.cdf(c.lo_ms), dist.cdf(c.hi_ms)))
        return out

    def duration_cdf(self, x):
        """CDF of the (truncated) duration mixture."""
        x = np.asarray(x, float)
        total = np.zeros_like(x)
        for c, dist, flo, fhi in self._bounds():
            part = (np.clip(dist.cdf(x), flo, fhi) - flo) / (fhi - flo)
            total += c.weight * part
        return total

    def sample_durations(self, rng: np.random.Generator, n: int) -> np.ndarray:
        comps = self._bounds()
        weights = np.array([c.weight for c, *_ in comps])
        which = rng.choice(len(comps), size=n, p=weights / weights.sum())
        u = rng.random(n)
        out = np.empty(n)
        for k, (c, dist, flo, fhi) in enumerate(comps):
            sel = which == k
            out[sel] = dist.ppf(flo + u[sel] * (fhi - flo))
        return out

    # -- serialization ---------------------------------------------------------

    def to_json(self) -> dict:
        d = asdict(self)
        d["duration_mixture"] = [c.to_json() for c in self.duration_mixture]
        d["saccade_ms"] = list(self.saccade_ms)
        d["saccade_amp_px"] = list(self.saccade_amp_px)
        d["screen_px"] = list(self.screen_px)
        return d

    @classmethod
    def from_json(cls, doc: dict) -> "SimProfile":
        try:
            comps = tuple(Component(**c) for c in doc["duration_mixture"])
            kw = {k: v for k, v in doc.items() if k != "duration_mixture"}
            for key in ("saccade_ms", "saccade_amp_px", "screen_px"):
                if key in kw:
                    kw[key] = tuple(kw[key])
            prof = cls(duration_mixture=comps, **kw)
        except (KeyError, TypeError) as exc:
            raise InvalidProfile(f"bad profile document: {exc}") from None
        prof.validate()
        return prof


@dataclass(frozen=True)
class PlantedFixation:
    onset_ms: float
    offset_ms: float
    cx_px: float
    cy_px: float

    @property
    def duration_ms(self) -> float:
        return self.offset_ms - self.onset_ms


@dataclass(frozen=True)
class GroundTruth:
    fixations: tuple[PlantedFixation, ...]

    def durations(self) -> np.ndarray:
        return np.array([f.duration_ms for f in self.fixations])


# -- built-in profiles -------------------------------------------------------------

def _lognormal(weight, median_ms, sigma, lo_ms=50.0, hi_ms=math.inf) -> Component:
    return Component(weight, "lognormal", median_ms=median_ms, sigma=sigma, lo_ms=lo_ms, hi_ms=hi_ms)


# Fitted by scripts/calibrate_profiles.py against per-subject describe()
# output of detected fixations from 30 Hz, 8-minute sessions. Detection at
# 30 Hz shortens fixations by about one sample period, so planted durations
# sit above the target ones.
BUILTIN_PROFILES: dict[str, SimProfile] = {
    "low": SimProfile(
        (_lognormal(1.0, 270.0, 0.42, lo_ms=90.0, hi_ms=520.0),),
        subject_scale_sd=0.11, name="low",
    ),
    "high": SimProfile(
        (_lognormal(0.44, 160.0, 0.16), _lognormal(0.44, 300.0, 0.18), _lognormal(0.12, 580.0, 0.40)),
        subject_scale_sd=0.11, name="high",
    ),
    "pro": SimProfile(
        (_lognormal(0.47, 130.0, 0.14), _lognormal(0.41, 340.0, 0.18), _lognormal(0.12, 580.0, 0.34)),
        subject_scale_sd=0.09, name="pro",
    ),
}


def builtin_profile(name: str) -> SimProfile:
    try:
        return BUILTIN_PROFILES[name]
    except KeyError:
        raise InvalidProfile(f"unknown profile {name!r}; built-ins are {sorted(BUILTIN_PROFILES)}") from None


def load_profiles(text: str) -> dict[str, SimProfile]:
    """Profiles file: ``{"profiles": {"name": {...profile...}, ...}}``."""
    try:
        doc = json.loads(text)
        items = doc["profiles"].items()
    except (json.JSONDecodeError, KeyError, AttributeError, TypeError) as exc:
        raise InvalidProfile(f"bad profiles file: {exc}") from None
    return {name: SimProfile.from_json({**body, "name": name}) for name, body in items}


def dump_profiles(profiles: dict[str, SimProfile]) -> str:
    body = {name: {k: v for k, v in p.to_json().items() if k != "name"} for name, p in profiles.items()}
    return json.dumps({"profiles": body}, indent=2) + "\n"


# -- generation ------------------------------------------------------------------

def _min_jerk(s):
    return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)


def _next_center(rng, center, amp_range, screen, margin=50.0):
    w, h = screen
    amp = rng.uniform(*amp_range)
    for _ in range(32):
        ang = rng.uniform(0.0, 2.0 * math.pi)
        nx, ny = center[0] + amp * math.cos(ang), center[1] + amp * math.sin(ang)
        if margin <= nx <= w - margin and margin <= ny <= h - margin:
            return nx, ny
    # no direction fits: head for the screen centre instead
    dx, dy = w / 2.0 - center[0], h / 2.0 - center[1]
    norm = math.hypot(dx, dy) or 1.0
    step = min(amp, norm)
    return center[0] + dx / norm * step, center[1] + dy / norm * step


def gen_session(profile: SimProfile, subject_id: str = "", skill: SkillLevel | None = None):
    """Generate one session; returns ``(GazeRecording, GroundTruth)``."""
    profile.validate()
    rng = np.random.default_rng(profile.seed)
    session_ms = profile.session_s * 1000.0
    w, h = profile.screen_px
    center = (rng.uniform(100.0, w - 100.0), rng.uniform(100.0, h - 100.0))

    planted = []
    sacc = []  # (start, end, from_center, to_center)
    t = 0.0
    batch = iter(())
    while t < session_ms:
        try:
            dur = next(batch)
        except StopIteration:
            batch = iter(profile.sample_durations(rng, 256).tolist())
            dur = next(batch)
        planted.append(PlantedFixation(t, t + dur, center[0], center[1]))
        t += dur
        if t >= session_ms:
            break
        nxt = _next_center(rng, center, profile.saccade_amp_px, profile.screen_px)
        sd = rng.uniform(*profile.saccade_ms)
        sacc.append((t, t + sd, center, nxt))
        center = nxt
        t += sd

    period = 1000.0 / profile.rate_hz
    end_ms = planted[-1].offset_ms
    n = int(math.floor(end_ms / period)) + 1
    times = np.arange(n) * period
    times = times[times <= end_ms]

    xs = np.empty(len(times))
    ys = np.empty(len(times))
    on = np.array([f.onset_ms for f in planted])
    idx = np.searchsorted(on, times, side="right") - 1
    cx = np.array([f.cx_px for f in planted])
    cy = np.array([f.cy_px for f in planted])
    xs[:] = cx[idx]
    ys[:] = cy[idx]
    if sacc:
        s_on = np.array([s[0] for s in sacc])
        s_off = np.array([s[1] for s in sacc])
        k = np.searchsorted(s_on, times, side="right") - 1
        inside = (k >= 0) & (times < s_off[np.maximum(k, 0)])
        for i in np.flatnonzero(inside):
            s0, s1, (x0, y0), (x1, y1) = sacc[k[i]]
            f = _min_jerk((times[i] - s0) / (s1 - s0))
            xs[i] = x0 + (x1 - x0) * f
            ys[i] = y0 + (y1 - y0) * f
    noise = rng.normal(0.0, profile.jitter_sd_px, size=(len(times), 2))
    xs += noise[:, 0]
    ys += noise[:, 1]
    valid = np.ones(len(times), bool)
    if profile.dropout_prob > 0:
        valid = rng.random(len(times)) >= profile.dropout_prob
        xs[~valid] = np.nan
        ys[~valid] = np.nan

    rec = GazeRecording(
        times, xs, ys, valid, subject_id=subject_id, skill_label=skill,
        nominal_rate_hz=profile.rate_hz, screen_w_px=w, screen_h_px=h,
    )
    return rec, GroundTruth(tuple(planted))


@dataclass(frozen=True)
class SimSession:
    label: SkillLevel
    subject_id: str
    recording: GazeRecording
    truth: GroundTruth
    profile: SimProfile = field(repr=False)


def subject_seed(master_seed: int, group_index: int, subject_index: int) -> int:
    seq = np.random.SeedSequence([int(master_seed), int(group_index), int(subject_index)])
    return int(seq.generate_state(1, np.uint64)[0])


def gen_cohort(group_profiles: dict, n_subjects: dict, seed: int,
               order: Sequence[SkillLevel] = tuple(SkillLevel), **overrides) -> list[SimSession]:
    """Simulate labelled subjects for each group, in skill order.

    ``overrides`` replace profile fields (e.g. ``session_s``) for every subject.
    """
    sessions = []
    for level in order:
        n = int(n_subjects.get(level, 0))
        if n <= 0:
            continue
        base = group_profiles[level]
        if overrides:
            base = replace(base, **overrides)
        base.validate()
        for i in range(n):
            s = subject_seed(seed, int(level), i)
            prof = base
            if base.subject_scale_sd > 0:
                factor = math.exp(np.random.default_rng([s, 1]).normal(0.0, base.subject_scale_sd))
                prof = base.scaled(factor)
            prof = replace(prof, seed=s)
            sid = f"{level.label}-{seed}-{i:02d}"
            rec, truth = gen_session(prof, subject_id=sid, skill=level)
            sessions.append(SimSession(level, sid, rec, truth, prof))
    return sessions
