"""Distribution-shape features and a nearest-centroid skill classifier.

Means and medians are deliberately left out of the feature set: they do not
separate skill groups. What does is the spread of the distribution, its
extremes, the location of its modes, the share of very long fixations and
the Vincentile profile.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .density import DEFAULT_BANDWIDTH_MS, find_modes, kde
from .durations import _values, describe, pct_over, vincentiles
from .errors import InsufficientTraining, ModelFeatureMismatch, TooFewFixations, ZeroVarianceFeature
from .levels import SkillLevel

MODEL_SCHEMA = 1
FEATURE_NAMES = (
    "sd_ms", "min_ms", "max_ms", "mode_count", "primary_mode_ms", "secondary_mode_ms",
    "pct_over_500", "vin1_ms", "vin2_ms", "vin3_ms", "vin4_ms", "vin5_ms",
)


@dataclass(frozen=True)
class FeatureConfig:
    bandwidth_ms: float = DEFAULT_BANDWIDTH_MS
    tail_ms: float = 500.0
    n_bins: int = 5
    min_fixations: int = 20


@dataclass(frozen=True)
class FeatureVector:
    sd_ms: float
    min_ms: float
    max_ms: float
    mode_count: int
    primary_mode_ms: float
    secondary_mode_ms: float
    pct_over_500: float
    vincentile_means: tuple[float, ...]

    def as_dict(self) -> dict:
        """Flat mapping in :data:`FEATURE_NAMES` order."""
        return dict(zip(FEATURE_NAMES, self.as_array().tolist()))

    def as_array(self) -> np.ndarray:
        return np.array([
            self.sd_ms, self.min_ms, self.max_ms, float(self.mode_count), self.primary_mode_ms,
            self.secondary_mode_ms, self.pct_over_500, *self.vincentile_means,
        ], dtype=float)

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureVector":
        try:
            vin = tuple(float(d[f"vin{i}_ms"]) for i in range(1, 6))
            return cls(float(d["sd_ms"]), float(d["min_ms"]), float(d["max_ms"]), int(d["mode_count"]),
                       float(d["primary_mode_ms"]), float(d["secondary_mode_ms"]),
                       float(d["pct_over_500"]), vin)
        except KeyError as exc:
            raise ModelFeatureMismatch(f"missing feature {exc}") from None


def extract_features(dist, config: FeatureConfig = FeatureConfig()) -> FeatureVector:
    d = _values(dist)
    if len(d) < config.min_fixations:
        raise TooFewFixations(f"need at least {config.min_fixations} fixations, got {len(d)}")
    st = describe(d)
    modes = find_modes(kde(d, config.bandwidth_ms))
    # the two most prominent modes, reported in order of location
    top = sorted(modes, key=lambda m: (-m.prominence, m.location_ms))[:2]
    locs = sorted(m.location_ms for m in top)
    primary = locs[0]
    secondary = locs[1] if len(locs) > 1 else primary
    vin = vincentiles(d, config.n_bins).bin_means_ms
    return FeatureVector(st.sd_ms, st.min_ms, st.max_ms, max(len(modes), 1), primary, secondary,
                         pct_over(d, config.tail_ms), tuple(vin))


# -- model ---------------------------------------------------------------------

@dataclass(frozen=True)
class SkillModel:
    feature_names: tuple[str, ...]
    means: tuple[float, ...]
    sds: tuple[float, ...]
    labels: tuple[SkillLevel, ...]
    centroids: tuple[tuple[float, ...], ...]

    def standardize(self, features) -> np.ndarray:
        row = _feature_row(features, self.feature_names)
        return (row - np.asarray(self.means)) / np.asarray(self.sds)

    def to_json(self) -> str:
        doc = {
            "schema": MODEL_SCHEMA,
            "feature_names": list(self.feature_names),
            "means": list(self.means),
            "sds": list(self.sds),
            "centroids": {lv.label: list(c) for lv, c in zip(self.labels, self.centroids)},
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SkillModel":
        try:
            doc = json.loads(text)
            if doc.get("schema") != MODEL_SCHEMA:
                raise ModelFeatureMismatch(f"unsupported model schema {doc.get('schema')!r}")
            names = tuple(doc["feature_names"])
            labels = sorted(SkillLevel.parse(k) for k in doc["centroids"])
            cents = tuple(tuple(float(v) for v in doc["centroids"][lv.label]) for lv in labels)
            model = cls(names, tuple(map(float, doc["means"])), tuple(map(float, doc["sds"])),
                        tuple(labels), cents)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ModelFeatureMismatch):
                raise
            raise ModelFeatureMismatch(f"bad model file: {exc}") from None
        unknown = set(names) - set(FEATURE_NAMES)
        if unknown or any(len(c) != len(names) for c in cents) or len(model.means) != len(names) \
                or len(model.sds) != len(names) or not all(s > 0 for s in model.sds):
            raise ModelFeatureMismatch("model file is internally inconsistent")
        return model


def _feature_row(features, names: Sequence[str]) -> np.ndarray:
    if isinstance(features, FeatureVector):
        d = features.as_dict()
    else:
        d = dict(features)
    missing = [n for n in names if n not in d]
    if missing:
        raise ModelFeatureMismatch(f"features missing from input: {missing}")
    return np.array([float(d[n]) for n in names])


def fit(labeled: Iterable[tuple[object, SkillLevel]]) -> SkillModel:
    """Z-score the training features and take each class's mean as its centroid.

    ``labeled`` yields ``(features, level)`` pairs where features is a
    :class:`FeatureVector` or a name -> value mapping. Features with zero
    spread in the training set are dropped with a :class:`ZeroVarianceFeature`
    warning.
    """
    pairs = [(_feature_row(f, FEATURE_NAMES), SkillLevel(lv)) for f, lv in labeled]
    counts = {}
    for _, lv in pairs:
        counts[lv] = counts.get(lv, 0) + 1
    if len(counts) < 2:
        raise InsufficientTraining("need at least two classes")
    if any(c < 2 for c in counts.values()):
        raise InsufficientTraining("need at least two sessions per class")
    x = np.vstack([row for row, _ in pairs])
    if not np.all(np.isfinite(x)):
        raise InsufficientTraining("training features must be finite")
    means = x.mean(axis=0)
    sds = x.std(axis=0, ddof=1)
    keep = sds > 1e-12 * np.maximum(1.0, np.abs(means))
    for name, k in zip(FEATURE_NAMES, keep):
        if not k:
            warnings.warn(f"feature {name} has zero variance in training data; dropped", ZeroVarianceFeature,
                          stacklevel=2)
    if not keep.any():
        raise InsufficientTraining("every feature has zero variance")
    names = tuple(n for n, k in zip(FEATURE_NAMES, keep) if k)
    z = (x[:, keep] - means[keep]) / sds[keep]
    labels = tuple(sorted(counts))
    cents = []
    for lv in labels:
        rows = z[[i for i, (_, l) in enumerate(pairs) if l == lv]]
        cents.append(tuple(float(v) for v in rows.mean(axis=0)))
    return SkillModel(names, tuple(float(v) for v in means[keep]), tuple(float(v) for v in sds[keep]),
                      labels, tuple(cents))


@dataclass(frozen=True)
class Classification:
    skill: SkillLevel
    scores: dict
    distances: dict

    def as_dict(self) -> dict:
        return {
            "skill": self.skill.label,
            "scores": {lv.label: s for lv, s in self.scores.items()},
            "distances": {lv.label: d for lv, d in self.distances.items()},
        }


# distances this close (relative) count as a tie
_TIE_RTOL = 1e-12


def classify(features, model: SkillModel) -> Classification:
    """Nearest centroid in standardized space; scores are a softmin of distances.

    Ties go to the lower skill level.
    """
    z = model.standardize(features)
    dists = [math.sqrt(math.fsum((z - np.asarray(c)) ** 2)) for c in model.centroids]
    best = min(dists)
    chosen = min(lv for lv, d in zip(model.labels, dists) if d - best <= _TIE_RTOL * max(best, 1.0))
    w = [math.exp(best - d) for d in dists]
    total = math.fsum(w)
    scores = {lv: wi / total for lv, wi in zip(model.labels, w)}
    return Classification(chosen, scores, dict(zip(model.labels, dists)))
