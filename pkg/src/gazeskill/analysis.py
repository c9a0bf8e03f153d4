"""Per-session analysis blocks and cohort-level tests, assembled into reports.

Everything here is a pure function of its inputs, so a report can be
recomputed from the files it names and compared number for number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import anova
from .density import DEFAULT_BANDS, Bands, FixationClass, classify_fixation, find_modes, kde, sheather_jones_bandwidth
from .durations import _values, describe, vincentiles
from .errors import InsufficientDataError
from .levels import SkillLevel
from .skill import FeatureConfig, SkillModel, classify, extract_features

REPORT_SCHEMA = 1
TABLE_COLUMNS = ("mean_ms", "median_ms", "sd_ms", "min_ms", "max_ms")


@dataclass(frozen=True)
class AnalysisConfig:
    bandwidth: str = "30"  # a number in ms, or "sj"
    n_bins: int = 5
    bands: Bands = DEFAULT_BANDS
    features: FeatureConfig = FeatureConfig()

    def __post_init__(self):
        if self.bandwidth != "sj":
            try:
                bw = float(self.bandwidth)
            except ValueError:
                raise ValueError(f"bandwidth must be a number or 'sj', got {self.bandwidth!r}") from None
            if not bw > 0:
                raise ValueError("bandwidth must be positive")

    def as_dict(self) -> dict:
        return {
            "bandwidth": self.bandwidth, "n_bins": self.n_bins,
            "ambient_max_ms": self.bands.ambient_max_ms, "focal_min_ms": self.bands.focal_min_ms,
        }


def clean(obj):
    """Recursively replace non-finite floats with None so the JSON is strict."""
    if isinstance(obj, dict):
        return {k: clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _bandwidth(durations: np.ndarray, config: AnalysisConfig) -> tuple[float, str]:
    if config.bandwidth == "sj":
        return sheather_jones_bandwidth(durations), "sj"
    return float(config.bandwidth), "fixed"


def analyze_session(durations: Sequence[float], subject_id: str = "", skill: SkillLevel | None = None,
                    config: AnalysisConfig = AnalysisConfig(), model: SkillModel | None = None,
                    source: str | None = None) -> dict:
    """One report block for one subject's fixation durations.

    Parts that need more data than is available are ``None`` and the reason
    is listed under ``"missing"``.
    """
    d = np.sort(_values(durations))
    block = {
        "subject_id": subject_id,
        "skill": skill.label if skill is not None else None,
        "n_fixations": int(len(d)),
        "stats": None, "vincentiles": None, "density": None, "classes": None,
        "features": None, "estimate": None, "missing": {},
    }
    if source is not None:
        block["source"] = source
    if len(d) == 0:
        block["missing"]["stats"] = "empty_distribution"
        return block
    block["stats"] = describe(d).as_dict()
    counts = {c.value: 0 for c in FixationClass}
    for v in d:
        counts[classify_fixation(float(v), config.bands).value] += 1
    block["classes"] = counts
    try:
        block["vincentiles"] = vincentiles(d, config.n_bins).as_dict()
    except InsufficientDataError as exc:
        block["missing"]["vincentiles"] = type(exc).__name__
    try:
        h, method = _bandwidth(d, config)
        est = kde(d, h)
        block["density"] = {
            "bandwidth_ms": h, "method": method, "modes": [m.as_dict() for m in find_modes(est)],
        }
    except InsufficientDataError as exc:
        block["missing"]["density"] = type(exc).__name__
    try:
        fv = extract_features(d, config.features)
        block["features"] = fv.as_dict()
    except InsufficientDataError:
        block["missing"]["features"] = "too_few_fixations"
        fv = None
    if fv is not None and model is not None:
        block["estimate"] = classify(fv, model).as_dict()
    return block


# -- cohort --------------------------------------------------------------------

def _by_group(sessions: list[dict]) -> dict[SkillLevel, list[dict]]:
    groups: dict[SkillLevel, list[dict]] = {}
    for s in sessions:
        if s.get("skill") is None or s.get("stats") is None:
            continue
        groups.setdefault(SkillLevel.parse(s["skill"]), []).append(s)
    return dict(sorted(groups.items()))


def cohort_tests(sessions: list[dict]) -> dict | None:
    """Table-style one-way ANOVA and Scheffe per column plus the Bin x Skill mixed ANOVA.

    Returns ``None`` unless at least two skill groups are present. Tests that
    cannot be computed (too few subjects, zero variance) are ``None``.
    """
    groups = _by_group(sessions)
    if len(groups) < 2:
        return None
    names = [lv.label for lv in groups]
    out = {"groups": {lv.label: len(v) for lv, v in groups.items()}, "means": {}, "anova": {}, "scheffe": {}}
    for col in TABLE_COLUMNS:
        values = [[s["stats"][col] for s in members if s["stats"][col] is not None] for members in groups.values()]
        out["means"][col] = {n: (math.fsum(v) / len(v) if v else None) for n, v in zip(names, values)}
        try:
            out["anova"][col] = anova.one_way_anova(values).as_dict()
            out["scheffe"][col] = anova.scheffe_posthoc(values, names=names).as_dict()
        except InsufficientDataError:
            out["anova"][col] = None
            out["scheffe"][col] = None
    profiles, labels = [], []
    for lv, members in groups.items():
        for s in members:
            if s["vincentiles"] is not None:
                profiles.append(s["vincentiles"]["bin_means_ms"])
                labels.append(lv.label)
    out["vincentile_means"] = {
        n: np.mean([p for p, l in zip(profiles, labels) if l == n], axis=0).tolist()
        for n in names if n in labels
    }
    try:
        n_within = len(profiles[0]) if profiles else 0
        out["mixed_anova"] = anova.mixed_anova(profiles, labels, n_within=n_within).as_dict() if profiles else None
    except InsufficientDataError:
        out["mixed_anova"] = None
    return out


def build_report(sessions: list[dict], config: AnalysisConfig = AnalysisConfig(), inputs: Sequence[str] = ()) -> dict:
    doc = {
        "schema": REPORT_SCHEMA,
        "config": config.as_dict(),
        "inputs": list(inputs),
        "sessions": sessions,
        "cohort": cohort_tests(sessions),
    }
    return clean(doc)
