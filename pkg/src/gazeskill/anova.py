"""One-way ANOVA, Scheffe post-hoc comparisons and split-plot (mixed) ANOVA."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from .errors import DegenerateData, TooFewGroups, UnbalancedWithinFactor
from .fdist import f_isf, f_sf

# sums of squares below this fraction of the total are treated as exact zeros
_ZERO_SS = 1e-12


@dataclass(frozen=True)
class AnovaResult:
    f_value: float
    df_between: int
    df_within: int
    p_value: float
    ss_between: float = field(default=float("nan"), compare=False)
    ss_within: float = field(default=float("nan"), compare=False)

    @property
    def ms_within(self) -> float:
        return self.ss_within / self.df_within

    def as_dict(self) -> dict:
        return {"f": self.f_value, "df": [self.df_between, self.df_within], "p": self.p_value}


@dataclass(frozen=True)
class PairComparison:
    group_a: str
    group_b: str
    mean_diff: float
    critical_diff: float
    significant: bool

    def as_dict(self) -> dict:
        return {
            "a": self.group_a, "b": self.group_b, "mean_diff": self.mean_diff,
            "critical_diff": self.critical_diff, "significant": self.significant,
        }


@dataclass(frozen=True)
class ScheffeResult:
    pairs: tuple[PairComparison, ...]
    alpha: float

    def pair(self, a: str, b: str) -> PairComparison:
        for p in self.pairs:
            if {p.group_a, p.group_b} == {a, b}:
                return p
        raise KeyError((a, b))

    def as_dict(self) -> dict:
        return {"alpha": self.alpha, "pairs": [p.as_dict() for p in self.pairs]}


@dataclass(frozen=True)
class MixedAnovaResult:
    interaction_f: float
    df_interaction: int
    df_error: int
    p_value: float
    between_f: float
    df_between: tuple[int, int]
    between_p: float
    within_f: float
    df_within: tuple[int, int]
    within_p: float
    ss: dict = field(default_factory=dict, compare=False)

    def as_dict(self) -> dict:
        return {
            "interaction": {"f": self.interaction_f, "df": [self.df_interaction, self.df_error], "p": self.p_value},
            "between": {"f": self.between_f, "df": list(self.df_between), "p": self.between_p},
            "within": {"f": self.within_f, "df": list(self.df_within), "p": self.within_p},
        }


def _ratio(ss_num, df_num, ss_den, df_den, scale, strict=True):
    """F ratio with exact-zero handling; a zero numerator wins over a zero denominator."""
    if ss_num <= _ZERO_SS * scale:
        return 0.0, 1.0
    if ss_den <= _ZERO_SS * scale:
        if strict:
            raise DegenerateData("error variance is zero")
        return math.inf, 0.0
    f = (ss_num / df_num) / (ss_den / df_den)
    return f, f_sf(f, df_num, df_den)


def _check_groups(groups):
    arrs = [np.asarray(g, dtype=float) for g in groups]
    if len(arrs) < 2:
        raise TooFewGroups("need at least two groups")
    if any(len(a) < 2 for a in arrs):
        raise TooFewGroups("every group needs at least two observations")
    return arrs


def one_way_anova(groups: Sequence[Sequence[float]]) -> AnovaResult:
    arrs = _check_groups(groups)
    k = len(arrs)
    n_total = sum(len(a) for a in arrs)
    grand = math.fsum(math.fsum(a) for a in arrs) / n_total
    means = [math.fsum(a) / len(a) for a in arrs]
    ss_between = math.fsum(len(a) * (m - grand) ** 2 for a, m in zip(arrs, means))
    ss_within = math.fsum(math.fsum((a - m) ** 2) for a, m in zip(arrs, means))
    df_b, df_w = k - 1, n_total - k
    if ss_within <= 0.0 or ss_within <= _ZERO_SS * (ss_within + ss_between):
        raise DegenerateData("within-group variance is zero")
    if ss_between <= _ZERO_SS * (ss_within + ss_between):
        f, p = 0.0, 1.0
    else:
        f = (ss_between / df_b) / (ss_within / df_w)
        p = f_sf(f, df_b, df_w)
    return AnovaResult(f, df_b, df_w, p, ss_between, ss_within)


def scheffe_posthoc(groups: Sequence[Sequence[float]], alpha: float = 0.05, names: Sequence[str] | None = None) -> ScheffeResult:
    """All pairwise Scheffe contrasts.

    A pair is significant when diff^2 / (MSW (1/na + 1/nb)) exceeds
    (k - 1) * F_crit(alpha; k - 1, N - k).
    """
    arrs = _check_groups(groups)
    names = list(names) if names is not None else [str(i) for i in range(len(arrs))]
    omnibus = one_way_anova(arrs)
    k = len(arrs)
    f_crit = f_isf(alpha, omnibus.df_between, omnibus.df_within)
    msw = omnibus.ms_within
    means = [math.fsum(a) / len(a) for a in arrs]
    pairs = []
    for i, j in combinations(range(k), 2):
        diff = means[i] - means[j]
        se2 = msw * (1.0 / len(arrs[i]) + 1.0 / len(arrs[j]))
        stat = diff * diff / se2
        critical = math.sqrt((k - 1) * f_crit * se2)
        pairs.append(PairComparison(names[i], names[j], diff, critical, bool(stat > (k - 1) * f_crit)))
    return ScheffeResult(tuple(pairs), alpha)


def mixed_anova(profiles: Sequence[Sequence[float]], groups: Sequence, n_within: int = 5) -> MixedAnovaResult:
    """Split-plot ANOVA: one between-subjects factor, one within factor.

    ``profiles[i]`` holds subject i's values at each within level (bins);
    ``groups[i]`` is that subject's between-subjects label. No sphericity
    correction is applied.
    """
    if len(profiles) != len(groups):
        raise ValueError("one group label per subject is required")
    for i, p in enumerate(profiles):
        if len(p) != n_within:
            raise UnbalancedWithinFactor(f"subject {i} has {len(p)} values, expected {n_within}")
    y = np.asarray(profiles, dtype=float).reshape(len(profiles), n_within)
    labels = list(groups)
    levels = list(dict.fromkeys(labels))
    g = len(levels)
    if g < 2:
        raise TooFewGroups("need at least two groups")
    members = {lv: [i for i, lab in enumerate(labels) if lab == lv] for lv in levels}
    if any(len(m) < 2 for m in members.values()):
        raise TooFewGroups("every group needs at least two subjects")
    n_subj, b = y.shape

    grand = math.fsum(y.ravel()) / y.size
    subj_means = y.mean(axis=1)
    bin_means = y.mean(axis=0)
    ss_total = math.fsum(((y - grand) ** 2).ravel())
    ss_subjects = b * math.fsum((subj_means - grand) ** 2)
    ss_group = 0.0
    ss_cells = 0.0
    for lv in levels:
        rows = y[members[lv]]
        ng = len(rows)
        ss_group += b * ng * (rows.mean() - grand) ** 2
        ss_cells += ng * math.fsum((rows.mean(axis=0) - grand) ** 2)
    ss_subj_within_group = ss_subjects - ss_group
    ss_bin = n_subj * math.fsum((bin_means - grand) ** 2)
    ss_interaction = ss_cells - ss_group - ss_bin
    ss_error = ss_total - ss_subjects - ss_bin - ss_interaction

    df_group, df_sw = g - 1, n_subj - g
    df_bin, df_int, df_err = b - 1, (g - 1) * (b - 1), (n_subj - g) * (b - 1)
    scale = max(ss_total, 1e-300)
    f_int, p_int = _ratio(max(ss_interaction, 0.0), df_int, max(ss_error, 0.0), df_err, scale)
    f_bin, p_bin = _ratio(max(ss_bin, 0.0), df_bin, max(ss_error, 0.0), df_err, scale, strict=False)
    f_grp, p_grp = _ratio(max(ss_group, 0.0), df_group, max(ss_subj_within_group, 0.0), df_sw, scale, strict=False)
    return MixedAnovaResult(
        f_int, df_int, df_err, p_int,
        f_grp, (df_group, df_sw), p_grp,
        f_bin, (df_bin, df_err), p_bin,
        ss={
            "group": ss_group, "subjects_within_group": ss_subj_within_group, "bin": ss_bin,
            "interaction": ss_interaction, "error": ss_error, "total": ss_total,
        },
    )
