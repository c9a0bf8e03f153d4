from fractions import Fraction as Fr

import numpy as np
import pytest

from gazeskill.anova import mixed_anova, one_way_anova, scheffe_posthoc
from gazeskill.errors import DegenerateData, TooFewGroups, UnbalancedWithinFactor
from gazeskill.fdist import f_sf


def test_identical_groups_give_zero_f():
    r = one_way_anova([[1, 2, 3]] * 3)
    assert r.f_value == 0.0 and r.p_value == 1.0
    assert (r.df_between, r.df_within) == (2, 6)


def test_two_group_hand_table():
    r = one_way_anova([[1, 2], [5, 6]])
    # grand mean 3.5; SSb = 4*(2^2) = 16; SSw = 4*0.25 = 1
    assert r.ss_between == pytest.approx(16.0, abs=1e-10)
    assert r.ss_within == pytest.approx(1.0, abs=1e-10)
    assert r.f_value == pytest.approx(32.0, abs=1e-10)
    assert (r.df_between, r.df_within) == (1, 2)
    assert r.p_value == pytest.approx(f_sf(32.0, 1, 2), abs=1e-15)


def test_unequal_groups_against_fraction_table():
    groups = [[3, 5, 4, 8], [9, 7, 11], [2, 1, 4, 3, 5]]
    fg = [[Fr(v) for v in g] for g in groups]
    n = sum(len(g) for g in fg)
    grand = sum(sum(g) for g in fg) / n
    means = [sum(g) / len(g) for g in fg]
    ssb = sum(len(g) * (m - grand) ** 2 for g, m in zip(fg, means))
    ssw = sum((v - m) ** 2 for g, m in zip(fg, means) for v in g)
    r = one_way_anova(groups)
    assert r.ss_between == pytest.approx(float(ssb), abs=1e-10)
    assert r.ss_within == pytest.approx(float(ssw), abs=1e-10)
    assert r.f_value == pytest.approx(float((ssb / 2) / (ssw / (n - 3))), abs=1e-10)


def test_shift_and_scale_invariance():
    rng = np.random.default_rng(1)
    groups = [rng.normal(m, 3, size=n) for m, n in ((10, 6), (12, 8), (15, 5))]
    base = one_way_anova(groups)
    moved = one_way_anova([g * 7.5 - 300 for g in groups])
    assert moved.f_value == pytest.approx(base.f_value, rel=1e-10)
    assert moved.p_value == pytest.approx(base.p_value, rel=1e-10)


def test_degenerate_and_too_few():
    with pytest.raises(DegenerateData):
        one_way_anova([[2, 2], [5, 5]])
    with pytest.raises(TooFewGroups):
        one_way_anova([[1, 2, 3]])
    with pytest.raises(TooFewGroups):
        one_way_anova([[1, 2, 3], [4]])


def test_scheffe_flags_the_outlying_group():
    groups = [[10, 11, 9, 10, 12], [11, 10, 12, 9, 10], [20, 21, 19, 22, 20]]
    res = scheffe_posthoc(groups, names=["a", "b", "c"])
    assert not res.pair("a", "b").significant
    assert res.pair("a", "c").significant
    assert res.pair("b", "c").significant


def test_scheffe_identical_groups_none_significant():
    res = scheffe_posthoc([[1, 2, 3, 4]] * 3)
    assert not any(p.significant for p in res.pairs)


def test_scheffe_critical_difference_formula():
    groups = [[1, 2, 3], [2, 4, 6, 8], [5, 6, 7]]
    res = scheffe_posthoc(groups, alpha=0.05, names=["x", "y", "z"])
    omni = one_way_anova(groups)
    from gazeskill.fdist import f_isf
    crit = f_isf(0.05, 2, omni.df_within)
    p = res.pair("x", "y")
    expected = np.sqrt(2 * crit * omni.ms_within * (1 / 3 + 1 / 4))
    assert p.critical_diff == pytest.approx(expected, rel=1e-12)
    assert p.mean_diff == pytest.approx(2.0 - 5.0)


def test_scheffe_coherent_with_omnibus():
    rng = np.random.default_rng(77)
    for _ in range(200):
        groups = [rng.normal(rng.uniform(0, 2), 1, size=rng.integers(2, 13)) for _ in range(3)]
        omni = one_way_anova(groups)
        res = scheffe_posthoc(groups)
        if omni.p_value >= 0.05:
            assert not any(p.significant for p in res.pairs)


# -- mixed -------------------------------------------------------------------

def _mixed_oracle(profiles, labels):
    """Direct definitions of the interaction and error sums of squares in exact arithmetic."""
    y = [[Fr(v) for v in row] for row in profiles]
    b = len(y[0])
    levels = list(dict.fromkeys(labels))
    grand = sum(sum(r) for r in y) / (len(y) * b)
    bin_mean = [sum(r[j] for r in y) / len(y) for j in range(b)]
    rows = {lv: [y[i] for i, l in enumerate(labels) if l == lv] for lv in levels}
    g_mean = {lv: sum(sum(r) for r in rs) / (len(rs) * b) for lv, rs in rows.items()}
    cell = {lv: [sum(r[j] for r in rs) / len(rs) for j in range(b)] for lv, rs in rows.items()}
    ss_int = sum(len(rows[lv]) * (cell[lv][j] - g_mean[lv] - bin_mean[j] + grand) ** 2
                 for lv in levels for j in range(b))
    ss_err = Fr(0)
    ss_sw = Fr(0)
    for lv in levels:
        for r in rows[lv]:
            sm = sum(r) / b
            ss_sw += b * (sm - g_mean[lv]) ** 2
            for j in range(b):
                ss_err += (r[j] - sm - cell[lv][j] + g_mean[lv]) ** 2
    ss_group = sum(len(rows[lv]) * b * (g_mean[lv] - grand) ** 2 for lv in levels)
    ss_bin = len(y) * sum((m - grand) ** 2 for m in bin_mean)
    return {"interaction": ss_int, "error": ss_err, "subjects_within_group": ss_sw,
            "group": ss_group, "bin": ss_bin}


def test_mixed_2x2x3_hand_table():
    profiles = [[1, 4, 6], [2, 3, 8], [5, 5, 2], [7, 4, 3]]
    labels = ["a", "a", "b", "b"]
    oracle = _mixed_oracle(profiles, labels)
    r = mixed_anova(profiles, labels, n_within=3)
    for key, val in oracle.items():
        assert r.ss[key] == pytest.approx(float(val), abs=1e-10), key
    assert (r.df_interaction, r.df_error) == (2, 4)
    f = (oracle["interaction"] / 2) / (oracle["error"] / 4)
    assert r.interaction_f == pytest.approx(float(f), abs=1e-10)


def test_mixed_random_3_groups_against_oracle():
    rng = np.random.default_rng(9)
    profiles = rng.integers(50, 400, size=(9, 5)).tolist()
    labels = ["low"] * 4 + ["high"] * 3 + ["pro"] * 2
    oracle = _mixed_oracle(profiles, labels)
    r = mixed_anova(profiles, labels)
    for key, val in oracle.items():
        assert r.ss[key] == pytest.approx(float(val), rel=1e-10, abs=1e-10), key


def test_mixed_parallel_profiles_have_no_interaction():
    base = np.array([100.0, 150, 200, 260, 400])
    rng = np.random.default_rng(3)
    profiles = [base + rng.normal(0, 40) for _ in range(21)]
    labels = ["low"] * 10 + ["high"] * 7 + ["pro"] * 4
    # add per-subject noise that is not parallel so the error term is nonzero
    profiles = [p + rng.normal(0, 5, size=5) for p in profiles]
    r = mixed_anova(profiles, labels)
    assert (r.df_interaction, r.df_error) == (8, 72)
    exact = [base + k for k in range(21)]
    exact[0] = exact[0] + np.array([1.0, -1, 0, 0, 0])
    exact[10] = exact[10] + np.array([-1.0, 1, 0, 0, 0])
    exact[1] = exact[1] + np.array([-1.0, 1, 0, 0, 0])
    exact[11] = exact[11] + np.array([1.0, -1, 0, 0, 0])
    r2 = mixed_anova(exact, labels)
    assert r2.interaction_f == 0.0 and r2.p_value == 1.0


def test_mixed_unbalanced_and_groups():
    with pytest.raises(UnbalancedWithinFactor):
        mixed_anova([[1, 2, 3], [1, 2]], ["a", "b"], n_within=3)
    with pytest.raises(TooFewGroups):
        mixed_anova([[1, 2], [2, 3]], ["a", "a"], n_within=2)
    with pytest.raises(TooFewGroups):
        mixed_anova([[1, 2], [2, 3], [3, 5]], ["a", "a", "b"], n_within=2)
