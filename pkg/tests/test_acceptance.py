"""Acceptance suite: one test per criterion, numbered 1 to 9.

Each test is named ``test_acceptance_<n>_<topic>``; the terminal summary
prints one PASS/FAIL line per criterion.
"""

import asyncio
import json
import math
import socket
import subprocess
import sys
import time
from dataclasses import replace
from fractions import Fraction as Fr
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate, special

from gazeskill import simgaze
from gazeskill.analysis import analyze_session, clean
from gazeskill.anova import mixed_anova, one_way_anova, scheffe_posthoc
from gazeskill.cli import main as cli_main
from gazeskill.density import find_modes, kde
from gazeskill.detect import DetectorConfig, detect_fixations, durations_of, estimate_velocity_threshold
from gazeskill.durations import describe, pct_over, vincentiles
from gazeskill.errors import InsufficientDataError
from gazeskill.fdist import f_sf
from gazeskill.gazeio import GazeRecording, parse_gaze_csv, write_gaze_csv
from gazeskill.levels import SkillLevel
from gazeskill.skill import FEATURE_NAMES, SkillModel, classify, extract_features, fit
from gazeskill.stream import StreamSession, replay

pytestmark = pytest.mark.slow

LOW, HIGH, PRO = SkillLevel.LOW, SkillLevel.HIGH, SkillLevel.PRO
DESIGN = {LOW: 10, HIGH: 7, PRO: 4}
N_SEEDS = 20


def report(n, text):
    print(f"\n[acceptance {n}] {text}")


# -- 1 -------------------------------------------------------------------------

def _recovery(rec, truth, k):
    fixes = detect_fixations(rec)
    period = 1000.0 / rec.nominal_rate_hz
    on = np.array([f.onset_ms for f in fixes])
    off = np.array([f.offset_ms for f in fixes])
    hits = 0
    for p in truth.fixations:
        j = np.searchsorted(on, p.onset_ms)
        hits += any(abs(on[c] - p.onset_ms) <= k * period and abs(off[c] - p.offset_ms) <= k * period
                    for c in (j - 1, j) if 0 <= c < len(on))
    return hits / len(truth.fixations)


def test_acceptance_1_fixation_recovery():
    names = ["low", "high", "pro"]
    results = {}
    for rate, k, need in ((120.0, 1, 0.95), (30.0, 2, 0.90)):
        rates, times = [], []
        for i in range(20):
            prof = replace(simgaze.builtin_profile(names[i % 3]), rate_hz=rate, session_s=600.0,
                           jitter_sd_px=5.0, seed=1000 + i)
            rec, truth = simgaze.gen_session(prof)
            t0 = time.perf_counter()
            rates.append(_recovery(rec, truth, k))
            times.append(time.perf_counter() - t0)
        results[rate] = (min(rates), max(times), need)
        report(1, f"{rate:g} Hz: worst-session recovery {min(rates):.4f} (need {need}), "
                  f"slowest detection {max(times):.3f} s")
    for worst, slowest, need in results.values():
        assert worst >= need
        assert slowest < 1.0


# -- cohorts shared by 2, 3, 4 -------------------------------------------------

@pytest.fixture(scope="module")
def cohort_rows():
    profiles = {lv: simgaze.builtin_profile(lv.label) for lv in SkillLevel}
    rows = []
    for seed in range(N_SEEDS):
        per = {lv: [] for lv in SkillLevel}
        for s in simgaze.gen_cohort(profiles, DESIGN, seed):
            per[s.label].append(durations_of(detect_fixations(s.recording)).as_array())
        rows.append(per)
    return rows


def _col(per, name):
    return [[getattr(describe(d), name) for d in per[lv]] for lv in SkillLevel]


def test_acceptance_2_table_pattern(cohort_rows):
    sd_sig = mean_ns = median_ns = 0
    pairs = {("low", "high"): 0, ("low", "pro"): 0, ("high", "pro"): 0}
    for per in cohort_rows:
        sd_sig += one_way_anova(_col(per, "sd_ms")).p_value < 0.01
        mean_ns += one_way_anova(_col(per, "mean_ms")).p_value > 0.05
        median_ns += one_way_anova(_col(per, "median_ms")).p_value > 0.05
        sch = scheffe_posthoc(_col(per, "sd_ms"), names=["low", "high", "pro"])
        for a, b in pairs:
            pairs[(a, b)] += sch.pair(a, b).significant
    n = len(cohort_rows)
    report(2, f"SD p<.01 {sd_sig}/{n}, mean n.s. {mean_ns}/{n}, median n.s. {median_ns}/{n}, "
              f"Scheffe on SD low-high {pairs[('low', 'high')]}/{n} low-pro {pairs[('low', 'pro')]}/{n} "
              f"high-pro {pairs[('high', 'pro')]}/{n}")
    assert sd_sig >= 0.9 * n
    assert mean_ns >= 0.8 * n and median_ns >= 0.8 * n
    assert pairs[("low", "high")] > n / 2 and pairs[("low", "pro")] > n / 2
    assert pairs[("high", "pro")] < n / 2


def test_acceptance_3_vincentile_crossing(cohort_rows):
    crossing = significant = 0
    dfs = set()
    for per in cohort_rows:
        vin = {lv: [vincentiles(d).bin_means_ms for d in per[lv]] for lv in SkillLevel}
        low, pro = np.mean(vin[LOW], axis=0), np.mean(vin[PRO], axis=0)
        crossing += bool(pro[0] < low[0] and pro[-1] > low[-1])
        labels = [lv for lv in SkillLevel for _ in vin[lv]]
        res = mixed_anova([v for lv in SkillLevel for v in vin[lv]], labels)
        dfs.add((res.df_interaction, res.df_error))
        significant += res.p_value < 0.001
    n = len(cohort_rows)
    report(3, f"crossing {crossing}/{n}, interaction df {sorted(dfs)}, p<.001 {significant}/{n}")
    assert dfs == {(8, 72)}
    assert crossing >= 0.9 * n and significant >= 0.9 * n


def test_acceptance_4_bimodality(cohort_rows):
    ok = {"pro_modes": 0, "low_unimodal": 0, "pro_tail": 0, "low_tail": 0}
    worst = []
    for per in cohort_rows:
        pro = np.concatenate(per[PRO])
        low = np.concatenate(per[LOW])
        modes = [m.location_ms for m in find_modes(kde(pro, 30.0))]
        good = len(modes) == 2 and abs(modes[0] - 100) <= 25 and abs(modes[1] - 300) <= 50
        ok["pro_modes"] += good
        if not good:
            worst.append(modes)
        ok["low_unimodal"] += len(find_modes(kde(low, 30.0))) == 1
        ok["pro_tail"] += pct_over(pro, 500) > 0.02
        ok["low_tail"] += pct_over(low, 500) < 0.01
    n = len(cohort_rows)
    report(4, ", ".join(f"{k} {v}/{n}" for k, v in ok.items()) + (f"; misses {worst}" if worst else ""))
    assert all(v == n for v in ok.values())


# -- 5 -------------------------------------------------------------------------

def _f_density(x, d1, d2):
    logc = 0.5 * d1 * math.log(d1) + 0.5 * d2 * math.log(d2) - special.betaln(d1 / 2, d2 / 2)
    return math.exp(logc + (d1 / 2 - 1) * math.log(x) - 0.5 * (d1 + d2) * math.log(d2 + d1 * x))


def test_acceptance_5_numeric_oracles():
    rng = np.random.default_rng(55)
    # KDE against a plain double loop
    data = rng.lognormal(np.log(250), 0.5, 1000)
    pts = rng.uniform(0, 1500, 1000)
    est = kde(data, 30.0, grid_ms=pts)
    direct = np.array([math.fsum(math.exp(-0.5 * ((p - d) / 30.0) ** 2) for d in data) for p in pts])
    direct /= len(data) * 30.0 * math.sqrt(2 * math.pi)
    mask = direct > 1e-250
    kde_err = float(np.max(np.abs(est.density[mask] - direct[mask]) / direct[mask]))

    # one-way ANOVA against exact sums of squares
    groups = [[3, 5, 4, 8, 6], [9, 7, 11, 10], [2, 1, 4, 3, 5, 2]]
    fg = [[Fr(v) for v in g] for g in groups]
    n = sum(map(len, fg))
    grand = sum(map(sum, fg)) / n
    means = [sum(g) / len(g) for g in fg]
    ssb = sum(len(g) * (m - grand) ** 2 for g, m in zip(fg, means))
    ssw = sum((v - m) ** 2 for g, m in zip(fg, means) for v in g)
    r = one_way_anova(groups)
    anova_err = max(abs(r.ss_between - float(ssb)), abs(r.ss_within - float(ssw)),
                    abs(r.f_value - float((ssb / 2) / (ssw / (n - 3)))))

    # mixed ANOVA: 2 groups x 2 subjects x 3 bins, sums of squares by their definitions
    prof = [[1, 4, 6], [2, 3, 8], [5, 5, 2], [7, 4, 3]]
    lab = ["a", "a", "b", "b"]
    y = [[Fr(v) for v in row] for row in prof]
    g_rows = {"a": y[:2], "b": y[2:]}
    gm = {k: sum(map(sum, v)) / 6 for k, v in g_rows.items()}
    bm = [sum(r[j] for r in y) / 4 for j in range(3)]
    gr = sum(map(sum, y)) / 12
    cell = {k: [sum(r[j] for r in v) / 2 for j in range(3)] for k, v in g_rows.items()}
    ss_int = sum(2 * (cell[k][j] - gm[k] - bm[j] + gr) ** 2 for k in g_rows for j in range(3))
    ss_err = sum((r[j] - sum(r) / 3 - cell[k][j] + gm[k]) ** 2 for k, v in g_rows.items() for r in v
                 for j in range(3))
    m = mixed_anova(prof, lab, n_within=3)
    mixed_err = max(abs(m.ss["interaction"] - float(ss_int)), abs(m.ss["error"] - float(ss_err)),
                    abs(m.interaction_f - float((ss_int / 2) / (ss_err / 4))))

    # F survival against quadrature of the density
    f_err = 0.0
    for _ in range(30):
        x, d1, d2 = float(rng.uniform(0.05, 8)), int(rng.integers(1, 12)), int(rng.integers(2, 90))
        lo, _ = integrate.quad(_f_density, 0, x, args=(d1, d2), epsabs=1e-14, epsrel=1e-13, limit=400)
        hi, _ = integrate.quad(_f_density, x, math.inf, args=(d1, d2), epsabs=1e-14, epsrel=1e-13, limit=400)
        ref = hi if hi < 0.5 else 1.0 - lo
        f_err = max(f_err, abs(f_sf(x, d1, d2) - ref))
    p_paper = f_sf(10.3, 8, 72)
    half = f_sf(1.0, 2, 2)
    report(5, f"kde rel err {kde_err:.2e}, one-way err {anova_err:.2e}, mixed err {mixed_err:.2e}, "
              f"f_sf err {f_err:.2e}, f_sf(10.3,8,72)={p_paper:.3g}, f_sf(1,2,2)={half!r}")
    assert kde_err <= 1e-12
    assert anova_err <= 1e-10 and mixed_err <= 1e-10
    assert f_err <= 1e-8
    assert p_paper < 0.001 and abs(half - 0.5) <= 1e-10


# -- 6 -------------------------------------------------------------------------

def test_acceptance_6_scheffe_coherence():
    rng = np.random.default_rng(606)
    counter = non_sig = 0
    for _ in range(1000):
        groups = [rng.normal(rng.uniform(0, 3), rng.uniform(0.5, 2), size=int(rng.integers(2, 13)))
                  for _ in range(3)]
        omni = one_way_anova(groups)
        if omni.p_value >= 0.05:
            non_sig += 1
            counter += any(p.significant for p in scheffe_posthoc(groups).pairs)
    report(6, f"{non_sig} omnibus-non-significant datasets of 1000, counterexamples {counter}")
    assert non_sig > 100
    assert counter == 0


# -- 7 -------------------------------------------------------------------------

def _features(seed, n):
    profiles = {lv: simgaze.builtin_profile(lv.label) for lv in SkillLevel}
    out = []
    for s in simgaze.gen_cohort(profiles, {lv: n for lv in SkillLevel}, seed):
        out.append((extract_features(durations_of(detect_fixations(s.recording))), s.label))
    return out


def test_acceptance_7_skill_inference():
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = fit(_features(7001, 20))
    test = _features(7002, 20)
    correct = sum(classify(f, model).skill is lv for f, lv in test)
    acc = correct / len(test)

    # tie rule: a point equidistant from low and high goes to low
    tie_model = SkillModel(("sd_ms",), (0.0,), (1.0,), (HIGH, LOW), ((1.0,), (-1.0,)))
    tie_ok = classify({"sd_ms": 0.0}, tie_model).skill is LOW

    # affine invariance of the scores
    rng = np.random.default_rng(3)
    a = rng.uniform(0.5, 20, 12) * rng.choice([-1, 1], 12)
    b = rng.uniform(-500, 500, 12)

    def tf(fv):
        return {k: a[i] * v + b[i] for i, (k, v) in enumerate(fv.as_dict().items())}

    train = _features(7003, 5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m1 = fit(train)
        m2 = fit([(tf(f), lv) for f, lv in train])
    affine_err = max(abs(classify(f, m1).scores[lv] - classify(tf(f), m2).scores[lv])
                     for f, _ in test[::6] for lv in SkillLevel)
    report(7, f"held-out accuracy {correct}/{len(test)} = {acc:.3f}, tie rule {'ok' if tie_ok else 'broken'}, "
              f"affine score diff {affine_err:.1e}")
    assert acc >= 0.9
    assert tie_ok
    assert affine_err <= 1e-9


# -- 8 -------------------------------------------------------------------------

def _max_diff(a, b, path="$"):
    """Largest relative difference over numeric leaves; raises on structural mismatch."""
    if isinstance(a, dict):
        assert set(a) == set(b), path
        return max([_max_diff(a[k], b[k], f"{path}.{k}") for k in a], default=0.0)
    if isinstance(a, list):
        assert len(a) == len(b), path
        return max([_max_diff(x, y, f"{path}[{i}]") for i, (x, y) in enumerate(zip(a, b))], default=0.0)
    if isinstance(a, float) and isinstance(b, (int, float)) and not isinstance(a, bool):
        return abs(a - b) / max(1.0, abs(b))
    assert a == b, (path, a, b)
    return 0.0


def _fix_rows(fixes):
    return [{"onset_ms": f.onset_ms, "offset_ms": f.offset_ms, "duration_ms": f.duration_ms, "cx_px": f.cx_px,
             "cy_px": f.cy_px, "dispersion_px": f.dispersion_px, "n_samples": f.n_samples} for f in fixes]


def test_acceptance_8_batch_stream_equivalence():
    from gazeskill.cli import default_model
    model = default_model()
    fixed_err = re_err = 0.0
    flagged = total = 0
    cases = [(name, rate, seed) for seed, (name, rate) in
             enumerate([("low", 30.0), ("high", 30.0), ("pro", 30.0), ("pro", 120.0), ("low", 60.0), ("high", 120.0)])]
    for name, rate, seed in cases:
        prof = replace(simgaze.builtin_profile(name), rate_hz=rate, session_s=180.0, seed=800 + seed,
                       dropout_prob=0.02 if seed % 2 else 0.0)
        rec, _ = simgaze.gen_session(prof, subject_id=f"{name}-{seed}")
        cfg = DetectorConfig(velocity_threshold_px_per_s=estimate_velocity_threshold(rec))
        batch = detect_fixations(rec, cfg)
        rep = replay(StreamSession(rec.subject_id, rate, cfg, model=model, reestimate=False), rec)
        expect = clean(analyze_session(durations_of(batch), subject_id=rec.subject_id, model=model))
        fixed_err = max(fixed_err, _max_diff(rep["session"], expect),
                        _max_diff([{k: v for k, v in r.items() if k != "flagged"} for r in rep["fixations"]],
                                  clean(_fix_rows(batch))))
        # adaptive threshold, re-estimated while streaming
        full = detect_fixations(rec)
        rep2 = replay(StreamSession(rec.subject_id, rate, model=model, reestimate=True), rec)
        re_err = max(re_err, _max_diff(rep2["reanalysis"],
                                       clean(analyze_session(durations_of(full), subject_id=rec.subject_id,
                                                             model=model))))
        by_onset = {round(f.onset_ms, 6): f for f in full}
        for row in rep2["fixations"]:
            total += 1
            if row["flagged"]:
                flagged += 1
                continue
            f = by_onset[round(row["onset_ms"], 6)]
            re_err = max(re_err, _max_diff({k: v for k, v in row.items() if k != "flagged"}, clean(_fix_rows([f]))[0]))
    report(8, f"fixed threshold max diff {fixed_err:.1e} over {len(cases)} sessions; re-estimation: "
              f"unflagged max diff {re_err:.1e}, flagged {flagged}/{total}")
    assert fixed_err <= 1e-12
    assert re_err <= 1e-9


# -- 9 -------------------------------------------------------------------------

def _random_recording(rng):
    n = int(rng.integers(1, 300))
    t = np.cumsum(rng.uniform(0.5, 40, n)) + rng.uniform(0, 1e5)
    t = np.unique(t)
    n = len(t)
    valid = rng.random(n) > rng.uniform(0, 0.3)
    x = np.where(valid, rng.normal(960, 400, n), np.nan)
    y = np.where(valid, rng.normal(540, 300, n), np.nan)
    if rng.random() < 0.3:
        x = np.where(valid, np.round(x), np.nan)
    skill = [None, *SkillLevel][int(rng.integers(0, 4))]
    extra = {f"k{i}": f"v {rng.integers(0, 99)}" for i in range(int(rng.integers(0, 3)))}
    return GazeRecording(t, x, y, valid, subject_id=f"s{rng.integers(0, 1000)}", skill_label=skill,
                         nominal_rate_hz=float(rng.choice([30.0, 60.0, 120.0, 29.97, 250.0])),
                         screen_w_px=int(rng.integers(640, 4000)), screen_h_px=int(rng.integers(480, 3000)),
                         extra_meta=extra)


def _tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _cli_run(root: Path, capsys) -> dict:
    """Run every command once under ``root``; returns all outputs by name."""
    out = {}

    def run(name, *argv):
        code = cli_main([str(a) for a in argv])
        assert code == 0, (name, code)
        out[name + ".stdout"] = capsys.readouterr().out.encode()

    sim, fx, fig = root / "sim", root / "fx", root / "fig"
    run("simulate", "simulate", "--profile", "low", "--profile", "high", "--profile", "pro", "--subjects", 2,
        "--seed", 9, "--session-s", 90, "--outdir", sim)
    fx.mkdir()
    for csv in sorted(sim.glob("*.csv")):
        if not csv.name.endswith(".truth.csv"):
            run("extract", "extract", "--in", csv, "--out", fx / csv.name)
    files = sorted(fx.glob("*.csv"))
    run("analyze", "analyze", "--fixations", *files, "--out", root / "report.json", "--svg", fig, "--classify")
    run("compare", "compare", "--fixations", *files)
    run("report", "report", "--in", root / "report.json", "--outdir", root / "rep")
    run("fit", "fit", "--fixations", *files, "--out", root / "model.json")
    run("classify", "classify", "--fixations", files[0], "--model", root / "model.json")
    out["serve"] = _serve_transcript(sim / sorted(p.name for p in sim.glob("pro-*.csv") if "truth" not in p.name)[0])
    for name, data in _tree_bytes(root).items():
        out[name] = data
    return out


def _serve_transcript(gaze_csv: Path) -> bytes:
    rec = parse_gaze_csv(gaze_csv.read_text())
    # kept outside the compared tree: it holds the ephemeral port
    ready = gaze_csv.parent.parent.parent / f"ready-{gaze_csv.parent.parent.name}"
    proc = subprocess.Popen([sys.executable, "-m", "gazeskill.cli", "serve", "--listen", "127.0.0.1:0",
                             "--ready-file", str(ready)])
    try:
        for _ in range(400):
            if ready.exists() and ready.read_text().strip():
                break
            time.sleep(0.05)
        port = int(ready.read_text())
        msgs = [{"type": "start", "session_id": rec.subject_id, "rate_hz": rec.nominal_rate_hz}]
        for t, x, y, v in zip(rec.t_ms.tolist(), rec.x_px.tolist(), rec.y_px.tolist(), rec.valid.tolist()):
            msgs.append({"type": "sample", "t_ms": t, "x_px": x, "y_px": y, "valid": v} if v
                        else {"type": "sample", "t_ms": t, "valid": False})
        msgs += [{"type": "query"}, {"type": "end"}]
        with socket.create_connection(("127.0.0.1", port), timeout=60) as conn:
            f = conn.makefile("rwb")
            f.write(b"".join(json.dumps(m).encode() + b"\n" for m in msgs))
            f.flush()
            return f.readline() + f.readline()
    finally:
        proc.terminate()
        proc.wait(10)


def test_acceptance_9_round_trip_and_determinism(tmp_path, capsys):
    rng = np.random.default_rng(909)
    mismatches = 0
    for _ in range(500):
        rec = _random_recording(rng)
        text = write_gaze_csv(rec)
        back = parse_gaze_csv(text)
        mismatches += not (back == rec and write_gaze_csv(back) == text)
    a = _cli_run(tmp_path / "a", capsys)
    b = _cli_run(tmp_path / "b", capsys)
    # absolute paths appear in the report; compare after normalizing the run directory
    def norm(d, root):
        return {k: v.replace(str(root).encode(), b"<root>") for k, v in d.items()}
    a, b = norm(a, tmp_path / "a"), norm(b, tmp_path / "b")
    differing = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    commands = sorted({k.split(".")[0] for k in a if k.endswith(".stdout")} | {"serve"})
    report(9, f"round-trip mismatches {mismatches}/500; compared {len(a)} outputs of {commands}; "
              f"differing {differing or 'none'}")
    assert mismatches == 0
    assert not differing
    assert json.loads(a["serve"].splitlines()[1])["type"] == "report"
