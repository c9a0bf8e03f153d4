"""Score a set of simulator profiles against the group-level targets.

For each master seed a (10, 7, 4) low/high/pro cohort is simulated at 30 Hz,
fixations are detected, and the per-subject statistics are put through the
same tests the acceptance suite uses. The built-in profiles were chosen by
iterating on a profiles JSON with this script until every rate cleared its
target with some margin.

    python3 scripts/calibrate_profiles.py --seeds 20 [--profiles my.json]
"""

import argparse
import sys

import numpy as np

from gazeskill import simgaze
from gazeskill.anova import mixed_anova, one_way_anova, scheffe_posthoc
from gazeskill.density import find_modes, kde
from gazeskill.detect import detect_fixations
from gazeskill.durations import describe, pct_over, vincentiles
from gazeskill.errors import InsufficientDataError
from gazeskill.levels import SkillLevel

DESIGN = {SkillLevel.LOW: 10, SkillLevel.HIGH: 7, SkillLevel.PRO: 4}


def score_seed(profiles, seed):
    cohort = simgaze.gen_cohort(profiles, DESIGN, seed)
    per = {lv: [] for lv in SkillLevel}
    for s in cohort:
        per[s.label].append(np.array([f.duration_ms for f in detect_fixations(s.recording)]))
    stats = {lv: [describe(d) for d in per[lv]] for lv in SkillLevel}
    row = {}
    for col in ("mean_ms", "median_ms", "sd_ms"):
        groups = [[getattr(x, col) for x in stats[lv]] for lv in SkillLevel]
        try:
            row[col] = one_way_anova(groups).p_value
        except InsufficientDataError:
            row[col] = float("nan")
        row[col + "_means"] = [float(np.mean(g)) for g in groups]
    sch = scheffe_posthoc([[x.sd_ms for x in stats[lv]] for lv in SkillLevel], names=["low", "high", "pro"])
    row["scheffe"] = [sch.pair(a, b).significant for a, b in (("low", "high"), ("low", "pro"), ("high", "pro"))]
    vin = {lv: [vincentiles(d).bin_means_ms for d in per[lv]] for lv in SkillLevel}
    low_v, pro_v = np.mean(vin[SkillLevel.LOW], axis=0), np.mean(vin[SkillLevel.PRO], axis=0)
    row["crossing"] = bool(pro_v[0] < low_v[0] and pro_v[-1] > low_v[-1])
    labels = [lv for lv in SkillLevel for _ in vin[lv]]
    row["mixed_p"] = mixed_anova([v for lv in SkillLevel for v in vin[lv]], labels).p_value
    pro_pool, low_pool = np.concatenate(per[SkillLevel.PRO]), np.concatenate(per[SkillLevel.LOW])
    pro_modes = [m.location_ms for m in find_modes(kde(pro_pool, 30))]
    row["pro_modes_ok"] = len(pro_modes) == 2 and abs(pro_modes[0] - 100) <= 25 and abs(pro_modes[1] - 300) <= 50
    row["low_unimodal"] = len(find_modes(kde(low_pool, 30))) == 1
    row["tails_ok"] = pct_over(pro_pool, 500) > 0.02 and pct_over(low_pool, 500) < 0.01
    return row


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--profiles", default=None)
    args = ap.parse_args(argv)
    profiles = {lv: simgaze.builtin_profile(lv.label) for lv in SkillLevel}
    if args.profiles:
        with open(args.profiles) as fh:
            loaded = simgaze.load_profiles(fh.read())
        profiles.update({SkillLevel.parse(k): v for k, v in loaded.items()})
    rows = []
    for seed in range(args.seeds):
        r = score_seed(profiles, seed)
        rows.append(r)
        print(f"seed {seed:2d}: p(sd)={r['sd_ms']:.2g} p(mean)={r['mean_ms']:.2f} p(median)={r['median_ms']:.2f} "
              f"sd means={[round(v) for v in r['sd_ms_means']]} scheffe={r['scheffe']}", flush=True)
    n = len(rows)

    def rate(pred):
        return sum(bool(pred(r)) for r in rows) / n

    print(f"sd p<.01          {rate(lambda r: r['sd_ms'] < 0.01):.2f}  (target >= 0.90)")
    print(f"mean n.s.         {rate(lambda r: r['mean_ms'] > 0.05):.2f}  (target >= 0.80)")
    print(f"median n.s.       {rate(lambda r: r['median_ms'] > 0.05):.2f}  (target >= 0.80)")
    print(f"scheffe low-high  {rate(lambda r: r['scheffe'][0]):.2f}  (target > 0.50)")
    print(f"scheffe low-pro   {rate(lambda r: r['scheffe'][1]):.2f}  (target > 0.50)")
    print(f"scheffe high-pro  {rate(lambda r: r['scheffe'][2]):.2f}  (target < 0.50)")
    print(f"crossing          {rate(lambda r: r['crossing']):.2f}  (target >= 0.90)")
    print(f"mixed p<.001      {rate(lambda r: r['mixed_p'] < 0.001):.2f}  (target >= 0.90)")
    print(f"pro modes         {rate(lambda r: r['pro_modes_ok']):.2f}")
    print(f"low unimodal      {rate(lambda r: r['low_unimodal']):.2f}")
    print(f"tails             {rate(lambda r: r['tails_ok']):.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
