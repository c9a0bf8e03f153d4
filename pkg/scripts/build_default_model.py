"""Regenerate src/gazeskill/data/default_model.json from simulated sessions.

The shipped model is fitted on 20 simulated 8-minute sessions per skill
level (master seed 2024) using the built-in profiles.

    python3 scripts/build_default_model.py
"""

import sys
import warnings
from pathlib import Path

from gazeskill import simgaze
from gazeskill.detect import detect_fixations, durations_of
from gazeskill.levels import SkillLevel
from gazeskill.skill import extract_features, fit

SEED = 2024
PER_CLASS = 20


def main() -> int:
    profiles = {lv: simgaze.builtin_profile(lv.label) for lv in SkillLevel}
    cohort = simgaze.gen_cohort(profiles, {lv: PER_CLASS for lv in SkillLevel}, SEED)
    labeled = [(extract_features(durations_of(detect_fixations(s.recording))), s.label) for s in cohort]
    with warnings.catch_warnings():
        warnings.simplefilter("always")
        model = fit(labeled)
    out = Path(__file__).resolve().parent.parent / "src" / "gazeskill" / "data" / "default_model.json"
    out.write_text(model.to_json())
    print(f"wrote {out} ({len(model.feature_names)} features)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
