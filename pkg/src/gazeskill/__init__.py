"""Fixation-duration analysis and skill inference from eye-gaze recordings."""

from .detect import DetectorConfig, Fixation, detect_fixations, durations_of, estimate_velocity_threshold
from .durations import DescriptiveStats, DurationDistribution, VincentileProfile, describe, pct_over, vincentiles
from .density import Bands, DensityEstimate, FixationClass, Mode, classify_fixation, find_modes, kde, sheather_jones_bandwidth
from .anova import mixed_anova, one_way_anova, scheffe_posthoc
from .gazeio import GazeRecording, GazeSample, parse_fixation_csv, parse_gaze_csv, write_fixation_csv, write_gaze_csv
from .levels import SkillLevel
from .skill import FeatureVector, SkillModel, classify, extract_features, fit

__version__ = "0.1.0"

__all__ = [
    "Bands", "DensityEstimate", "DescriptiveStats", "DetectorConfig", "DurationDistribution", "FeatureVector",
    "Fixation", "FixationClass", "GazeRecording", "GazeSample", "Mode", "SkillLevel", "SkillModel",
    "VincentileProfile", "classify", "classify_fixation", "describe", "detect_fixations", "durations_of",
    "estimate_velocity_threshold", "extract_features", "find_modes", "fit", "kde", "mixed_anova",
    "one_way_anova", "parse_fixation_csv", "parse_gaze_csv", "pct_over", "scheffe_posthoc",
    "sheather_jones_bandwidth", "vincentiles", "write_fixation_csv", "write_gaze_csv",
]
