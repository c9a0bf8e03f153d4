"""Command-line entry point: ``gazeskill <command> [options]``.

Exit codes: 0 success, 2 bad input, 3 not enough data, 4 network failure.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import simgaze
from .analysis import AnalysisConfig, analyze_session, build_report, TABLE_COLUMNS
from .density import Bands, classify_fixation, find_modes, kde, sheather_jones_bandwidth
from .detect import DetectorConfig, detect_fixations, estimate_velocity_threshold
from .errors import GazeSkillError, InputError, InsufficientDataError
from .gazeio import (fmt_num, parse_fixation_csv, parse_gaze_csv, read_report_json, write_fixation_csv,
                     write_gaze_csv, write_report_json)
from .levels import SkillLevel
from .plotting import density_svg, density_table, vincentile_svg, vincentile_table
from .skill import SkillModel, classify, extract_features, fit
from .stream import GazeServer

log = logging.getLogger("gazeskill")

EXIT_INPUT, EXIT_DATA, EXIT_NETWORK = 2, 3, 4


class NetworkError(Exception):
    pass


def _read_text(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from None


def _write_text(path: str | Path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def default_model() -> SkillModel:
    return SkillModel.from_json(resources.files("gazeskill").joinpath("data/default_model.json").read_text())


def _load_model(path: str | None) -> SkillModel:
    return default_model() if path is None else SkillModel.from_json(_read_text(path))


# -- extract ---------------------------------------------------------------------

def _detector_config(args) -> DetectorConfig:
    try:
        return DetectorConfig(
            min_fixation_ms=args.min_fix_ms, max_interpolate_gap_ms=args.max_gap_ms,
            merge_gap_ms=args.merge_gap_ms, merge_dist_px=args.merge_dist_px,
            fallback_velocity_px_per_s=args.fallback_velocity, smoothing=args.smoothing,
            velocity_threshold_px_per_s=args.velocity_threshold,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None


def cmd_extract(args) -> int:
    rec = parse_gaze_csv(_read_text(args.input), header_policy=args.header_policy)
    if rec.dropped_rows:
        log.warning("dropped %d malformed or out-of-order rows", rec.dropped_rows)
    if args.rate is not None:
        if not args.rate > 0:
            raise InputError("--rate must be positive")
        rec = replace(rec, nominal_rate_hz=args.rate)
    cfg = _detector_config(args)
    bands = _bands(args)
    threshold = cfg.velocity_threshold_px_per_s or estimate_velocity_threshold(rec, cfg)
    fixations = detect_fixations(rec, replace(cfg, velocity_threshold_px_per_s=threshold))
    meta = [("subject_id", rec.subject_id)]
    if rec.skill_label is not None:
        meta.append(("skill", rec.skill_label.label))
    meta += [("rate_hz", fmt_num(rec.nominal_rate_hz)), ("threshold_px_per_s", fmt_num(threshold))]
    classes = [classify_fixation(f.duration_ms, bands) for f in fixations]
    _write_text(args.out, write_fixation_csv(fixations, classes, meta))
    log.info("%s: %d fixations, threshold %.1f px/s", args.input, len(fixations), threshold)
    return 0


# -- analyze / compare / report ---------------------------------------------------

def _bands(args) -> Bands:
    return Bands(args.ambient_max_ms, args.focal_min_ms)


def _analysis_config(args) -> AnalysisConfig:
    try:
        return AnalysisConfig(bandwidth=args.bandwidth, n_bins=args.bins, bands=_bands(args))
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _load_fixation_file(path: str):
    ff = parse_fixation_csv(_read_text(path))
    durations = [f.duration_ms for f in ff.fixations]
    if any(not d > 0 for d in durations):
        raise InputError(f"{path}: fixation durations must be positive")
    try:
        skill = ff.skill_label
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    return durations, ff.subject_id or Path(path).stem, skill


def analyze_files(paths, config: AnalysisConfig, model: SkillModel | None = None, jobs: int = 1) -> dict:
    """Report for fixation files; files are processed in sorted path order."""
    paths = sorted(paths)

    def one(path):
        durations, sid, skill = _load_fixation_file(path)
        return analyze_session(durations, sid, skill, config, model, source=path)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        sessions = list(pool.map(one, paths))
    return build_report(sessions, config, inputs=paths)


def _group_durations(paths) -> dict[str, list[np.ndarray]]:
    groups: dict[str, list[np.ndarray]] = {}
    for path in sorted(paths):
        durations, sid, skill = _load_fixation_file(path)
        groups.setdefault(skill.label if skill is not None else sid, []).append(np.asarray(durations))
    order = {lv.label: int(lv) for lv in SkillLevel}
    return dict(sorted(groups.items(), key=lambda kv: (order.get(kv[0], 99), kv[0])))


def write_figures(report: dict, outdir: str) -> list[str]:
    """Density and Vincentile SVGs plus their CSV tables and the group summary table."""
    paths = report["inputs"]
    cfg = report["config"]
    groups = _group_durations(paths)
    pooled = {name: np.concatenate(v) for name, v in groups.items() if sum(len(a) for a in v)}
    curves, modes = {}, {}
    bandwidth = None
    if pooled:
        top = max(float(d.max()) for d in pooled.values())
        if cfg["bandwidth"] == "sj":
            bws = {n: sheather_jones_bandwidth(d) if len(d) >= 10 else 30.0 for n, d in pooled.items()}
        else:
            bws = {n: float(cfg["bandwidth"]) for n in pooled}
        bandwidth = None if cfg["bandwidth"] == "sj" else float(cfg["bandwidth"])
        grid = np.arange(0.0, np.ceil(top + 5.0 * max(bws.values())) + 1.0, 1.0)
        for name, d in pooled.items():
            est = kde(d, bws[name], grid)
            curves[name] = (grid, est.density)
            modes[name] = [m.location_ms for m in find_modes(est)]
    profiles = {}
    cohort = report.get("cohort")
    if cohort and cohort.get("vincentile_means"):
        profiles = cohort["vincentile_means"]
    else:
        for s in report["sessions"]:
            if s.get("vincentiles"):
                profiles[s["subject_id"]] = s["vincentiles"]["bin_means_ms"]
    out = Path(outdir)
    written = {
        "density.svg": density_svg(curves, bandwidth, modes),
        "density.csv": density_table(curves),
        "vincentiles.svg": vincentile_svg(profiles),
        "vincentiles.csv": vincentile_table(profiles),
        "group_table.csv": group_table_csv(report),
    }
    for name, text in written.items():
        _write_text(out / name, text)
    return [str(out / n) for n in written]


def _cell(v) -> str:
    return "" if v is None else fmt_num(v)


def group_table_csv(report: dict) -> str:
    """Group means of the descriptive columns, then the F and p rows."""
    lines = ["group," + ",".join(TABLE_COLUMNS)]
    cohort = report.get("cohort")
    if cohort is None:
        for s in report["sessions"]:
            st = s.get("stats") or {}
            lines.append(",".join([s["subject_id"]] + [_cell(st.get(c)) for c in TABLE_COLUMNS]))
        return "\n".join(lines) + "\n"
    for g in cohort["groups"]:
        lines.append(",".join([g] + [_cell(cohort["means"][c][g]) for c in TABLE_COLUMNS]))
    an = cohort["anova"]
    lines.append(",".join(["F"] + [_cell(an[c]["f"]) if an[c] else "" for c in TABLE_COLUMNS]))
    lines.append(",".join(["p"] + [_cell(an[c]["p"]) if an[c] else "" for c in TABLE_COLUMNS]))
    return "\n".join(lines) + "\n"


def cmd_analyze(args) -> int:
    cfg = _analysis_config(args)
    model = _load_model(args.model) if args.model or args.classify else None
    report = analyze_files(args.fixations, cfg, model, jobs=args.jobs)
    _write_text(args.out, write_report_json(report))
    if args.svg:
        for path in write_figures(report, args.svg):
            log.info("wrote %s", path)
    return 0


def cmd_report(args) -> int:
    """Re-analyze a report's inputs, check the numbers still agree, and render figures."""
    old = read_report_json(_read_text(args.input))
    c = old["config"]
    cfg = AnalysisConfig(bandwidth=c["bandwidth"], n_bins=c["n_bins"],
                         bands=Bands(c["ambient_max_ms"], c["focal_min_ms"]))
    new = analyze_files(old["inputs"], cfg, None)
    stale = [s["subject_id"] for s, t in zip(old["sessions"], new["sessions"])
             if {k: v for k, v in s.items() if k != "estimate"} != {k: v for k, v in t.items() if k != "estimate"}]
    if len(old["sessions"]) != len(new["sessions"]) or stale:
        log.warning("report no longer matches its inputs: %s", ", ".join(stale) or "session count changed")
    for path in write_figures(new, args.outdir):
        log.info("wrote %s", path)
    return 0


def cmd_compare(args) -> int:
    cfg = _analysis_config(args)
    report = analyze_files(args.fixations, cfg)
    if report["cohort"] is None:
        raise InsufficientDataError("compare needs fixation files from at least two skill groups")
    text = group_table_csv(report)
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


# -- simulate / fit / classify ---------------------------------------------------

def cmd_simulate(args) -> int:
    profiles = dict(simgaze.BUILTIN_PROFILES)
    if args.profiles:
        profiles.update(simgaze.load_profiles(_read_text(args.profiles)))
    names = args.profile or ["low", "high", "pro"]
    counts = args.subjects or [1]
    if len(counts) == 1:
        counts = counts * len(names)
    if len(counts) != len(names):
        raise InputError("give one --subjects value, or one per --profile")
    group_profiles, n_subjects = {}, {}
    for name, n in zip(names, counts):
        try:
            level = SkillLevel.parse(name)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        if name not in profiles:
            raise InputError(f"no profile named {name!r}")
        if n < 0:
            raise InputError("--subjects must be >= 0")
        group_profiles[level] = profiles[name]
        n_subjects[level] = n
    overrides = {}
    if args.rate is not None:
        overrides["rate_hz"] = args.rate
    if args.session_s is not None:
        overrides["session_s"] = args.session_s
    try:
        cohort = simgaze.gen_cohort(group_profiles, n_subjects, args.seed, **overrides)
    except (ValueError, TypeError) as exc:
        raise InputError(str(exc)) from None
    out = Path(args.outdir)
    for s in cohort:
        _write_text(out / f"{s.subject_id}.csv", write_gaze_csv(s.recording))
        rows = ["onset_ms,offset_ms,cx_px,cy_px"] + [
            ",".join(fmt_num(v) for v in (f.onset_ms, f.offset_ms, f.cx_px, f.cy_px)) for f in s.truth.fixations
        ]
        _write_text(out / f"{s.subject_id}.truth.csv", "\n".join(rows) + "\n")
    log.info("wrote %d sessions to %s", len(cohort), out)
    return 0


def cmd_fit(args) -> int:
    labeled = []
    for path in sorted(args.fixations):
        durations, sid, skill = _load_fixation_file(path)
        if skill is None:
            raise InputError(f"{path}: no #skill= label; fit needs labelled sessions")
        labeled.append((extract_features(durations), skill))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        model = fit(labeled)
    for w in caught:
        log.warning("%s", w.message)
    _write_text(args.out, model.to_json())
    return 0


def cmd_classify(args) -> int:
    model = _load_model(args.model)
    durations, sid, _ = _load_fixation_file(args.fixations)
    result = classify(extract_features(durations), model)
    sys.stdout.write(json.dumps({"subject_id": sid, **result.as_dict()}, indent=2) + "\n")
    return 0


# -- serve -----------------------------------------------------------------------

def _parse_listen(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise InputError(f"--listen expects host:port, got {text!r}")
    return host.strip("[]") or "127.0.0.1", int(port)


def cmd_serve(args) -> int:
    host, port = _parse_listen(args.listen)
    model = _load_model(args.model)
    cfg = _detector_config(args)
    server = GazeServer(model, cfg, _analysis_config(args), reestimate=not args.no_reestimate,
                        window_s=args.window_s)

    async def main():
        try:
            srv = await server.start(host, port)
        except OSError as exc:
            raise NetworkError(f"cannot listen on {host}:{port}: {exc}") from None
        addr = srv.sockets[0].getsockname()
        log.info("listening on %s:%s", addr[0], addr[1])
        if args.ready_file:
            _write_text(args.ready_file, f"{addr[1]}\n")
        async with srv:
            await srv.serve_forever()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
    return 0


# -- parser ----------------------------------------------------------------------

def _add_detector_flags(p):
    p.add_argument("--min-fix-ms", type=float, default=50.0)
    p.add_argument("--max-gap-ms", type=float, default=100.0, help="longest blink gap to interpolate")
    p.add_argument("--merge-gap-ms", type=float, default=75.0)
    p.add_argument("--merge-dist-px", type=float, default=30.0)
    p.add_argument("--fallback-velocity", type=float, default=1500.0, help="px/s when no antimode exists")
    p.add_argument("--velocity-threshold", type=float, default=None, help="fixed px/s threshold")
    p.add_argument("--smoothing", choices=("median3", "none"), default="median3")


def _add_analysis_flags(p):
    p.add_argument("--bandwidth", default="30", help="kernel bandwidth in ms, or 'sj'")
    p.add_argument("--bins", type=int, default=5)
    p.add_argument("--ambient-max-ms", type=float, default=150.0)
    p.add_argument("--focal-min-ms", type=float, default=250.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gazeskill", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="detect fixations in a gaze CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rate", type=float, default=None, help="override the declared sampling rate (Hz)")
    p.add_argument("--header-policy", choices=("strict", "lenient"), default="strict")
    p.add_argument("--ambient-max-ms", type=float, default=150.0)
    p.add_argument("--focal-min-ms", type=float, default=250.0)
    _add_detector_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("analyze", help="statistics, densities and features for fixation files")
    p.add_argument("--fixations", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--svg", default=None, metavar="DIR", help="also write figures and tables here")
    p.add_argument("--model", default=None, help="skill model JSON (implies --classify)")
    p.add_argument("--classify", action="store_true", help="add skill estimates using the default model")
    p.add_argument("--jobs", type=int, default=1)
    _add_analysis_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("compare", help="group table with one-way ANOVA per column")
    p.add_argument("--fixations", nargs="+", required=True)
    p.add_argument("--out", default=None)
    _add_analysis_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="render figures and tables from a report JSON")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("simulate", help="write simulated gaze sessions")
    p.add_argument("--profile", action="append", help="low, high or pro (repeatable)")
    p.add_argument("--subjects", type=int, action="append", help="subjects per profile")
    p.add_argument("--profiles", default=None, help="JSON file overriding built-in profiles")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rate", type=float, default=None)
    p.add_argument("--session-s", type=float, default=None)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a skill model on labelled fixation files")
    p.add_argument("--fixations", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("classify", help="print the skill estimate for one fixation file")
    p.add_argument("--fixations", required=True)
    p.add_argument("--model", default=None)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("serve", help="run the streaming service")
    p.add_argument("--listen", default="127.0.0.1:7878")
    p.add_argument("--model", default=None)
    p.add_argument("--no-reestimate", action="store_true", help="classify with a fixed threshold")
    p.add_argument("--window-s", type=float, default=None, help="rolling feature window (default: whole session)")
    p.add_argument("--ready-file", default=None, help=argparse.SUPPRESS)
    _add_detector_flags(p)
    _add_analysis_flags(p)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="gazeskill: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"gazeskill: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InsufficientDataError as exc:
        print(f"gazeskill: not enough data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NetworkError as exc:
        print(f"gazeskill: network error: {exc}", file=sys.stderr)
        return EXIT_NETWORK
    except GazeSkillError as exc:
        print(f"gazeskill: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
