"""Live gaze ingestion: an incremental fixation detector and a TCP service.

The detector reproduces the batch pipeline sample by sample. A step (the
move between two consecutive samples) is classified once its smoothed
speed can no longer change, and a fixation is finalized as soon as the
fast stretch after it is longer than the merge gap, so no later fixation
can be merged into it. With a fixed threshold the finalized fixations are
exactly those of the batch detector.

When the threshold is adaptive it is estimated from all speeds seen so far
after each further 30 s of data and applies only to steps classified
afterwards. Finalized fixations are never revisited; the end-of-session
report flags any that differ from a full-session batch re-analysis.

Wire protocol: one JSON object per ``\\n``-terminated UTF-8 line, each with
a ``type`` field (``start``, ``sample``, ``query``, ``end``). Protocol
errors are answered with ``{"type": "error", "code": ...}``; a line that is
not valid JSON gets one error line and the connection is closed.
"""

from __future__ import annotations

import asyncio
import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .analysis import AnalysisConfig, analyze_session, clean
from .detect import DetectorConfig, Fixation, detect_fixations, keep_fixation, make_fixation, should_merge, threshold_from_speeds
from .errors import InsufficientData
from .gazeio import GazeRecording
from .skill import SkillModel, classify, extract_features

log = logging.getLogger(__name__)

REESTIMATE_EVERY_MS = 30_000.0
MAX_LINE_BYTES = 1 << 20


class _Seg:
    """Samples of one gap-free segment, interpolated where needed."""

    def __init__(self):
        self.t: list[float] = []
        self.x: list[float] = []
        self.y: list[float] = []
        self.steps_done = 0  # steps whose speed has been emitted
        self.closed = False


def _med3(a, b, c):
    return np.maximum(np.minimum(a, b), np.minimum(np.maximum(a, b), c))


class OnlineDetector:
    """Incremental detector; feed samples with :meth:`push`, then :meth:`finish`.

    ``reestimate=False`` classifies with ``config.velocity_threshold_px_per_s``
    (or the fallback when that is unset) from the first sample.
    """

    def __init__(self, config: DetectorConfig = DetectorConfig(), reestimate: bool = True,
                 every_ms: float = REESTIMATE_EVERY_MS):
        self.config = config
        self.reestimate = reestimate
        self.every_ms = every_ms
        self.threshold: float | None = None
        if not reestimate:
            self.threshold = config.velocity_threshold_px_per_s or config.fallback_velocity_px_per_s
        self.thresholds: list[tuple[float, float]] = []  # (t_ms at estimate, value)
        self._speeds: list[float] = []
        self._events: list[tuple] = []  # ("step", seg, k, speed) | ("close", seg)
        self._seg: _Seg | None = None
        self._pending_invalid: list[float] = []
        self._last_t: float | None = None
        self._first_t: float | None = None
        self._next_estimate: float | None = None
        # grouping state
        self._run_start: int | None = None
        self._cur: tuple[int, int, Fixation] | None = None
        self._cur_seg: _Seg | None = None
        self._cur_thr: set[float] = set()
        self._run_thr: set[float] = set()
        self.finalized: list[Fixation] = []
        self.finalized_thresholds: list[tuple[float, ...]] = []
        self.finished = False

    # -- segmentation ----------------------------------------------------------

    def push(self, t: float, x: float, y: float, valid: bool) -> list[Fixation]:
        """Add one sample; returns fixations finalized by it."""
        if self.finished:
            raise RuntimeError("detector already finished")
        if self._last_t is not None and not t > self._last_t:
            raise ValueError("timestamps must be strictly increasing")
        self._last_t = t
        if self._first_t is None:
            self._first_t = t
            self._next_estimate = t + self.every_ms
        before = len(self.finalized)
        if valid:
            self._push_valid(float(t), float(x), float(y))
        elif self._seg is not None:
            self._pending_invalid.append(float(t))
        if self.reestimate and t >= self._next_estimate:
            self._estimate(t)
            while self._next_estimate <= t:
                self._next_estimate += self.every_ms
        self._drain()
        return self.finalized[before:]

    def _push_valid(self, t, x, y):
        seg = self._seg
        if seg is not None and t - seg.t[-1] > self.config.max_interpolate_gap_ms:
            self._close_segment()
            seg = None
        if seg is None:
            self._pending_invalid = []
            seg = self._seg = _Seg()
        elif self._pending_invalid:
            ta, xa, ya = seg.t[-1], seg.x[-1], seg.y[-1]
            ts = np.asarray(self._pending_invalid)
            frac = (ts - ta) / (t - ta)
            seg.t.extend(self._pending_invalid)
            seg.x.extend((xa + (x - xa) * frac).tolist())
            seg.y.extend((ya + (y - ya) * frac).tolist())
            self._pending_invalid = []
        seg.t.append(t)
        seg.x.append(x)
        seg.y.append(y)
        self._emit_steps(seg, final=False)

    def _close_segment(self):
        seg = self._seg
        if seg is None:
            return
        self._emit_steps(seg, final=True)
        seg.closed = True
        self._events.append(("close", seg))
        self._seg = None
        self._pending_invalid = []

    def _emit_steps(self, seg: _Seg, final: bool):
        n = len(seg.t)
        smooth = self.config.smoothing == "median3"
        # a step's smoothed endpoints are fixed once the sample after them exists
        last = n - 1 if final or not smooth else n - 2
        for k in range(seg.steps_done, last):
            speed = self._step_speed(seg, k, n if final else None)
            self._speeds.append(speed)
            self._events.append(("step", seg, k, speed))
        seg.steps_done = max(seg.steps_done, last)

    def _step_speed(self, seg: _Seg, k: int, n_final: int | None) -> float:
        if self.config.smoothing == "median3":
            xs0, ys0 = self._smoothed(seg, k, n_final)
            xs1, ys1 = self._smoothed(seg, k + 1, n_final)
        else:
            xs0, ys0 = np.float64(seg.x[k]), np.float64(seg.y[k])
            xs1, ys1 = np.float64(seg.x[k + 1]), np.float64(seg.y[k + 1])
        dt = np.float64(seg.t[k + 1]) - np.float64(seg.t[k])
        return float(np.hypot(xs1 - xs0, ys1 - ys0) / (dt / 1000.0))

    @staticmethod
    def _smoothed(seg: _Seg, j: int, n_final: int | None):
        if j == 0 or (n_final is not None and j == n_final - 1):
            return np.float64(seg.x[j]), np.float64(seg.y[j])
        x, y = np.asarray(seg.x[j - 1:j + 2]), np.asarray(seg.y[j - 1:j + 2])
        return _med3(x[0], x[1], x[2]), _med3(y[0], y[1], y[2])

    # -- threshold -------------------------------------------------------------

    def _estimate(self, t):
        try:
            thr = threshold_from_speeds(np.asarray(self._speeds), self.config.fallback_velocity_px_per_s)
        except InsufficientData:
            if self.threshold is not None:
                return
            thr = self.config.fallback_velocity_px_per_s
        self.threshold = thr
        self.thresholds.append((float(t), thr))

    # -- grouping --------------------------------------------------------------

    def _drain(self):
        if self.threshold is None:
            return
        events, self._events = self._events, []
        for ev in events:
            if ev[0] == "step":
                self._on_step(ev[1], ev[2], ev[3])
            else:
                self._on_close(ev[1])

    def _on_step(self, seg: _Seg, k: int, speed: float):
        thr = self.threshold
        if speed < thr:
            if self._run_start is None:
                self._run_start = k
                self._run_thr = set()
            self._run_thr.add(thr)
            return
        if self._run_start is not None:
            self._end_run(seg, self._run_start, k)
        # the next run can start no earlier than sample k + 1
        if self._cur is not None and seg.t[k + 1] - self._cur[2].offset_ms > self.config.merge_gap_ms:
            self._finalize_cur()

    def _on_close(self, seg: _Seg):
        if self._run_start is not None:
            self._end_run(seg, self._run_start, len(seg.t) - 1)
        self._finalize_cur()

    def _end_run(self, seg: _Seg, a: int, b: int):
        fix = make_fixation(seg.t, seg.x, seg.y, a, b)
        thr = self._run_thr
        self._run_start = None
        self._run_thr = set()
        cur = self._cur
        if cur is not None and should_merge(cur[2], fix, self.config):
            a0 = cur[0]
            self._cur = (a0, b, make_fixation(seg.t, seg.x, seg.y, a0, b))
            self._cur_thr |= thr
            return
        self._finalize_cur()
        self._cur = (a, b, fix)
        self._cur_thr = set(thr)

    def _finalize_cur(self):
        if self._cur is not None and keep_fixation(self._cur[2], self.config):
            self.finalized.append(self._cur[2])
            self.finalized_thresholds.append(tuple(sorted(self._cur_thr)))
        self._cur = None
        self._cur_thr = set()

    def finish(self) -> list[Fixation]:
        """Close the stream; returns fixations finalized by the end of data."""
        if self.finished:
            return []
        before = len(self.finalized)
        self._close_segment()
        if self.threshold is None or (self.reestimate and self._speeds and not self.thresholds):
            self._estimate(self._last_t if self._last_t is not None else 0.0)
        if self.threshold is None:
            # no data at all: nothing to classify
            self.threshold = self.config.fallback_velocity_px_per_s
        self._drain()
        self.finished = True
        return self.finalized[before:]


# -- sessions ------------------------------------------------------------------

@dataclass
class StreamSession:
    session_id: str
    rate_hz: float = 30.0
    detector_config: DetectorConfig = DetectorConfig()
    analysis_config: AnalysisConfig = AnalysisConfig()
    model: SkillModel | None = None
    reestimate: bool = True
    window_s: float | None = None
    detector: OnlineDetector = field(init=False)
    t: list = field(init=False, default_factory=list)
    x: list = field(init=False, default_factory=list)
    y: list = field(init=False, default_factory=list)
    valid: list = field(init=False, default_factory=list)
    last_estimate: dict | None = field(init=False, default=None)

    def __post_init__(self):
        self.detector = OnlineDetector(self.detector_config, self.reestimate)

    def add_sample(self, t: float, x: float, y: float, valid: bool) -> None:
        self.detector.push(t, x, y, valid)
        self.t.append(t)
        self.x.append(x if valid else math.nan)
        self.y.append(y if valid else math.nan)
        self.valid.append(bool(valid))

    def _window(self) -> list[Fixation]:
        fixes = self.detector.finalized
        if self.window_s is None or not self.t:
            return fixes
        start = self.t[-1] - self.window_s * 1000.0
        return [f for f in fixes if f.onset_ms >= start]

    def query(self) -> dict:
        fixes = self._window()
        msg = {"type": "estimate", "features": None, "skill": None, "scores": None,
               "n_fixations": len(self.detector.finalized)}
        durations = [f.duration_ms for f in fixes]
        if len(durations) < self.analysis_config.features.min_fixations:
            msg["reason"] = "too_few_fixations"
        else:
            fv = extract_features(durations, self.analysis_config.features)
            msg["features"] = fv.as_dict()
            if self.model is None:
                msg["reason"] = "no_model"
            else:
                est = classify(fv, self.model)
                msg["skill"] = est.skill.label
                msg["scores"] = {lv.label: s for lv, s in est.scores.items()}
        self.last_estimate = msg
        return clean(msg)

    def recording(self) -> GazeRecording:
        return GazeRecording(np.asarray(self.t, float), np.asarray(self.x, float), np.asarray(self.y, float),
                             np.asarray(self.valid, bool), subject_id=self.session_id, nominal_rate_hz=self.rate_hz)

    def end(self) -> dict:
        self.detector.finish()
        fixes = self.detector.finalized
        block = analyze_session([f.duration_ms for f in fixes], subject_id=self.session_id,
                                config=self.analysis_config, model=self.model)
        batch = None
        if self.reestimate and any(self.valid):
            try:
                batch = detect_fixations(self.recording(), replace(self.detector_config, velocity_threshold_px_per_s=None))
            except InsufficientData:
                batch = None
        rows = []
        for f, thr in zip(fixes, self.detector.finalized_thresholds):
            row = {
                "onset_ms": f.onset_ms, "offset_ms": f.offset_ms, "duration_ms": f.duration_ms,
                "cx_px": f.cx_px, "cy_px": f.cy_px, "dispersion_px": f.dispersion_px, "n_samples": f.n_samples,
                "flagged": bool(batch is not None and not _matches_any(f, batch)),
            }
            rows.append(row)
        report = {
            "type": "report",
            "session_id": self.session_id,
            "reestimate": self.reestimate,
            "thresholds": [{"t_ms": t, "px_per_s": v} for t, v in self.detector.thresholds]
            if self.reestimate else [{"t_ms": None, "px_per_s": self.detector.threshold}],
            "session": block,
            "fixations": rows,
            "n_flagged": sum(r["flagged"] for r in rows),
        }
        if batch is not None:
            report["reanalysis"] = analyze_session([f.duration_ms for f in batch], subject_id=self.session_id,
                                                   config=self.analysis_config, model=self.model)
        return clean(report)


def _matches_any(f: Fixation, fixes: list[Fixation], tol: float = 1e-9) -> bool:
    """True when some batch fixation has the same samples and values to ``tol``."""
    lo = np.searchsorted([g.onset_ms for g in fixes], f.onset_ms - 1e-6)
    for g in fixes[lo:lo + 2]:
        if g.n_samples == f.n_samples and all(
            math.isclose(getattr(f, name), getattr(g, name), rel_tol=tol, abs_tol=tol)
            for name in ("onset_ms", "offset_ms", "duration_ms", "cx_px", "cy_px", "dispersion_px")
        ):
            return True
    return False


# -- TCP service ---------------------------------------------------------------

def _error(code: str, detail: str = "") -> dict:
    msg = {"type": "error", "code": code}
    if detail:
        msg["detail"] = detail
    return msg


def _number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


class GazeServer:
    """Line-delimited JSON service; one session at a time per connection."""

    def __init__(self, model: SkillModel | None = None, detector_config: DetectorConfig = DetectorConfig(),
                 analysis_config: AnalysisConfig = AnalysisConfig(), reestimate: bool = True,
                 window_s: float | None = None):
        self.model = model
        self.detector_config = detector_config
        self.analysis_config = analysis_config
        self.reestimate = reestimate
        self.window_s = window_s

    def handle_message(self, state: dict, msg) -> dict | None:
        """Apply one decoded message to a connection's state; returns the reply, if any."""
        if not isinstance(msg, dict) or not isinstance(msg.get("type"), str):
            return _error("bad_type", "message must be an object with a string 'type'")
        kind = msg["type"]
        session: StreamSession | None = state.get("session")
        if kind == "start":
            if session is not None:
                return _error("session_active", "send 'end' before starting another session")
            sid = msg.get("session_id")
            rate = msg.get("rate_hz", 30)
            if not isinstance(sid, str) or not _number(rate) or not rate > 0:
                return _error("bad_start", "need string session_id and positive rate_hz")
            state["session"] = StreamSession(sid, float(rate), self.detector_config, self.analysis_config,
                                             self.model, self.reestimate, self.window_s)
            return None
        if kind in ("sample", "query", "end") and session is None:
            return _error("no_session", "send 'start' first")
        if kind == "sample":
            t, x, y, valid = msg.get("t_ms"), msg.get("x_px"), msg.get("y_px"), msg.get("valid", True)
            if not isinstance(valid, bool) or not _number(t) or t < 0:
                return _error("bad_sample")
            if valid and not (_number(x) and _number(y)):
                return _error("bad_sample", "valid samples need finite x_px and y_px")
            try:
                session.add_sample(float(t), float(x) if valid else math.nan, float(y) if valid else math.nan, valid)
            except ValueError:
                return _error("non_monotone", "t_ms must increase")
            return None
        if kind == "query":
            return session.query()
        if kind == "end":
            state["session"] = None
            return session.end()
        return _error("bad_type", f"unknown message type {kind!r}")

    async def handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        state: dict = {"session": None}
        try:
            while True:
                try:
                    line = await reader.readuntil(b"\n")
                except asyncio.IncompleteReadError as exc:
                    line = exc.partial
                    if not line.strip():
                        break
                except asyncio.LimitOverrunError:
                    await self._send(writer, _error("bad_json", "line too long"))
                    break
                if not line.strip():
                    continue
                try:
                    msg = json.loads(line.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError):
                    await self._send(writer, _error("bad_json"))
                    break
                reply = self.handle_message(state, msg)
                if reply is not None:
                    await self._send(writer, reply)
        except (ConnectionError, asyncio.CancelledError):
            pass
        finally:
            writer.close()
            try:
                await writer.wait_closed()
            except ConnectionError:
                pass

    @staticmethod
    async def _send(writer: asyncio.StreamWriter, msg: dict) -> None:
        writer.write((json.dumps(msg, allow_nan=False, separators=(",", ":")) + "\n").encode("utf-8"))
        # waiting here is the flow control: a slow reader stalls this session's reads
        await writer.drain()

    async def start(self, host: str, port: int) -> asyncio.base_events.Server:
        return await asyncio.start_server(self.handle, host, port, limit=MAX_LINE_BYTES)


def replay(session: StreamSession, recording: GazeRecording) -> dict:
    """Feed a whole recording through a session and return its end report."""
    for t, x, y, v in zip(recording.t_ms.tolist(), recording.x_px.tolist(), recording.y_px.tolist(),
                          recording.valid.tolist()):
        session.add_sample(t, x, y, v)
    return session.end()
