"""Text formats: gaze CSV, fixation CSV and the JSON analysis report.

All writers emit ``\\n`` line endings and print floats with ``repr`` so that
``parse(write(x)) == x`` holds exactly. Integral values are printed without a
trailing ``.0`` (``0,100,200,1`` rather than ``0.0,100.0,200.0,1``).
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, TextIO

import numpy as np

from .errors import EmptyRecording, InputError, MalformedRow, MissingHeader, NonMonotoneTimestamp
from .levels import SkillLevel

GAZE_HEADER = "t_ms,x_px,y_px,valid"
FIXATION_HEADER = "onset_ms,offset_ms,duration_ms,cx_px,cy_px,dispersion_px,n_samples,class"
KNOWN_META = ("subject_id", "skill", "rate_hz", "screen_w", "screen_h")
DEFAULT_RATE_HZ = 30.0
DEFAULT_SCREEN = (1920, 1080)


class GazeSample(NamedTuple):
    t_ms: float
    x_px: float
    y_px: float
    valid: bool


@dataclass(eq=False)
class GazeRecording:
    """One subject/session of gaze samples, stored column-wise.

    ``extra_meta`` keeps unknown ``#key=value`` lines verbatim, in file order.
    ``dropped_rows`` is the lenient-parse drop count and does not take part
    in equality.
    """

    t_ms: np.ndarray
    x_px: np.ndarray
    y_px: np.ndarray
    valid: np.ndarray
    subject_id: str = ""
    skill_label: SkillLevel | None = None
    nominal_rate_hz: float = DEFAULT_RATE_HZ
    screen_w_px: int = DEFAULT_SCREEN[0]
    screen_h_px: int = DEFAULT_SCREEN[1]
    extra_meta: dict[str, str] = field(default_factory=dict)
    dropped_rows: int = 0

    def __post_init__(self):
        self.t_ms = np.asarray(self.t_ms, dtype=float)
        self.x_px = np.asarray(self.x_px, dtype=float)
        self.y_px = np.asarray(self.y_px, dtype=float)
        self.valid = np.asarray(self.valid, dtype=bool)
        n = len(self.t_ms)
        if not (len(self.x_px) == len(self.y_px) == len(self.valid) == n):
            raise ValueError("sample columns differ in length")

    @classmethod
    def from_samples(cls, samples: Iterable[GazeSample], **meta) -> "GazeRecording":
        rows = list(samples)
        if rows:
            t, x, y, v = zip(*rows)
        else:
            t = x = y = v = ()
        return cls(np.array(t, float), np.array(x, float), np.array(y, float), np.array(v, bool), **meta)

    def __len__(self) -> int:
        return len(self.t_ms)

    @property
    def samples(self) -> list[GazeSample]:
        return [
            GazeSample(float(t), float(x), float(y), bool(v))
            for t, x, y, v in zip(self.t_ms, self.x_px, self.y_px, self.valid)
        ]

    @property
    def sample_period_ms(self) -> float:
        return 1000.0 / self.nominal_rate_hz

    def validate(self) -> None:
        """Raise ``ValueError`` if the recording breaks a type invariant."""
        if not self.nominal_rate_hz > 0:
            raise ValueError("nominal_rate_hz must be positive")
        if self.screen_w_px <= 0 or self.screen_h_px <= 0:
            raise ValueError("screen size must be positive")
        t = self.t_ms
        if len(t):
            if not np.all(np.isfinite(t)) or t.min() < 0:
                raise ValueError("timestamps must be finite and non-negative")
            if np.any(np.diff(t) <= 0):
                raise ValueError("timestamps must be strictly increasing")
        v = self.valid
        if not (np.all(np.isfinite(self.x_px[v])) and np.all(np.isfinite(self.y_px[v]))):
            raise ValueError("valid samples need finite coordinates")

    def meta_items(self) -> list[tuple[str, str]]:
        items = [("subject_id", self.subject_id)]
        if self.skill_label is not None:
            items.append(("skill", self.skill_label.label))
        items += [
            ("rate_hz", fmt_num(self.nominal_rate_hz)),
            ("screen_w", str(self.screen_w_px)),
            ("screen_h", str(self.screen_h_px)),
        ]
        items += list(self.extra_meta.items())
        return items

    def __eq__(self, other):
        if not isinstance(other, GazeRecording):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and self.skill_label == other.skill_label
            and self.nominal_rate_hz == other.nominal_rate_hz
            and self.screen_w_px == other.screen_w_px
            and self.screen_h_px == other.screen_h_px
            and self.extra_meta == other.extra_meta
            and np.array_equal(self.t_ms, other.t_ms)
            and np.array_equal(self.x_px, other.x_px, equal_nan=True)
            and np.array_equal(self.y_px, other.y_px, equal_nan=True)
            and np.array_equal(self.valid, other.valid)
        )


def fmt_num(v: float) -> str:
    """Shortest exact text for a float; integral values lose the ``.0``."""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if v.is_integer() and abs(v) < 1e15:
        if v == 0 and math.copysign(1.0, v) < 0:
            return "-0"
        return str(int(v))
    return repr(v)


def _parse_meta_line(line: str, line_no: int) -> tuple[str, str]:
    body = line[1:]
    if "=" not in body:
        raise MalformedRow(line_no, "metadata line without '='")
    key, value = body.split("=", 1)
    return key.strip(), value.strip()


def _read_preamble(lines: list[str]) -> tuple[list[tuple[str, str]], int, str]:
    """Collect ``#key=value`` lines; return (meta, index of header, header text)."""
    meta = []
    for i, raw in enumerate(lines):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        if line.startswith("#"):
            meta.append(_parse_meta_line(line, i + 1))
            continue
        return meta, i, line.strip()
    raise MissingHeader("no header line found")


def _apply_recording_meta(meta: list[tuple[str, str]]) -> dict:
    out: dict = {"extra_meta": {}}
    for key, value in meta:
        try:
            if key == "subject_id":
                out["subject_id"] = value
            elif key == "skill":
                out["skill_label"] = SkillLevel.parse(value) if value else None
            elif key == "rate_hz":
                out["nominal_rate_hz"] = float(value)
                if not out["nominal_rate_hz"] > 0:
                    raise ValueError("rate must be positive")
            elif key == "screen_w":
                out["screen_w_px"] = int(value)
            elif key == "screen_h":
                out["screen_h_px"] = int(value)
            else:
                out["extra_meta"][key] = value
        except ValueError as exc:
            raise InputError(f"bad metadata value for {key!r}: {exc}") from None
    return out


def _parse_valid(text: str) -> bool:
    if text == "1":
        return True
    if text == "0":
        return False
    raise ValueError(f"validity flag must be 1 or 0, got {text!r}")


def parse_gaze_csv(stream: TextIO | str, header_policy: str = "strict") -> GazeRecording:
    """Read a gaze CSV.

    ``header_policy="strict"`` raises on the first malformed or non-monotone
    row; ``"lenient"`` drops such rows and records how many in
    ``GazeRecording.dropped_rows``.
    """
    if header_policy not in ("strict", "lenient"):
        raise ValueError("header_policy must be 'strict' or 'lenient'")
    strict = header_policy == "strict"
    text = stream if isinstance(stream, str) else stream.read()
    lines = text.split("\n")
    meta, header_idx, header = _read_preamble(lines)
    if header.replace(" ", "") != GAZE_HEADER:
        raise MissingHeader(f"expected header {GAZE_HEADER!r}, got {header!r}")

    t_col, x_col, y_col, v_col = [], [], [], []
    dropped = 0
    last_t = -math.inf
    for i in range(header_idx + 1, len(lines)):
        line = lines[i].rstrip("\r")
        if not line.strip():
            continue
        line_no = i + 1
        parts = line.split(",")
        try:
            if len(parts) != 4:
                raise ValueError(f"expected 4 fields, got {len(parts)}")
            t, x, y = float(parts[0]), float(parts[1]), float(parts[2])
            v = _parse_valid(parts[3].strip())
            if not math.isfinite(t) or t < 0:
                raise ValueError("timestamp must be finite and non-negative")
            if v and not (math.isfinite(x) and math.isfinite(y)):
                raise ValueError("valid sample with non-finite coordinates")
        except ValueError as exc:
            if strict:
                raise MalformedRow(line_no, str(exc)) from None
            dropped += 1
            continue
        if t <= last_t:
            if strict:
                raise NonMonotoneTimestamp(line_no)
            dropped += 1
            continue
        last_t = t
        t_col.append(t)
        x_col.append(x)
        y_col.append(y)
        v_col.append(v)

    if not any(v_col):
        raise EmptyRecording("recording has no valid samples")
    return GazeRecording(
        np.array(t_col), np.array(x_col), np.array(y_col), np.array(v_col, dtype=bool),
        dropped_rows=dropped, **_apply_recording_meta(meta),
    )


def write_gaze_csv(recording: GazeRecording) -> str:
    buf = io.StringIO()
    for key, value in recording.meta_items():
        buf.write(f"#{key}={value}\n")
    buf.write(GAZE_HEADER + "\n")
    for t, x, y, v in zip(recording.t_ms, recording.x_px, recording.y_px, recording.valid):
        buf.write(f"{fmt_num(t)},{fmt_num(x)},{fmt_num(y)},{1 if v else 0}\n")
    return buf.getvalue()


# -- fixations -----------------------------------------------------------------

def write_fixation_csv(fixations, classes=None, meta: Iterable[tuple[str, str]] = ()) -> str:
    """Serialize fixations; ``classes`` defaults to duration-band labels."""
    from .density import classify_fixation

    buf = io.StringIO()
    for key, value in meta:
        buf.write(f"#{key}={value}\n")
    buf.write(FIXATION_HEADER + "\n")
    for k, f in enumerate(fixations):
        cls = classes[k] if classes is not None else classify_fixation(f.duration_ms)
        buf.write(
            ",".join([
                fmt_num(f.onset_ms), fmt_num(f.offset_ms), fmt_num(f.duration_ms),
                fmt_num(f.cx_px), fmt_num(f.cy_px), fmt_num(f.dispersion_px),
                str(int(f.n_samples)), str(cls),
            ]) + "\n"
        )
    return buf.getvalue()


@dataclass
class FixationFile:
    fixations: list
    classes: list[str]
    meta: dict[str, str]

    @property
    def subject_id(self) -> str:
        return self.meta.get("subject_id", "")

    @property
    def skill_label(self) -> SkillLevel | None:
        s = self.meta.get("skill", "")
        return SkillLevel.parse(s) if s else None


def parse_fixation_csv(stream: TextIO | str) -> FixationFile:
    from .detect import Fixation

    text = stream if isinstance(stream, str) else stream.read()
    lines = text.split("\n")
    meta, header_idx, header = _read_preamble(lines)
    if header.replace(" ", "") != FIXATION_HEADER:
        raise MissingHeader(f"expected header {FIXATION_HEADER!r}, got {header!r}")
    fixations, classes = [], []
    for i in range(header_idx + 1, len(lines)):
        line = lines[i].rstrip("\r")
        if not line.strip():
            continue
        parts = line.split(",")
        try:
            if len(parts) != 8:
                raise ValueError(f"expected 8 fields, got {len(parts)}")
            onset, offset, dur, cx, cy, disp = (float(p) for p in parts[:6])
            n = int(parts[6])
        except ValueError as exc:
            raise MalformedRow(i + 1, str(exc)) from None
        fixations.append(Fixation(onset, offset, dur, cx, cy, disp, n))
        classes.append(parts[7].strip())
    return FixationFile(fixations, classes, dict(meta))


# -- report --------------------------------------------------------------------

def write_report_json(report: dict) -> str:
    """Serialize a report; floats keep full precision, NaN is rejected."""
    return json.dumps(report, indent=2, allow_nan=False) + "\n"


def read_report_json(stream: TextIO | str) -> dict:
    text = stream if isinstance(stream, str) else stream.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"report is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("schema") != 1:
        raise InputError("report JSON must be an object with schema: 1")
    return doc
