"""Session log data model and on-disk format.

A session is one directory:

    session.json    metadata (SessionMeta)
    events.jsonl    one TraceRecord per line, fields in order: seq, t_us, kind, payload
    gaze.csv        header "t_us,x,y,valid", one raw gaze sample per row
    frames/         frame_%08d.jpg screen captures, keyed by frame_seq
    audio/          utt_%04d.wav utterances, keyed by utterance counter

Timestamps are microseconds on a monotonic clock anchored at session start;
the wall-clock anchor lives in SessionMeta. All writers go through a single
SessionHandle (one appender at a time); readers operate on closed sessions.
"""

from __future__ import annotations

import json
import os
import time
import typing
from dataclasses import dataclass, field, fields, asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional


class TraceError(Exception):
    """Base error for session log operations."""


class ValidationError(TraceError):
    """A record, payload, or metadata value violates its contract."""


class ParseError(TraceError):
    """A log line or file could not be decoded; message names the field."""


class UsageError(TraceError):
    """An operation was called on a handle in the wrong state."""


# Record kinds
USER_EVENT = "UserEvent"
SYSTEM_EVENT = "SystemEvent"
AUTO_EVENT = "AutoEvent"
FRAME_REF = "FrameRef"
UTTERANCE_REF = "UtteranceRef"
GAZE_REF = "GazeRef"
HELP_REQUEST = "HelpRequest"
MESSAGE_ACTIVATION = "MessageActivation"
WIZARD_COMMAND = "WizardCommand"
PLAYBACK_CUE = "PlaybackCue"

USER_ACTIONS = ("mouse_move", "mouse_click", "key_press")
SYSTEM_ACTIONS = ("window_moved", "menu_opened", "dialog_opened", "window_closed")
REQUEST_TYPES = ("Procedural", "Functional", "Explanation", "Confirmation")
OBJECT_KINDS = ("lexicon", "widget")
WIZARD_COMMANDS = ("undo", "general_message", "activate")
CUE_KINDS = ("audio", "text", "animation")
CUE_PHASES = ("start", "end")

GAZE_HEADER = "t_us,x,y,valid"

FRAME_FILE_FMT = "frames/frame_%08d.jpg"
AUDIO_FILE_FMT = "audio/utt_%04d.wav"

MAX_U32 = 0xFFFFFFFF
MAX_U64 = 0xFFFFFFFFFFFFFFFF


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValidationError(msg)


@dataclass
class SessionMeta:
    """Session identity, wall-clock anchor, and configuration snapshot."""

    session_id: int
    subject_label: str = ""
    wall_clock_start: str = ""
    auto_capture_period_ms: int = 500
    gaze_rate_hz: int = 60
    config_snapshot: dict[str, str] = field(default_factory=dict)

    def validate(self) -> None:
        _require(0 <= self.session_id <= MAX_U32, "session_id must fit in 32 bits")
        _require(self.auto_capture_period_ms >= 50,
                 "invariant violation: auto_capture_period_ms must be >= 50")
        _require(1 <= self.gaze_rate_hz <= 1000,
                 "invariant violation: gaze_rate_hz must be in [1, 1000]")
        if self.wall_clock_start:
            try:
                datetime.fromisoformat(self.wall_clock_start.replace("Z", "+00:00"))
            except ValueError:
                raise ValidationError(
                    f"wall_clock_start is not ISO-8601: {self.wall_clock_start!r}")
        for k, v in self.config_snapshot.items():
            _require(isinstance(k, str) and isinstance(v, str),
                     "config_snapshot must map text to text")


@dataclass
class UserEventPayload:
    action: str
    cursor_x: int
    cursor_y: int
    detail: str = ""

    def validate(self) -> None:
        _require(self.action in USER_ACTIONS, f"unknown user action {self.action!r}")
        if self.action == "mouse_move":
            _require(self.detail == "", "detail must be empty for mouse_move")
        else:
            _require(self.detail != "", f"detail required for {self.action}")


@dataclass
class SystemEventPayload:
    action: str
    target: str

    def validate(self) -> None:
        _require(self.action in SYSTEM_ACTIONS, f"unknown system action {self.action!r}")
        _require(self.target != "", "system event target must be non-empty")


@dataclass
class AutoEventPayload:
    """Idle-period automatic capture marker; carries no data of its own."""

    def validate(self) -> None:
        pass


@dataclass
class FrameRefPayload:
    frame_seq: int
    file: str
    width: int
    height: int
    byte_len: int

    def validate(self) -> None:
        _require(self.frame_seq >= 0, "frame_seq must be non-negative")
        _require(self.file.startswith("frames/"), "frame file must live under frames/")
        _require(self.width > 0 and self.height > 0, "frame dimensions must be positive")
        _require(self.byte_len >= 0, "byte_len must be non-negative")


@dataclass
class UtteranceRefPayload:
    file: str
    duration_ms: Optional[int] = None

    def validate(self) -> None:
        _require(self.file.startswith("audio/"), "utterance file must live under audio/")
        if self.duration_ms is not None:
            _require(self.duration_ms > 0, "duration_ms must be positive when present")


@dataclass
class GazeRefPayload:
    file: str = "gaze.csv"
    rate_hz: int = 60

    def validate(self) -> None:
        _require(self.file != "", "gaze file must be non-empty")
        _require(1 <= self.rate_hz <= 1000, "rate_hz must be in [1, 1000]")


@dataclass
class HelpRequestPayload:
    request_type: str
    object_kind: str
    object_id: str

    def validate(self) -> None:
        _require(self.request_type in REQUEST_TYPES,
                 f"unknown request type {self.request_type!r}")
        _require(self.object_kind in OBJECT_KINDS,
                 f"unknown object kind {self.object_kind!r}")
        _require(self.object_id != "", "object_id must be non-empty")
        if self.object_kind == "lexicon":
            segs = self.object_id.split("/")
            _require(all(segs), f"lexicon path has empty segment: {self.object_id!r}")


@dataclass
class MessageActivationPayload:
    message_id: str

    def validate(self) -> None:
        _require(self.message_id != "", "message_id must be non-empty")


@dataclass
class WizardCommandPayload:
    command: str
    arg: str

    def validate(self) -> None:
        _require(self.command in WIZARD_COMMANDS, f"unknown command {self.command!r}")
        if self.command == "undo":
            _require(self.arg.isdigit() and int(self.arg) >= 1,
                     "undo count must be decimal text >= 1")
        else:
            _require(self.arg != "", "message id must be non-empty")


@dataclass
class PlaybackCuePayload:
    message_id: str
    cue_kind: str
    cue_src: str
    phase: str

    def validate(self) -> None:
        _require(self.message_id != "", "message_id must be non-empty")
        _require(self.cue_kind in CUE_KINDS, f"unknown cue kind {self.cue_kind!r}")
        _require(self.phase in CUE_PHASES, f"unknown cue phase {self.phase!r}")


PAYLOAD_TYPES = {
    USER_EVENT: UserEventPayload,
    SYSTEM_EVENT: SystemEventPayload,
    AUTO_EVENT: AutoEventPayload,
    FRAME_REF: FrameRefPayload,
    UTTERANCE_REF: UtteranceRefPayload,
    GAZE_REF: GazeRefPayload,
    HELP_REQUEST: HelpRequestPayload,
    MESSAGE_ACTIVATION: MessageActivationPayload,
    WIZARD_COMMAND: WizardCommandPayload,
    PLAYBACK_CUE: PlaybackCuePayload,
}

RECORD_KINDS = tuple(PAYLOAD_TYPES)


@dataclass
class TraceRecord:
    """One dated entry in the session log."""

    seq: int
    t_us: int
    kind: str
    payload: object

    def validate(self) -> None:
        _require(self.seq >= 0, "seq must be non-negative")
        _require(0 <= self.t_us <= MAX_U64, "t_us must fit in 64 bits")
        cls = PAYLOAD_TYPES.get(self.kind)
        if cls is None:
            raise ValidationError(f"unknown record kind {self.kind!r}")
        if not isinstance(self.payload, cls):
            raise ValidationError(
                f"payload type {type(self.payload).__name__} does not match kind {self.kind}")
        self.payload.validate()


def encode_record(record: TraceRecord) -> str:
    """Encode a record as its canonical single-line JSON form."""
    record.validate()
    obj = {
        "seq": record.seq,
        "t_us": record.t_us,
        "kind": record.kind,
        "payload": asdict(record.payload),
    }
    return json.dumps(obj, separators=(",", ":"))


def _typed(value, name: str, types) -> None:
    if not isinstance(value, types) or isinstance(value, bool) and types is int:
        raise ParseError(f"field {name!r} has wrong type")


def decode_record(line: str) -> TraceRecord:
    """Decode one log line back into a TraceRecord.

    Strict: unknown kinds, missing or extra payload fields, and wrong field
    types are all parse errors naming the offending field.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed record line: {e}") from e
    if not isinstance(obj, dict):
        raise ParseError("record line is not a JSON object")
    for name in ("seq", "t_us", "kind", "payload"):
        if name not in obj:
            raise ParseError(f"missing field {name!r}")
    _typed(obj["seq"], "seq", int)
    _typed(obj["t_us"], "t_us", int)
    _typed(obj["kind"], "kind", str)
    cls = PAYLOAD_TYPES.get(obj["kind"])
    if cls is None:
        raise ParseError(f"unknown kind tag {obj['kind']!r}")
    raw = obj["payload"]
    if not isinstance(raw, dict):
        raise ParseError("field 'payload' is not an object")
    spec = {f.name: f for f in fields(cls)}
    hints = typing.get_type_hints(cls)
    for name in raw:
        if name not in spec:
            raise ParseError(f"unexpected payload field {name!r} for kind {obj['kind']}")
    kwargs = {}
    for name in spec:
        if name not in raw:
            raise ParseError(f"missing payload field {name!r} for kind {obj['kind']}")
        value = raw[name]
        hint = hints[name]
        if hint is int:
            _typed(value, name, int)
        elif hint is str:
            _typed(value, name, str)
        elif hint == Optional[int] and value is not None:
            _typed(value, name, int)
        kwargs[name] = value
    payload = cls(**kwargs)
    record = TraceRecord(seq=obj["seq"], t_us=obj["t_us"], kind=obj["kind"], payload=payload)
    try:
        record.validate()
    except (ValidationError, TypeError) as e:
        raise ParseError(str(e)) from e
    return record


def load_meta(directory: str | os.PathLike) -> SessionMeta:
    path = Path(directory) / "session.json"
    if not path.is_file():
        raise ParseError(f"missing session.json in {directory}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed session.json: {e}") from e
    known = {f.name for f in fields(SessionMeta)}
    meta = SessionMeta(**{k: v for k, v in obj.items() if k in known})
    meta.validate()
    return meta


def default_clock() -> int:
    """Monotonic microseconds; the session epoch is captured at open."""
    return time.monotonic_ns() // 1000


class ManualClock:
    """Injectable clock for simulations: time moves only when told to."""

    def __init__(self, start_us: int = 0):
        self.t = start_us

    def __call__(self) -> int:
        return self.t

    def advance(self, dt_us: int) -> int:
        self.t += dt_us
        return self.t


class SessionHandle:
    """Single-writer handle over one open session directory.

    Assigns gapless seq numbers and monotonic timestamps at the append
    point. Not thread safe by itself: concurrent producers must serialize
    through the recorder.
    """

    def __init__(self, directory: Path, meta: SessionMeta, clock: Callable[[], int]):
        self.directory = directory
        self.meta = meta
        self._clock = clock
        self._epoch = clock()
        self._seq = 0
        self._last_t = 0
        self._frame_seq = 0
        self._utt_count = 0
        self._events = open(directory / "events.jsonl", "a", encoding="utf-8")
        self._gaze = open(directory / "gaze.csv", "a", encoding="utf-8")
        self._closed = False

    @property
    def closed(self) -> bool:
        return self._closed

    @property
    def next_seq(self) -> int:
        return self._seq

    def now_us(self) -> int:
        """Current session-relative time in microseconds."""
        t = self._clock() - self._epoch
        return t if t > self._last_t else self._last_t

    def append(self, kind: str, payload) -> TraceRecord:
        """Append one record; assigns the next seq and the current time."""
        if self._closed:
            raise UsageError("append on closed session")
        record = TraceRecord(seq=self._seq, t_us=self.now_us(), kind=kind, payload=payload)
        line = encode_record(record)
        self._events.write(line + "\n")
        self._events.flush()
        self._seq += 1
        self._last_t = record.t_us
        return record

    def store_frame(self, jpeg: bytes) -> tuple[int, str]:
        """Write a frame blob; returns (frame_seq, relative path)."""
        if self._closed:
            raise UsageError("store_frame on closed session")
        seq = self._frame_seq
        self._frame_seq += 1
        rel = FRAME_FILE_FMT % seq
        (self.directory / rel).write_bytes(jpeg)
        return seq, rel

    def alloc_audio_path(self) -> str:
        """Reserve the next utterance file name (file written later)."""
        if self._closed:
            raise UsageError("alloc_audio_path on closed session")
        rel = AUDIO_FILE_FMT % self._utt_count
        self._utt_count += 1
        return rel

    def write_audio(self, rel: str, wav: bytes) -> None:
        (self.directory / rel).write_bytes(wav)

    def gaze_row(self, t_us: int, x: int, y: int, valid: bool) -> None:
        if self._closed:
            raise UsageError("gaze_row on closed session")
        self._gaze.write(f"{t_us},{x},{y},{1 if valid else 0}\n")
        self._gaze.flush()

    def close(self) -> None:
        if self._closed:
            raise UsageError("session already closed")
        self._closed = True
        self._events.close()
        self._gaze.close()


def open_session(directory: str | os.PathLike, meta: SessionMeta,
                 clock: Callable[[], int] | None = None) -> SessionHandle:
    """Create a fresh session directory and return its writer handle.

    Refuses non-empty directories (no silent overwrite) and session ids
    already used by a sibling session under the same parent.
    """
    meta.validate()
    directory = Path(directory)
    if directory.exists():
        if not directory.is_dir():
            raise TraceError(f"{directory} exists and is not a directory")
        if any(directory.iterdir()):
            raise TraceError(f"directory not empty: {directory}")
    else:
        directory.mkdir(parents=True)
    for sibling in directory.parent.glob("*/session.json"):
        if sibling.parent == directory:
            continue
        try:
            other = json.loads(sibling.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            continue
        if other.get("session_id") == meta.session_id:
            raise TraceError(
                f"session_id {meta.session_id} already used by {sibling.parent}")
    if not meta.wall_clock_start:
        meta.wall_clock_start = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    (directory / "frames").mkdir()
    (directory / "audio").mkdir()
    (directory / "session.json").write_text(
        json.dumps(asdict(meta), indent=2) + "\n", encoding="utf-8")
    (directory / "events.jsonl").touch()
    (directory / "gaze.csv").write_text(GAZE_HEADER + "\n", encoding="utf-8")
    return SessionHandle(directory, meta, clock or default_clock)


@dataclass
class ValidationReport:
    """Outcome of validate_session: hard violations plus advisory warnings.

    A session is well-formed iff `issues` is empty; warnings (for example a
    zero-byte WAV blob) do not invalidate it.
    """

    issues: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def summary(self) -> str:
        if self.ok and not self.warnings:
            return "session OK"
        lines = [f"{len(self.issues)} issue(s), {len(self.warnings)} warning(s)"]
        lines += [f"  issue: {s}" for s in self.issues]
        lines += [f"  warning: {s}" for s in self.warnings]
        return "\n".join(lines)


def read_records(directory: str | os.PathLike) -> list[TraceRecord]:
    """Decode all of events.jsonl; raises ParseError on the first bad line."""
    path = Path(directory) / "events.jsonl"
    records = []
    with open(path, encoding="utf-8") as f:
        for i, line in enumerate(f):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                records.append(decode_record(line))
            except ParseError as e:
                raise ParseError(f"events.jsonl line {i}: {e}") from e
    return records


def validate_session(directory: str | os.PathLike, store=None) -> ValidationReport:
    """Check a closed session directory for structural violations.

    Covers: decodable lines, gapless seq, non-decreasing timestamps,
    strictly increasing FrameRef frame_seq, dangling frame/audio refs,
    orphan blob files, gaze.csv regressions, and (when the config snapshot
    declares screen bounds) cursor coordinates. With a message store given,
    wizard command message ids are resolved against it.
    """
    directory = Path(directory)
    report = ValidationReport()
    try:
        meta = load_meta(directory)
    except (ParseError, ValidationError) as e:
        raise TraceError(f"structural error: {e}") from e

    referenced: set[str] = set()
    prev_t = -1
    prev_frame_seq = -1
    bounds = None
    snap = meta.config_snapshot
    if "screen_width" in snap and "screen_height" in snap:
        try:
            bounds = (int(snap["screen_width"]), int(snap["screen_height"]))
        except ValueError:
            bounds = None

    path = directory / "events.jsonl"
    if not path.is_file():
        report.issues.append("events.jsonl missing")
        return report
    expected_seq = 0
    with open(path, encoding="utf-8") as f:
        for i, line in enumerate(f):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                rec = decode_record(line)
            except ParseError as e:
                report.issues.append(f"line {i}: {e}")
                expected_seq += 1
                continue
            if rec.seq != expected_seq:
                report.issues.append(
                    f"line {i}: seq {rec.seq}, expected {expected_seq} (gap or repeat)")
                expected_seq = rec.seq + 1
            else:
                expected_seq += 1
            if rec.t_us < prev_t:
                report.issues.append(
                    f"line {i}: timestamp regression {rec.t_us} < {prev_t}")
            prev_t = rec.t_us
            p = rec.payload
            if rec.kind == FRAME_REF:
                if p.frame_seq <= prev_frame_seq:
                    report.issues.append(
                        f"line {i}: frame_seq {p.frame_seq} not increasing")
                prev_frame_seq = p.frame_seq
                referenced.add(p.file)
                blob = directory / p.file
                if not blob.is_file():
                    report.issues.append(f"line {i}: dangling frame ref {p.file}")
                elif blob.stat().st_size != p.byte_len:
                    report.issues.append(
                        f"line {i}: frame {p.file} is {blob.stat().st_size} bytes, "
                        f"ref says {p.byte_len}")
            elif rec.kind == UTTERANCE_REF:
                referenced.add(p.file)
                blob = directory / p.file
                if not blob.is_file():
                    report.issues.append(f"line {i}: dangling utterance ref {p.file}")
                elif blob.stat().st_size == 0:
                    report.warnings.append(f"line {i}: zero-byte WAV {p.file}")
            elif rec.kind in (USER_EVENT,) and bounds is not None:
                if not (0 <= p.cursor_x < bounds[0] and 0 <= p.cursor_y < bounds[1]):
                    report.issues.append(
                        f"line {i}: cursor ({p.cursor_x},{p.cursor_y}) outside "
                        f"declared bounds {bounds[0]}x{bounds[1]}")
            elif rec.kind == WIZARD_COMMAND and store is not None:
                if p.command in ("general_message", "activate") and not store.has_message(p.arg):
                    report.issues.append(
                        f"line {i}: wizard command references unknown message {p.arg!r}")
            elif rec.kind == MESSAGE_ACTIVATION and store is not None:
                if not store.has_message(p.message_id):
                    report.issues.append(
                        f"line {i}: activation references unknown message {p.message_id!r}")

    for sub in ("frames", "audio"):
        d = directory / sub
        if not d.is_dir():
            report.issues.append(f"{sub}/ directory missing")
            continue
        for blob in sorted(d.iterdir()):
            rel = f"{sub}/{blob.name}"
            if rel not in referenced:
                report.issues.append(f"orphan blob file {rel}")

    gaze = directory / "gaze.csv"
    if not gaze.is_file():
        report.issues.append("gaze.csv missing")
    else:
        with open(gaze, encoding="utf-8") as f:
            header = f.readline().rstrip("\n")
            if header != GAZE_HEADER:
                report.issues.append(f"gaze.csv header {header!r}, expected {GAZE_HEADER!r}")
            prev = -1
            for i, row in enumerate(f):
                row = row.rstrip("\n")
                if not row:
                    continue
                parts = row.split(",")
                if len(parts) != 4:
                    report.issues.append(f"gaze.csv row {i}: expected 4 columns")
                    continue
                try:
                    t = int(parts[0])
                except ValueError:
                    report.issues.append(f"gaze.csv row {i}: non-integer t_us")
                    continue
                if t <= prev:
                    report.issues.append(f"gaze.csv row {i}: timestamp regression")
                prev = t
    return report
