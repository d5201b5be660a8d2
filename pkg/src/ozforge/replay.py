"""Synchronized session replay and deterministic image export.

The timeline is immutable once loaded: records from events.jsonl, fixations
precomputed from gaze.csv, and a frame index, merged in time order. Render
state at any instant is a pure function of (timeline, t), so stepping and
seeking must agree everywhere; step walks linearly while seek bisects,
which makes their pointwise equality a meaningful check rather than a
tautology.

Position arithmetic uses Fractions so speed multipliers introduce no float
drift, and all overlay geometry is integer math so exported images are
byte-identical across runs.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from PIL import Image, ImageDraw

from . import trace
from .gaze import Fixation, FixationParams, detect_fixations, read_gaze_csv

PRIO_FRAME = 0
PRIO_EVENT = 1
PRIO_FIXATION = 2

DEFAULT_MARKER_WINDOW_US = 200_000
EXPORT_FILE_FMT = "frame_%06d.png"
FALLBACK_CANVAS = (640, 480)

CURSOR_ARM = 8
FIX_RADIUS_BASE = 8
FIX_RADIUS_GROWTH = 24
TICK_STRIP_H = 6


class ReplayLoadError(Exception):
    """Session refused; `report` holds the validation outcome."""

    def __init__(self, report: trace.ValidationReport):
        self.report = report
        super().__init__("session failed validation:\n" + report.summary())


@dataclass(frozen=True)
class TimelineEntry:
    t_us: int
    prio: int
    record: trace.TraceRecord | None = None
    fixation: Fixation | None = None


@dataclass(frozen=True)
class RenderInstruction:
    t_us: int
    frame_file: str | None
    frame_size: tuple[int, int] | None
    cursor: tuple[int, int] | None
    active: tuple[tuple[Fixation, int], ...]  # (fixation, elapsed_us)
    markers: tuple[trace.TraceRecord, ...]


class ReplayTimeline:
    def __init__(self, directory: Path, meta: trace.SessionMeta,
                 entries: list[TimelineEntry], fixations: list[Fixation]):
        self.directory = directory
        self.meta = meta
        self.entries = entries
        self.fixations = fixations
        self.t_max = max((e.t_us for e in entries), default=0)
        # parallel arrays for the bisect route
        self._frame_t: list[int] = []
        self._frames: list[tuple[str, tuple[int, int]]] = []
        self._cursor_t: list[int] = []
        self._cursors: list[tuple[int, int]] = []
        self._event_t: list[int] = []
        self._events: list[trace.TraceRecord] = []
        for e in entries:
            if e.prio == PRIO_FRAME:
                p = e.record.payload
                self._frame_t.append(e.t_us)
                self._frames.append((p.file, (p.width, p.height)))
            elif e.prio == PRIO_EVENT:
                self._event_t.append(e.t_us)
                self._events.append(e.record)
                if e.record.kind == trace.USER_EVENT:
                    self._cursor_t.append(e.t_us)
                    self._cursors.append((e.record.payload.cursor_x,
                                          e.record.payload.cursor_y))

    def clamp(self, t_us: int) -> int:
        return min(max(t_us, 0), self.t_max)


def load(directory: str | Path, params: FixationParams | None = None,
         store=None) -> ReplayTimeline:
    """Build the timeline; refuses any session the validator objects to."""
    directory = Path(directory)
    report = trace.validate_session(directory, store=store)
    if not report.ok:
        raise ReplayLoadError(report)
    meta = trace.load_meta(directory)
    records = trace.read_records(directory)
    samples = read_gaze_csv(directory / "gaze.csv")
    fixations = detect_fixations(samples, params or FixationParams())
    entries = []
    for rec in records:
        prio = PRIO_FRAME if rec.kind == trace.FRAME_REF else PRIO_EVENT
        entries.append(TimelineEntry(t_us=rec.t_us, prio=prio, record=rec))
    for fix in fixations:
        entries.append(TimelineEntry(t_us=fix.start_us, prio=PRIO_FIXATION,
                                     fixation=fix))
    entries.sort(key=lambda e: (e.t_us, e.prio))
    return ReplayTimeline(directory=directory, meta=meta, entries=entries,
                          fixations=fixations)


def advance(position_us: int, wall_dt_us: int, speed: float) -> int:
    """New playback position after wall_dt at the given speed; exact."""
    if speed <= 0:
        raise trace.UsageError("speed must be positive")
    return position_us + math.floor(Fraction(speed) * wall_dt_us)


def step(timeline: ReplayTimeline, t_us: int,
         marker_window_us: int = DEFAULT_MARKER_WINDOW_US) -> RenderInstruction:
    """Render state at t by a single linear scan over the entries."""
    t = timeline.clamp(t_us)
    frame_file = None
    frame_size = None
    cursor = None
    active: list[tuple[Fixation, int]] = []
    markers: list[trace.TraceRecord] = []
    lo = t - marker_window_us
    for e in timeline.entries:
        if e.t_us > t:
            break
        if e.prio == PRIO_FRAME:
            p = e.record.payload
            frame_file = p.file
            frame_size = (p.width, p.height)
        elif e.prio == PRIO_EVENT:
            if e.record.kind == trace.USER_EVENT:
                cursor = (e.record.payload.cursor_x, e.record.payload.cursor_y)
            if e.t_us > lo:
                markers.append(e.record)
    for fix in timeline.fixations:
        if fix.start_us <= t < fix.end_us:
            active.append((fix, t - fix.start_us))
    return RenderInstruction(t_us=t, frame_file=frame_file, frame_size=frame_size,
                             cursor=cursor, active=tuple(active),
                             markers=tuple(markers))


def seek(timeline: ReplayTimeline, t_us: int,
         marker_window_us: int = DEFAULT_MARKER_WINDOW_US) -> RenderInstruction:
    """Render state at t via bisection; must equal step(t) everywhere."""
    t = timeline.clamp(t_us)
    frame_file = None
    frame_size = None
    i = bisect_right(timeline._frame_t, t)
    if i > 0:
        frame_file, frame_size = timeline._frames[i - 1]
    cursor = None
    i = bisect_right(timeline._cursor_t, t)
    if i > 0:
        cursor = timeline._cursors[i - 1]
    lo = t - marker_window_us
    hi = bisect_right(timeline._event_t, t)
    j = hi
    while j > 0 and timeline._event_t[j - 1] > lo:
        j -= 1
    markers = tuple(timeline._events[j:hi])
    active = tuple((fix, t - fix.start_us) for fix in timeline.fixations
                   if fix.start_us <= t < fix.end_us)
    return RenderInstruction(t_us=t, frame_file=frame_file, frame_size=frame_size,
                             cursor=cursor, active=active, markers=markers)


def fixation_radius(elapsed_us: int, duration_us: int) -> int:
    """Glyph radius grows linearly with elapsed fraction, integer math."""
    return FIX_RADIUS_BASE + (FIX_RADIUS_GROWTH * elapsed_us) // max(duration_us, 1)


def _canvas_size(timeline: ReplayTimeline) -> tuple[int, int]:
    if timeline._frames:
        return timeline._frames[0][1]
    snap = timeline.meta.config_snapshot
    try:
        return (int(snap["screen_width"]), int(snap["screen_height"]))
    except (KeyError, ValueError):
        return FALLBACK_CANVAS


def render(timeline: ReplayTimeline, ri: RenderInstruction) -> Image.Image:
    """Composite one instruction into an RGB image."""
    if ri.frame_file is not None:
        with Image.open(timeline.directory / ri.frame_file) as src:
            img = src.convert("RGB")
    else:
        img = Image.new("RGB", _canvas_size(timeline), (24, 24, 32))
    overlay = Image.new("RGBA", img.size, (0, 0, 0, 0))
    draw = ImageDraw.Draw(overlay)
    for fix, elapsed in ri.active:
        r = fixation_radius(elapsed, fix.duration_us)
        draw.ellipse((fix.cx - r, fix.cy - r, fix.cx + r, fix.cy + r),
                     fill=(255, 160, 0, 128), outline=(255, 120, 0, 200))
    if ri.cursor is not None:
        x, y = ri.cursor
        draw.line((x - CURSOR_ARM, y, x + CURSOR_ARM, y), fill=(0, 255, 80, 255))
        draw.line((x, y - CURSOR_ARM, x, y + CURSOR_ARM), fill=(0, 255, 80, 255))
    w, h = img.size
    span = max(timeline.t_max, 1)
    for rec in ri.markers:
        x = (rec.t_us * (w - 1)) // span
        draw.line((x, h - TICK_STRIP_H, x, h - 1), fill=(255, 64, 64, 255))
    out = Image.alpha_composite(img.convert("RGBA"), overlay)
    return out.convert("RGB")


def export(session_dir: str | Path, out_dir: str | Path, fps: int,
           params: FixationParams | None = None) -> Path:
    """Sample the timeline on an fps grid into PNGs plus index.json.

    Produces ceil(t_max * fps) + 1 frames at t = k/fps; byte-identical
    across runs for the same inputs.
    """
    if fps < 1:
        raise trace.UsageError("fps must be >= 1")
    timeline = load(session_dir, params)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_frames = -(-timeline.t_max * fps // 1_000_000) + 1
    marker_window = -(-1_000_000 // fps)  # one sample interval, rounded up
    index = []
    for k in range(n_frames):
        t = (k * 1_000_000) // fps
        ri = seek(timeline, t, marker_window_us=marker_window)
        img = render(timeline, ri)
        name = EXPORT_FILE_FMT % k
        img.save(out_dir / name, format="PNG")
        index.append({"k": k, "t_us": ri.t_us, "frame_file": name,
                      "n_active_fixations": len(ri.active)})
    (out_dir / "index.json").write_text(
        json.dumps(index, indent=1) + "\n", encoding="utf-8")
    return out_dir
