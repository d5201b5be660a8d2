"""Gaze stream parsing and dispersion-threshold (I-DT) fixation detection.

A fixation is a maximal run of valid samples whose dispersion, measured as
(max x - min x) + (max y - min y), stays within a pixel threshold and whose
duration (t_last - t_first) reaches a minimum. Scanning left to right: from
each candidate start the window is extended as far as the threshold and
sample validity allow; if the extended window meets the duration bound it is
emitted and the scan resumes after it, otherwise the start advances by one
sample. Invalid samples never join a window. Centroids are rounded half-up
(ties toward +infinity) using exact integer arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

from .trace import ParseError, UsageError


@dataclass(frozen=True)
class GazeSample:
    t_us: int
    x: int
    y: int
    valid: bool


@dataclass(frozen=True)
class Fixation:
    start_us: int
    duration_us: int
    cx: int
    cy: int
    n_samples: int

    @property
    def end_us(self) -> int:
        return self.start_us + self.duration_us


@dataclass(frozen=True)
class FixationParams:
    dispersion_px: int = 40
    min_duration_ms: int = 100

    def validate(self) -> None:
        if self.dispersion_px < 1:
            raise ValueError("dispersion_px must be >= 1")
        if self.min_duration_ms < 1:
            raise ValueError("min_duration_ms must be >= 1")


def parse_gaze_line(line: str) -> GazeSample:
    """Parse one gaze.csv data row: "t_us,x,y,valid" with integer fields."""
    parts = line.rstrip("\n").split(",")
    if len(parts) != 4:
        raise ParseError(f"expected 4 columns, got {len(parts)}")
    values = []
    for col, part in enumerate(parts):
        try:
            values.append(int(part))
        except ValueError:
            raise ParseError(f"column {col}: non-integer field {part!r}")
    if values[3] not in (0, 1):
        raise ParseError("column 3: valid flag must be 0 or 1")
    return GazeSample(t_us=values[0], x=values[1], y=values[2], valid=values[3] == 1)


def read_gaze_csv(path) -> list[GazeSample]:
    samples = []
    with open(path, encoding="utf-8") as f:
        header = f.readline()
        if header.rstrip("\n") != "t_us,x,y,valid":
            raise ParseError(f"bad gaze header {header!r}")
        for i, line in enumerate(f):
            if not line.strip():
                continue
            try:
                samples.append(parse_gaze_line(line))
            except ParseError as e:
                raise ParseError(f"gaze.csv row {i}: {e}") from e
    return samples


def round_half_up_div(total: int, n: int) -> int:
    # floor(total/n + 1/2) in exact integer arithmetic
    return (2 * total + n) // (2 * n)


def detect_fixations(samples: list[GazeSample], params: FixationParams | None = None) -> list[Fixation]:
    """Detect fixations in a time-ordered sample list.

    Returns non-overlapping fixations ordered by start. Raises UsageError
    if the input is not ordered by timestamp.
    """
    params = params or FixationParams()
    params.validate()
    for a, b in zip(samples, samples[1:]):
        if b.t_us < a.t_us:
            raise UsageError(f"samples out of order at t={b.t_us}")

    disp = params.dispersion_px
    min_dur = params.min_duration_ms * 1000
    n = len(samples)
    out: list[Fixation] = []
    i = 0
    while i < n:
        if not samples[i].valid:
            i += 1
            continue
        # grow [i..j] while valid and within the dispersion bound
        min_x = max_x = samples[i].x
        min_y = max_y = samples[i].y
        j = i
        while j + 1 < n and samples[j + 1].valid:
            s = samples[j + 1]
            nmin_x, nmax_x = min(min_x, s.x), max(max_x, s.x)
            nmin_y, nmax_y = min(min_y, s.y), max(max_y, s.y)
            if (nmax_x - nmin_x) + (nmax_y - nmin_y) > disp:
                break
            min_x, max_x, min_y, max_y = nmin_x, nmax_x, nmin_y, nmax_y
            j += 1
        count = j - i + 1
        duration = samples[j].t_us - samples[i].t_us
        if count >= 2 and duration >= min_dur:
            sum_x = sum(s.x for s in samples[i:j + 1])
            sum_y = sum(s.y for s in samples[i:j + 1])
            out.append(Fixation(
                start_us=samples[i].t_us,
                duration_us=duration,
                cx=round_half_up_div(sum_x, count),
                cy=round_half_up_div(sum_y, count),
                n_samples=count,
            ))
            i = j + 1
        else:
            i += 1
    return out
