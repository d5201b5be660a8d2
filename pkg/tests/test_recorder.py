"""Serialization ordering, idle auto-capture cadence, gaze and utterance flow."""

from __future__ import annotations

import threading

import pytest

from ozforge import recorder, trace
from ozforge.gaze import GazeSample
from ozforge.recorder import RecorderConfig, SessionSummary, start
from ozforge.trace import (ManualClock, SessionMeta, UsageError,
                           UserEventPayload, SystemEventPayload, read_records,
                           validate_session)

from helpers import CountingFrameSource, make_wav


def mk(tmp_path, period_ms=500, clock=None, **meta_kw):
    clock = clock or ManualClock()
    meta_kw.setdefault("wall_clock_start", "2026-01-01T00:00:00Z")
    cfg = RecorderConfig(frame_source=CountingFrameSource(),
                         auto_capture_period_ms=period_ms)
    handle = start(cfg, tmp_path / "session", SessionMeta(session_id=1, **meta_kw),
                   clock=clock, tick_thread=False)
    return handle, clock


def click(x=10, y=10):
    return UserEventPayload(action="mouse_click", cursor_x=x, cursor_y=y,
                            detail="left")


def counts(directory):
    out = {}
    for rec in read_records(directory):
        out[rec.kind] = out.get(rec.kind, 0) + 1
    return out


# --- events and captures ---------------------------------------------------

def test_event_followed_by_frame_ref(tmp_path):
    h, clock = mk(tmp_path)
    clock.advance(1000)
    h.submit_event(trace.USER_EVENT, click())
    h.submit_event(trace.SYSTEM_EVENT,
                   SystemEventPayload(action="window_moved", target="main"))
    h.stop()
    recs = read_records(tmp_path / "session")
    kinds = [r.kind for r in recs]
    assert kinds == [trace.USER_EVENT, trace.FRAME_REF,
                     trace.SYSTEM_EVENT, trace.FRAME_REF]
    assert validate_session(tmp_path / "session").ok


def test_submit_rejects_other_kinds(tmp_path):
    h, _ = mk(tmp_path)
    with pytest.raises(UsageError):
        h.submit_event(trace.AUTO_EVENT, trace.AutoEventPayload())
    h.stop()


def test_concurrent_producers_serialize(tmp_path):
    cfg = RecorderConfig(frame_source=CountingFrameSource())
    meta = SessionMeta(session_id=1, wall_clock_start="2026-01-01T00:00:00Z")
    h = start(cfg, tmp_path / "session", meta, tick_thread=False)
    barrier = threading.Barrier(4)

    def producer(k):
        barrier.wait()
        for i in range(25):
            h.submit_event(trace.USER_EVENT, click(x=k, y=i))

    threads = [threading.Thread(target=producer, args=(k,)) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    summary = h.stop()
    got = counts(tmp_path / "session")
    assert got[trace.USER_EVENT] == 100
    assert got[trace.FRAME_REF] == 100
    assert summary.counts[trace.USER_EVENT] == 100
    report = validate_session(tmp_path / "session")
    assert report.ok, report.summary()
    recs = read_records(tmp_path / "session")
    event_kinds = (trace.USER_EVENT, trace.SYSTEM_EVENT, trace.AUTO_EVENT)
    for i, rec in enumerate(recs):
        if rec.kind in event_kinds:
            assert recs[i + 1].kind == trace.FRAME_REF


def test_on_frame_hook_sees_frames_in_order(tmp_path):
    h, clock = mk(tmp_path)
    seen = []
    h.on_frame = lambda fseq, t_us, jpeg: seen.append(fseq)
    for _ in range(5):
        clock.advance(10_000)
        h.submit_event(trace.USER_EVENT, click())
    h.stop()
    assert seen == [0, 1, 2, 3, 4]


# --- idle auto-capture -----------------------------------------------------

def test_quiet_2050ms_yields_four_autos(tmp_path):
    h, clock = mk(tmp_path, period_ms=500)
    emitted = []
    while clock.t < 2_050_000:
        clock.advance(10_000)
        if h.tick_auto_capture():
            emitted.append(clock.t)
    h.stop()
    assert counts(tmp_path / "session")[trace.AUTO_EVENT] == 4
    assert emitted == [500_000, 1_000_000, 1_500_000, 2_000_000]


def test_tick_boundary_exact(tmp_path):
    h, clock = mk(tmp_path, period_ms=500)
    assert h.tick_auto_capture(now_us=499_999) is False
    assert h.tick_auto_capture(now_us=500_000) is True
    h.stop()


def test_busy_trace_no_autos(tmp_path):
    h, clock = mk(tmp_path, period_ms=500)
    while clock.t < 3_000_000:
        clock.advance(10_000)
        if clock.t % 100_000 == 0:
            h.submit_event(trace.USER_EVENT, click())
        h.tick_auto_capture()
    h.stop()
    assert trace.AUTO_EVENT not in counts(tmp_path / "session")


def test_autos_reschedule_from_own_emission(tmp_path):
    h, clock = mk(tmp_path, period_ms=500)
    autos = []
    while clock.t < 2_000_000:
        clock.advance(10_000)
        if clock.t in (300_000, 1_400_000):
            h.submit_event(trace.USER_EVENT, click())
        if h.tick_auto_capture():
            autos.append(clock.t)
    h.stop()
    assert autos == [800_000, 1_300_000, 1_900_000]


def test_period_validation():
    cfg = RecorderConfig(frame_source=CountingFrameSource(),
                         auto_capture_period_ms=49)
    with pytest.raises(trace.ValidationError):
        cfg.validate()


# --- gaze ------------------------------------------------------------------

def test_gaze_rows_written(tmp_path):
    h, clock = mk(tmp_path)
    for k in range(600):
        h.submit_gaze(GazeSample(t_us=k * 16_667, x=100, y=200, valid=True))
    summary = h.stop()
    assert summary.gaze_rows == 600
    assert summary.gaze_rejected == 0
    lines = (tmp_path / "session" / "gaze.csv").read_text().splitlines()
    assert len(lines) == 601  # header + rows


def test_gaze_duplicate_timestamp_rejected(tmp_path):
    h, _ = mk(tmp_path)
    assert h.submit_gaze(GazeSample(100, 1, 1, True)) is True
    assert h.submit_gaze(GazeSample(100, 2, 2, True)) is False
    assert h.submit_gaze(GazeSample(50, 2, 2, True)) is False
    summary = h.stop()
    assert summary.gaze_rows == 1
    assert summary.gaze_rejected == 2


def test_gaze_invalid_flag_is_data(tmp_path):
    h, _ = mk(tmp_path)
    assert h.submit_gaze(GazeSample(10, 5, 5, False)) is True
    h.stop()
    assert "10,5,5,0" in (tmp_path / "session" / "gaze.csv").read_text()


# --- utterances ------------------------------------------------------------

def test_utterance_dated_at_begin(tmp_path):
    h, clock = mk(tmp_path)
    clock.advance(1_000_000)
    token = h.begin_utterance()
    clock.advance(2_000_000)
    wav = make_wav(2000)
    rec = h.end_utterance(token, wav)
    h.stop()
    assert rec.t_us == 1_000_000
    assert rec.payload.duration_ms is None
    stored = (tmp_path / "session" / rec.payload.file).read_bytes()
    assert stored == wav


def test_overlapping_utterances(tmp_path):
    h, clock = mk(tmp_path)
    t1 = h.begin_utterance()
    clock.advance(100_000)
    t2 = h.begin_utterance()
    h.end_utterance(t2, make_wav(50))
    h.end_utterance(t1, make_wav(150))
    h.stop()
    assert t1.path != t2.path
    assert counts(tmp_path / "session")[trace.UTTERANCE_REF] == 2


def test_utterance_double_end(tmp_path):
    h, _ = mk(tmp_path)
    token = h.begin_utterance()
    h.end_utterance(token, make_wav(10))
    with pytest.raises(UsageError):
        h.end_utterance(token, make_wav(10))
    h.stop()


def test_open_utterance_finalized_at_stop(tmp_path):
    h, _ = mk(tmp_path)
    token = h.begin_utterance()
    h.stop()
    blob = tmp_path / "session" / token.path
    assert blob.is_file() and blob.stat().st_size == 0
    report = validate_session(tmp_path / "session")
    assert report.ok
    assert any("zero-byte" in w for w in report.warnings)


# --- stop ------------------------------------------------------------------

def test_stop_summary_matches_recount(tmp_path):
    h, clock = mk(tmp_path)
    for _ in range(3):
        clock.advance(200_000)
        h.submit_event(trace.USER_EVENT, click())
    clock.advance(700_000)
    h.tick_auto_capture()
    summary = h.stop()
    assert summary.counts == counts(tmp_path / "session")
    assert summary.duration_us == clock.t


def test_empty_session_counts(tmp_path):
    h, _ = mk(tmp_path)
    summary = h.stop()
    assert summary.counts == {}
    assert validate_session(tmp_path / "session").ok


def test_double_stop_and_use_after_stop(tmp_path):
    h, _ = mk(tmp_path)
    h.stop()
    with pytest.raises(UsageError):
        h.stop()
    with pytest.raises(UsageError):
        h.submit_event(trace.USER_EVENT, click())
    with pytest.raises(UsageError):
        h.submit_gaze(GazeSample(1, 1, 1, True))


def test_config_snapshot_records_bounds(tmp_path):
    h, _ = mk(tmp_path)
    h.stop()
    meta = trace.load_meta(tmp_path / "session")
    assert meta.config_snapshot["screen_width"] == "1024"
    assert meta.auto_capture_period_ms == 500
