"""Multi-source session recorder.

Producers (event adapters, the gaze stream, utterance capture, the idle
ticker) may call in from any thread; one internal lock is the serialization
point where seq and t are assigned, so the persisted log is totally ordered
no matter how submissions interleave.

Every user/system/auto event triggers a screen capture through the
pluggable frame source, and the event record plus its FrameRef are appended
under one lock acquisition, which is what keeps them adjacent in the log.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from . import trace
from .gaze import GazeSample

log = logging.getLogger("ozforge.recorder")

TICK_INTERVAL_MS = 10  # granularity of the built-in idle ticker


@dataclass(frozen=True)
class ScreenFrame:
    jpeg: bytes
    width: int
    height: int


@dataclass
class RecorderConfig:
    frame_source: Callable[[], ScreenFrame]
    auto_capture_period_ms: int = 500
    screen_width: int = 1024
    screen_height: int = 768

    def validate(self) -> None:
        if self.auto_capture_period_ms < 50:
            raise trace.ValidationError("auto_capture_period_ms must be >= 50")
        if self.screen_width <= 0 or self.screen_height <= 0:
            raise trace.ValidationError("screen bounds must be positive")


@dataclass
class UtteranceToken:
    index: int
    record: trace.TraceRecord
    path: str
    finished: bool = False


@dataclass(frozen=True)
class SessionSummary:
    counts: dict[str, int]
    gaze_rows: int
    gaze_rejected: int
    duration_us: int


class RecorderHandle:
    """Live recording session. Obtain via start(); drive with submit_* and
    (when no real-time ticker runs) tick_auto_capture; finish with stop().

    on_frame, when set, is invoked under the serialization lock with
    (frame_seq, t_us, jpeg) right after each FrameRef is appended, so a
    streaming consumer sees frames exactly in log order. on_event likewise
    receives each user/system event record as it lands. Both run under the
    lock: keep them fast, never block on I/O inside them.
    """

    def __init__(self, config: RecorderConfig, session: trace.SessionHandle,
                 tick_thread: bool):
        self.config = config
        self.session = session
        self.on_frame: Optional[Callable[[int, int, bytes], None]] = None
        self.on_event: Optional[Callable[[trace.TraceRecord], None]] = None
        self._lock = threading.Lock()
        self._stopped = False
        self._idle_anchor_us = session.now_us()
        self._last_gaze_t: int | None = None
        self._gaze_rows = 0
        self._gaze_rejected = 0
        self._counts: dict[str, int] = {}
        self._utterances: list[UtteranceToken] = []
        self._ticker: threading.Thread | None = None
        self._ticker_stop = threading.Event()
        if tick_thread:
            self._ticker = threading.Thread(target=self._tick_loop,
                                            name="ozforge-idle-ticker", daemon=True)
            self._ticker.start()

    # -- internal ---------------------------------------------------------

    def _tick_loop(self) -> None:
        while not self._ticker_stop.wait(TICK_INTERVAL_MS / 1000.0):
            try:
                self.tick_auto_capture()
            except trace.UsageError:
                return

    def _append(self, kind: str, payload) -> trace.TraceRecord:
        rec = self.session.append(kind, payload)
        self._counts[kind] = self._counts.get(kind, 0) + 1
        return rec

    def _store_frame(self, jpeg: bytes, width: int, height: int) -> trace.TraceRecord:
        frame_seq, rel = self.session.store_frame(jpeg)
        rec = self._append(trace.FRAME_REF, trace.FrameRefPayload(
            frame_seq=frame_seq, file=rel, width=width,
            height=height, byte_len=len(jpeg)))
        if self.on_frame is not None:
            self.on_frame(frame_seq, rec.t_us, jpeg)
        return rec

    def _capture_frame(self) -> trace.TraceRecord:
        frame = self.config.frame_source()
        return self._store_frame(frame.jpeg, frame.width, frame.height)

    def _require_running(self) -> None:
        if self._stopped:
            raise trace.UsageError("recorder already stopped")

    # -- producer API -----------------------------------------------------

    def submit_event(self, kind: str, payload) -> int:
        """Append one user or system event plus its screen capture; returns
        the event's seq. Resets the idle timer."""
        if kind not in (trace.USER_EVENT, trace.SYSTEM_EVENT):
            raise trace.UsageError(f"submit_event does not accept kind {kind!r}")
        with self._lock:
            self._require_running()
            rec = self._append(kind, payload)
            if self.on_event is not None:
                self.on_event(rec)
            self._capture_frame()
            self._idle_anchor_us = rec.t_us
            return rec.seq

    def tick_auto_capture(self, now_us: int | None = None) -> bool:
        """Emit an AutoEvent + capture if the interaction has been idle for
        a full period. Returns whether one was emitted. The built-in ticker
        calls this every few ms; simulations pass explicit times."""
        with self._lock:
            self._require_running()
            if now_us is None:
                now_us = self.session.now_us()
            period_us = self.config.auto_capture_period_ms * 1000
            if now_us - self._idle_anchor_us < period_us:
                return False
            rec = self._append(trace.AUTO_EVENT, trace.AutoEventPayload())
            self._capture_frame()
            # reschedule from this emission, keeping the cadence periodic
            self._idle_anchor_us = rec.t_us
            return True

    def append_record(self, kind: str, payload) -> trace.TraceRecord:
        """Append an agent-level record (requests, activations, commands,
        playback cues) through the serialization point. No screen capture,
        no idle-timer reset."""
        with self._lock:
            self._require_running()
            return self._append(kind, payload)

    def record_frame(self, jpeg: bytes, width: int, height: int) -> trace.TraceRecord:
        """Record an externally produced image (say, the help window region
        during message playback) as a FrameRef. No idle-timer reset."""
        with self._lock:
            self._require_running()
            return self._store_frame(jpeg, width, height)

    def submit_gaze(self, sample: GazeSample) -> bool:
        """Append one gaze row; out-of-order samples are rejected and
        counted, never reordered."""
        with self._lock:
            self._require_running()
            if self._last_gaze_t is not None and sample.t_us <= self._last_gaze_t:
                self._gaze_rejected += 1
                return False
            self.session.gaze_row(sample.t_us, sample.x, sample.y, sample.valid)
            self._last_gaze_t = sample.t_us
            self._gaze_rows += 1
            return True

    def begin_utterance(self) -> UtteranceToken:
        """Date the start of speech: the UtteranceRef enters the log now,
        with its audio blob to follow at end_utterance."""
        with self._lock:
            self._require_running()
            rel = self.session.alloc_audio_path()
            rec = self._append(trace.UTTERANCE_REF,
                               trace.UtteranceRefPayload(file=rel, duration_ms=None))
            token = UtteranceToken(index=len(self._utterances), record=rec, path=rel)
            self._utterances.append(token)
            return token

    def end_utterance(self, token: UtteranceToken, wav_bytes: bytes) -> trace.TraceRecord:
        with self._lock:
            self._require_running()
            if token.finished:
                raise trace.UsageError("utterance already ended")
            self.session.write_audio(token.path, wav_bytes)
            token.finished = True
            return token.record

    def stop(self) -> SessionSummary:
        """Close the session. Open utterances are finalized to empty files
        (the validator flags those as warnings). Double stop is an error."""
        if self._ticker is not None:
            self._ticker_stop.set()
            self._ticker.join()
            self._ticker = None
        with self._lock:
            self._require_running()
            self._stopped = True
            for token in self._utterances:
                if not token.finished:
                    log.warning("utterance %s never ended; writing empty file",
                                token.path)
                    self.session.write_audio(token.path, b"")
                    token.finished = True
            duration = self.session.now_us()
            self.session.close()
            return SessionSummary(counts=dict(self._counts),
                                  gaze_rows=self._gaze_rows,
                                  gaze_rejected=self._gaze_rejected,
                                  duration_us=duration)

    @property
    def stopped(self) -> bool:
        return self._stopped


def start(config: RecorderConfig, directory: str | Path, meta: trace.SessionMeta,
          clock: Callable[[], int] | None = None,
          tick_thread: bool | None = None) -> RecorderHandle:
    """Open a fresh session directory and arm the recorder.

    With the default real clock a background ticker drives auto-capture;
    under an injected clock (simulations) no thread starts and the caller
    ticks explicitly.
    """
    config.validate()
    meta.config_snapshot.setdefault("screen_width", str(config.screen_width))
    meta.config_snapshot.setdefault("screen_height", str(config.screen_height))
    meta = trace.SessionMeta(
        session_id=meta.session_id, subject_label=meta.subject_label,
        wall_clock_start=meta.wall_clock_start,
        auto_capture_period_ms=config.auto_capture_period_ms,
        gaze_rate_hz=meta.gaze_rate_hz, config_snapshot=meta.config_snapshot)
    session = trace.open_session(Path(directory), meta, clock=clock)
    if tick_thread is None:
        tick_thread = clock is None
    return RecorderHandle(config=config, session=session, tick_thread=tick_thread)
