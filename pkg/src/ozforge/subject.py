"""Subject-side daemon.

Runs the recorder, streams captured frames to the wizard over the datagram
channel, forwards events and help requests over the control channel, plays
activated help messages as timed cue records, and applies wizard commands
(undo, message activation) through a host-application adapter.

The network is strictly optional: with offline=True everything is recorded
locally and nothing is sent. Gaze data never leaves the machine unless
forward_gaze is set.
"""

from __future__ import annotations

import io
import logging
import queue
import socket
import threading
import time
import wave
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol

from PIL import Image

from . import recorder, store, trace, wire
from .gaze import GazeSample

log = logging.getLogger("ozforge.subject")

DEFAULT_FRAME_RATE_CAP = 10.0  # frames/s actually transmitted
VISUAL_CUE_MS = 1500           # display time for text/animation cues
GAZE_BATCH_ROWS = 25
SEND_QUEUE_FRAMES = 8


class AgentError(Exception):
    """Agent lifecycle failure (wizard unreachable, busy, bad usage)."""


class HostAppAdapter(Protocol):
    """Behavioral interface to the application the subject is using."""

    def apply_action(self, action: str) -> str: ...

    def undo(self, n: int) -> str: ...

    def current_state_id(self) -> str: ...


class ActionStackApp:
    """Deterministic demo host application: named actions push onto a
    stack, undo pops. State id is the stack joined with "/", or "initial"
    when empty, so any action history maps to exactly one id."""

    def __init__(self):
        self._stack: list[str] = []

    def apply_action(self, action: str) -> str:
        self._stack.append(action)
        return self.current_state_id()

    def undo(self, n: int) -> str:
        if n > 0:
            del self._stack[max(0, len(self._stack) - n):]
        return self.current_state_id()

    def current_state_id(self) -> str:
        return "/".join(self._stack) if self._stack else "initial"

    def action_count(self) -> int:
        return len(self._stack)


@dataclass
class AgentConfig:
    store_dir: Path
    session_dir: Path
    recorder: recorder.RecorderConfig
    wizard_host: str = "127.0.0.1"
    control_port: int = wire.DEFAULT_CONTROL_PORT
    frame_port: int = wire.DEFAULT_FRAME_PORT
    offline: bool = False
    forward_gaze: bool = False
    frame_rate_cap: float = DEFAULT_FRAME_RATE_CAP
    session_id: int = 1
    subject_label: str = "subject"
    connect_timeout: float = 5.0
    # Extra key/value pairs merged into SessionMeta.config_snapshot, so a
    # front end can persist the exact flags a run was launched with.
    extra_snapshot: dict[str, str] = field(default_factory=dict)


@dataclass
class LinkStats:
    frames_enqueued: int = 0
    frames_sent: int = 0
    frames_rate_capped: int = 0
    frames_dropped_full: int = 0
    datagrams_sent: int = 0
    events_forwarded: int = 0
    requests_sent: int = 0
    reports_sent: int = 0
    commands_received: int = 0
    undo_clamps: int = 0
    gaze_rows_forwarded: int = 0


@dataclass
class AgentSummary:
    recorder: recorder.SessionSummary
    link: LinkStats
    final_state_id: str


def _record_to_wire(rec: trace.TraceRecord) -> dict:
    return {"seq": rec.seq, "t_us": rec.t_us, "kind": rec.kind,
            "payload": asdict(rec.payload)}


def _wav_duration_ms(path: Path) -> int | None:
    try:
        with wave.open(str(path), "rb") as w:
            rate = w.getframerate()
            if rate <= 0:
                return None
            return w.getnframes() * 1000 // rate
    except (OSError, wave.Error, EOFError):
        return None


class SubjectAgent:
    """One live subject session. Construct via run()."""

    def __init__(self, config: AgentConfig,
                 adapter: Optional[HostAppAdapter] = None,
                 clock: Optional[Callable[[], int]] = None):
        self.config = config
        self.adapter: HostAppAdapter = adapter if adapter is not None \
            else ActionStackApp()
        self._clock = clock
        self.stats = LinkStats()
        self.store: store.Store | None = None
        self.rec: recorder.RecorderHandle | None = None
        self._control: socket.socket | None = None
        self._frame_sock: socket.socket | None = None
        self._send_lock = threading.Lock()
        self._frame_q: queue.Queue = queue.Queue(maxsize=SEND_QUEUE_FRAMES)
        self._event_q: queue.SimpleQueue = queue.SimpleQueue()
        self._sender_threads: list[threading.Thread] = []
        self._reader_thread: threading.Thread | None = None
        self._playbacks: list[threading.Thread] = []
        self._stopping = threading.Event()
        self._gaze_pending: list[str] = []
        self._gaze_batch_seq = 0
        self._stopped = False

    # -- lifecycle --------------------------------------------------------

    def start(self) -> "SubjectAgent":
        # The store must load before any network activity; a bad corpus
        # aborts the run entirely.
        self.store = store.load_store(self.config.store_dir)
        if not self.config.offline:
            self._connect()
        snapshot = {
            "wizard_host": self.config.wizard_host,
            "offline": str(self.config.offline),
            "forward_gaze": str(self.config.forward_gaze),
            "frame_rate_cap": str(self.config.frame_rate_cap),
        }
        snapshot.update(self.config.extra_snapshot)
        meta = trace.SessionMeta(
            session_id=self.config.session_id,
            subject_label=self.config.subject_label,
            config_snapshot=snapshot)
        self.rec = recorder.start(self.config.recorder, self.config.session_dir,
                                  meta, clock=self._clock)
        self.rec.on_frame = self._on_frame
        self.rec.on_event = self._on_event
        if not self.config.offline:
            self._reader_thread = threading.Thread(
                target=self._control_reader, name="ozforge-control-reader",
                daemon=True)
            self._reader_thread.start()
            for target, name in ((self._frame_sender, "ozforge-frame-sender"),
                                 (self._event_sender, "ozforge-event-sender")):
                t = threading.Thread(target=target, name=name, daemon=True)
                t.start()
                self._sender_threads.append(t)
        return self

    def _connect(self) -> None:
        cfg = self.config
        try:
            self._control = socket.create_connection(
                (cfg.wizard_host, cfg.control_port), timeout=cfg.connect_timeout)
        except OSError as e:
            raise AgentError(f"wizard unreachable at "
                             f"{cfg.wizard_host}:{cfg.control_port}: {e}")
        hello = wire.ControlMessage(type="hello", body={
            "session_id": cfg.session_id, "subject": cfg.subject_label})
        self._control.sendall(wire.encode_control(hello))
        decoder = wire.ControlDecoder()
        reply = None
        deadline = time.monotonic() + cfg.connect_timeout
        while reply is None:
            if time.monotonic() > deadline:
                self._control.close()
                raise AgentError("wizard did not answer hello")
            try:
                data = self._control.recv(4096)
            except socket.timeout:
                continue
            if not data:
                self._control.close()
                raise AgentError("wizard closed the connection during hello")
            msgs = decoder.feed(data)
            if msgs:
                reply = msgs[0]
        if reply.type != "hello" or reply.body.get("status") != "ok":
            status = reply.body.get("status", reply.type)
            self._control.close()
            raise AgentError(f"wizard refused session: {status}")
        self._control.settimeout(None)
        self._frame_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self._frame_sock.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF,
                                        1 << 22)
        except OSError:
            pass
        self._frame_sock.connect((cfg.wizard_host, cfg.frame_port))

    def stop(self) -> AgentSummary:
        if self._stopped:
            raise AgentError("agent already stopped")
        self._stopped = True
        self._stopping.set()
        for t in list(self._playbacks):
            t.join(timeout=10)
        self._flush_gaze()
        assert self.rec is not None
        summary = self.rec.stop()
        # sentinels let the senders drain everything queued before the stop
        self._frame_q.put(None)
        self._event_q.put(None)
        for t in self._sender_threads:
            t.join(timeout=5)
        if self._control is not None:
            try:
                self._control.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        if self._reader_thread is not None:
            self._reader_thread.join(timeout=5)
        if self._control is not None:
            self._control.close()
        if self._frame_sock is not None:
            self._frame_sock.close()
        return AgentSummary(recorder=summary, link=self.stats,
                            final_state_id=self.adapter.current_state_id())

    # -- sending ----------------------------------------------------------

    def _send_control(self, msg: wire.ControlMessage) -> bool:
        if self._control is None:
            return False
        try:
            with self._send_lock:
                self._control.sendall(wire.encode_control(msg))
            return True
        except OSError as e:
            log.warning("control send failed: %s", e)
            return False

    def _send_datagrams(self, datagrams: list[bytes]) -> None:
        if self._frame_sock is None:
            return
        for d in datagrams:
            try:
                self._frame_sock.send(d)
                self.stats.datagrams_sent += 1
            except OSError as e:
                log.warning("frame send failed: %s", e)
                return

    def _on_frame(self, frame_seq: int, t_us: int, jpeg: bytes) -> None:
        # Runs under the recorder lock: enqueue only, drop when full. Local
        # records always win over transmission.
        if self.config.offline:
            return
        self.stats.frames_enqueued += 1
        try:
            self._frame_q.put_nowait((frame_seq, t_us, jpeg))
        except queue.Full:
            self.stats.frames_dropped_full += 1

    def _frame_sender(self) -> None:
        min_interval = 1.0 / self.config.frame_rate_cap \
            if self.config.frame_rate_cap > 0 else 0.0
        last_send: float | None = None
        while True:
            item = self._frame_q.get()
            if item is None:
                return
            frame_seq, t_us, jpeg = item
            now = time.monotonic()
            if last_send is not None and now - last_send < min_interval:
                self.stats.frames_rate_capped += 1
                continue
            last_send = now
            self._send_datagrams(wire.chunk_frame(
                jpeg, self.config.session_id, frame_seq, t_us))
            self.stats.frames_sent += 1

    def _on_event(self, rec: trace.TraceRecord) -> None:
        # Runs under the recorder lock: enqueue only. The sender batches
        # whatever has accumulated into one event_batch message.
        if not self.config.offline:
            self._event_q.put(rec)

    def _event_sender(self) -> None:
        while True:
            item = self._event_q.get()
            if item is None:
                return
            batch = [item]
            while True:
                try:
                    nxt = self._event_q.get_nowait()
                except queue.Empty:
                    break
                if nxt is None:
                    self._event_q.put(None)  # keep the sentinel for exit
                    break
                batch.append(nxt)
            sent = self._send_control(wire.ControlMessage(
                type="event_batch",
                body={"events": [_record_to_wire(r) for r in batch]}))
            if sent:
                self.stats.events_forwarded += len(batch)

    # -- producer API -----------------------------------------------------

    def _require_running(self) -> None:
        if self.rec is None:
            raise AgentError("agent not started")
        if self._stopped:
            raise AgentError("agent already stopped")

    def apply_action(self, action: str, cursor: tuple[int, int] = (0, 0)) -> str:
        """Perform one named action on the host application and record it
        as a user event (click instrumentation)."""
        self._require_running()
        state = self.adapter.apply_action(action)
        self.submit_event(trace.USER_EVENT, trace.UserEventPayload(
            action="mouse_click", cursor_x=cursor[0], cursor_y=cursor[1],
            detail=action))
        return state

    def submit_event(self, kind: str, payload) -> int:
        """Record one user or system event; forwarding to the wizard rides
        the on_event hook so the wire sees log order."""
        self._require_running()
        assert self.rec is not None
        return self.rec.submit_event(kind, payload)

    def submit_help_request(self, request: trace.HelpRequestPayload) -> int:
        """Log the request locally and send it to the wizard. A malformed
        request is rejected before either happens."""
        self._require_running()
        request.validate()
        assert self.rec is not None
        rec = self.rec.append_record(trace.HELP_REQUEST, request)
        sent = self._send_control(wire.ControlMessage(
            type="help_request", body={
                "seq": rec.seq, "t_us": rec.t_us,
                "request_type": request.request_type,
                "object_kind": request.object_kind,
                "object_id": request.object_id}))
        if sent:
            self.stats.requests_sent += 1
        return rec.seq

    def submit_gaze(self, sample: GazeSample) -> bool:
        self._require_running()
        assert self.rec is not None
        accepted = self.rec.submit_gaze(sample)
        if accepted and self.config.forward_gaze and not self.config.offline:
            self._gaze_pending.append(
                f"{sample.t_us},{sample.x},{sample.y},{int(sample.valid)}")
            if len(self._gaze_pending) >= GAZE_BATCH_ROWS:
                self._flush_gaze()
        return accepted

    def _flush_gaze(self) -> None:
        if not self._gaze_pending or self.config.offline:
            self._gaze_pending.clear()
            return
        payload = "\n".join(self._gaze_pending).encode("ascii")
        self._gaze_pending.clear()
        self._gaze_batch_seq += 1
        self._send_datagrams(wire.chunk_frame(
            payload, self.config.session_id, self._gaze_batch_seq,
            0, msg_type=wire.MSG_GAZE_BATCH))
        self.stats.gaze_rows_forwarded += payload.count(b"\n") + 1

    def begin_utterance(self) -> recorder.UtteranceToken:
        self._require_running()
        assert self.rec is not None
        return self.rec.begin_utterance()

    def end_utterance(self, token: recorder.UtteranceToken,
                      wav_bytes: bytes) -> trace.TraceRecord:
        self._require_running()
        assert self.rec is not None
        return self.rec.end_utterance(token, wav_bytes)

    def send_heartbeat(self) -> None:
        self._send_control(wire.ControlMessage(type="heartbeat", body={}))

    def wait_for_playbacks(self, timeout: float | None = None) -> bool:
        """Block until every playback started so far has finished; returns
        whether they all did within the timeout."""
        deadline = None if timeout is None else time.monotonic() + timeout
        for t in list(self._playbacks):
            t.join(None if deadline is None
                   else max(0.0, deadline - time.monotonic()))
            if t.is_alive():
                return False
        return True

    # -- playback ---------------------------------------------------------

    def activate_message(self, message_id: str) -> bool:
        """Resolve and play one help message: cue records at their actual
        times, attachments as help-window frames, completion report to the
        wizard. Unknown ids produce an error report and no playback."""
        self._require_running()
        assert self.store is not None and self.rec is not None
        msg = self.store.messages.get(message_id)
        if msg is None or msg.timeline is None:
            log.warning("activation of unknown message %r", message_id)
            if self._send_control(wire.ControlMessage(
                    type="playback_report",
                    body={"message_id": message_id, "status": "unknown_id"})):
                self.stats.reports_sent += 1
            return False
        self.rec.append_record(trace.MESSAGE_ACTIVATION,
                               trace.MessageActivationPayload(message_id=message_id))
        for rel in msg.attachments:
            self._record_attachment(rel)
        t = threading.Thread(target=self._play, args=(msg,),
                             name=f"ozforge-play-{message_id}", daemon=True)
        t.start()
        self._playbacks.append(t)
        return True

    def _record_attachment(self, rel: str) -> None:
        assert self.store is not None and self.rec is not None
        path = Path(self.config.store_dir) / rel
        try:
            data = path.read_bytes()
            with Image.open(io.BytesIO(data)) as img:
                width, height = img.size
        except OSError as e:
            log.warning("attachment %s unreadable, skipped: %s", rel, e)
            return
        self.rec.record_frame(data, width, height)

    def _cue_duration_ms(self, cue: store.SmilCue) -> int:
        if cue.kind == "audio":
            dur = _wav_duration_ms(Path(self.config.store_dir) / cue.src)
            if dur is not None:
                return dur
            log.warning("audio cue %s has no readable duration", cue.src)
        return VISUAL_CUE_MS

    def _play(self, msg: store.HelpMessage) -> None:
        assert msg.timeline is not None and self.rec is not None
        schedule = []
        for cue in msg.timeline.cues:
            dur = self._cue_duration_ms(cue)
            schedule.append((cue.begin_ms, 0, "start", cue))
            schedule.append((cue.begin_ms + dur, 1, "end", cue))
        schedule.sort(key=lambda e: (e[0], e[1]))
        t0 = time.monotonic()
        started: list[store.SmilCue] = []
        interrupted = False
        for at_ms, _, phase, cue in schedule:
            delay = t0 + at_ms / 1000.0 - time.monotonic()
            if delay > 0 and self._stopping.wait(delay):
                interrupted = True
                break
            try:
                self.rec.append_record(trace.PLAYBACK_CUE, trace.PlaybackCuePayload(
                    message_id=msg.id, cue_kind=cue.kind, cue_src=cue.src,
                    phase=phase))
            except trace.UsageError:
                return  # recorder already closed; nothing more to log
            if phase == "start":
                started.append(cue)
            else:
                started.remove(cue)
        if interrupted:
            # keep every start paired with an end inside the session
            for cue in started:
                try:
                    self.rec.append_record(trace.PLAYBACK_CUE,
                                           trace.PlaybackCuePayload(
                                               message_id=msg.id, cue_kind=cue.kind,
                                               cue_src=cue.src, phase="end"))
                except trace.UsageError:
                    return
        status = "interrupted" if interrupted else "completed"
        if self._send_control(wire.ControlMessage(
                type="playback_report", body={
                    "message_id": msg.id, "status": status,
                    "cues": len(msg.timeline.cues)})):
            self.stats.reports_sent += 1

    # -- wizard command handling ------------------------------------------

    def _control_reader(self) -> None:
        assert self._control is not None
        decoder = wire.ControlDecoder()
        while not self._stopping.is_set():
            try:
                data = self._control.recv(65536)
            except OSError:
                return
            if not data:
                return
            try:
                msgs = decoder.feed(data)
            except wire.ProtocolError as e:
                log.error("control stream from wizard failed: %s", e)
                return
            for msg in msgs:
                try:
                    self.apply_wizard_command(msg)
                except Exception:
                    log.exception("wizard command %s failed", msg.type)

    def apply_wizard_command(self, msg: wire.ControlMessage) -> None:
        """Dispatch one wizard-issued control message: log it, then act."""
        if self.rec is None or self.rec.stopped:
            log.warning("wizard command %s after stop, ignored", msg.type)
            return
        if msg.type == "heartbeat":
            return
        self.stats.commands_received += 1
        if msg.type in ("activate_message", "general_message"):
            command = "activate" if msg.type == "activate_message" \
                else "general_message"
            mid = str(msg.body.get("id", ""))
            self.rec.append_record(trace.WIZARD_COMMAND, trace.WizardCommandPayload(
                command=command, arg=mid))
            self.activate_message(mid)
        elif msg.type == "undo":
            n = int(msg.body.get("n", 1))
            self.rec.append_record(trace.WIZARD_COMMAND, trace.WizardCommandPayload(
                command="undo", arg=str(n)))
            count = getattr(self.adapter, "action_count", None)
            if count is not None and n > count():
                self.stats.undo_clamps += 1
                log.warning("undo(%d) exceeds history of %d, clamped", n, count())
            self.adapter.undo(n)
        else:
            log.warning("unexpected control type %r from wizard", msg.type)


def run(config: AgentConfig, adapter: Optional[HostAppAdapter] = None,
        clock: Optional[Callable[[], int]] = None) -> SubjectAgent:
    """Load the store, connect to the wizard (unless offline), open the
    session, and start the streaming threads."""
    return SubjectAgent(config, adapter=adapter, clock=clock).start()
