"""Wizard-side service.

Ingests the subject's frame feed (lossy datagrams) and control stream
(events, help requests, playback reports), runs the assistance filter on
each request against the mirrored corpus, and exposes everything to the
console UI over HTTP: JSON snapshots, a push stream of deltas, and command
endpoints for activation, general messages, and undo.

All session state mutates under one lock, so ingestion threads and UI
requests never interleave observably. The frame feed and the control
channel run on independent threads: losing frames cannot stall commands.

The wizard keeps its own append-only action log (wizard.jsonl, same record
grammar as session logs) so its behavior can be audited after a run.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import mimetypes
import queue
import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional

from . import store, trace, wire

log = logging.getLogger("ozforge.wizard")

EVENT_TAIL_LEN = 200
REPORT_TAIL_LEN = 20
LATENCY_TAIL_LEN = 2000
WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
DEFAULT_UI_PORT = 8788


class WizardError(Exception):
    """Command refused or service misused."""


@dataclass
class WizardConfig:
    mirror_dir: Path
    host: str = "127.0.0.1"
    frame_port: int = wire.DEFAULT_FRAME_PORT
    control_port: int = wire.DEFAULT_CONTROL_PORT
    ui_port: int = DEFAULT_UI_PORT
    log_path: Optional[Path] = None    # wizard.jsonl; default: ./wizard.jsonl
    static_dir: Optional[Path] = None  # console bundle served at /
    replay_dir: Optional[Path] = None  # exported replays served at /replay/


def _ws_frame(payload: bytes, opcode: int = 0x1) -> bytes:
    head = bytearray([0x80 | opcode])
    n = len(payload)
    if n < 126:
        head.append(n)
    elif n < 1 << 16:
        head.append(126)
        head += struct.pack(">H", n)
    else:
        head.append(127)
        head += struct.pack(">Q", n)
    return bytes(head) + payload


class WizardService:
    """One wizard run: construct with a config, then start()/stop().

    Python-level command methods (activate, send_general, send_undo) are
    the same code paths the HTTP endpoints call.
    """

    def __init__(self, config: WizardConfig):
        self.config = config
        self.mirror = store.load_mirror(config.mirror_dir)
        self._lock = threading.Lock()
        self._send_lock = threading.Lock()
        self._running = threading.Event()
        self._threads: list[threading.Thread] = []
        self._subs: list[queue.SimpleQueue] = []
        # session state (all guarded by _lock)
        self._subject: dict | None = None
        self._subject_sock: socket.socket | None = None
        self._latest: wire.CompleteFrame | None = None
        self._latest_recv: float | None = None
        self._event_tail: deque = deque(maxlen=EVENT_TAIL_LEN)
        self._events_total = 0
        self._pending_request: dict | None = None
        self._suggestions: list[store.Suggestion] = []
        self._requests_total = 0
        self._reports: deque = deque(maxlen=REPORT_TAIL_LEN)
        self._latencies_ms: deque = deque(maxlen=LATENCY_TAIL_LEN)
        self._commands_sent = 0
        self._gaze_rows = 0
        self._audio_chunks = 0
        self._datagrams_received = 0
        self._reasm = wire.Reassembler()
        # wizard.jsonl
        self._log_file = None
        self._log_seq = 0
        self._log_epoch = time.monotonic_ns() // 1000
        self._log_last_t = 0
        # sockets
        self._udp: socket.socket | None = None
        self._ctl_srv: socket.socket | None = None
        self._http: ThreadingHTTPServer | None = None

    # -- lifecycle --------------------------------------------------------

    def start(self) -> "WizardService":
        cfg = self.config
        log_path = Path(cfg.log_path) if cfg.log_path else Path("wizard.jsonl")
        self._log_file = open(log_path, "a", encoding="utf-8")
        self._udp = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        # Frame bursts arrive 70+ datagrams at a time; the default kernel
        # receive buffer drops under that load, so ask for a few MB.
        try:
            self._udp.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 22)
        except OSError:
            pass
        self._udp.bind((cfg.host, cfg.frame_port))
        self._udp.settimeout(0.2)
        self.frame_port = self._udp.getsockname()[1]
        self._ctl_srv = socket.create_server((cfg.host, cfg.control_port))
        self._ctl_srv.settimeout(0.2)
        self.control_port = self._ctl_srv.getsockname()[1]
        handler = _make_handler(self)
        self._http = ThreadingHTTPServer((cfg.host, cfg.ui_port), handler)
        self._http.daemon_threads = True
        self.ui_port = self._http.server_port
        self._running.set()
        for target, name in ((self._frame_loop, "ozforge-wizard-frames"),
                             (self._accept_loop, "ozforge-wizard-accept"),
                             (self._http.serve_forever, "ozforge-wizard-http")):
            t = threading.Thread(target=target, name=name, daemon=True)
            t.start()
            self._threads.append(t)
        log.info("wizard up: frames udp/%d, control tcp/%d, ui http/%d",
                 self.frame_port, self.control_port, self.ui_port)
        return self

    def stop(self) -> None:
        if not self._running.is_set():
            return
        self._running.clear()
        with self._lock:
            conn = self._subject_sock
            self._subject_sock = None
            self._subject = None
        if conn is not None:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()
        assert self._http is not None
        self._http.shutdown()
        self._http.server_close()
        for s in (self._udp, self._ctl_srv):
            if s is not None:
                s.close()
        for t in self._threads:
            t.join(timeout=5)
        if self._log_file is not None:
            self._log_file.close()
            self._log_file = None

    @property
    def running(self) -> bool:
        return self._running.is_set()

    # -- push stream ------------------------------------------------------

    def subscribe(self) -> queue.SimpleQueue:
        q: queue.SimpleQueue = queue.SimpleQueue()
        with self._lock:
            self._subs.append(q)
        return q

    def unsubscribe(self, q: queue.SimpleQueue) -> None:
        with self._lock:
            if q in self._subs:
                self._subs.remove(q)

    def _push(self, delta: dict) -> None:
        with self._lock:
            subs = list(self._subs)
        for q in subs:
            if q.qsize() < 1000:  # a stuck client must not hoard memory
                q.put(delta)

    # -- frame channel ----------------------------------------------------

    def _frame_loop(self) -> None:
        assert self._udp is not None
        while self._running.is_set():
            try:
                data, _ = self._udp.recvfrom(65536)
            except socket.timeout:
                continue
            except OSError:
                return
            self._datagrams_received += 1
            try:
                chunk = wire.parse_datagram(data)
            except wire.ChunkError as e:
                if e.reason == "crc_mismatch":
                    self._reasm.note_crc_failure()
                continue
            if chunk.msg_type == wire.MSG_FRAME:
                frame = self._reasm.feed(chunk)
                if frame is not None:
                    with self._lock:
                        self._latest = frame
                        self._latest_recv = time.monotonic()
                    self._push({"delta": "frame_meta",
                                "frame_seq": frame.frame_seq,
                                "t_us": frame.t_us,
                                "byte_len": len(frame.data)})
            elif chunk.msg_type == wire.MSG_GAZE_BATCH:
                with self._lock:
                    self._gaze_rows += chunk.payload.count(b"\n") + 1
            elif chunk.msg_type == wire.MSG_AUDIO:
                with self._lock:
                    self._audio_chunks += 1

    # -- control channel --------------------------------------------------

    def _accept_loop(self) -> None:
        assert self._ctl_srv is not None
        while self._running.is_set():
            try:
                conn, _ = self._ctl_srv.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            t = threading.Thread(target=self._subject_loop, args=(conn,),
                                 name="ozforge-wizard-subject", daemon=True)
            t.start()

    def _subject_loop(self, conn: socket.socket) -> None:
        decoder = wire.ControlDecoder()
        conn.settimeout(0.2)
        claimed = False
        try:
            while self._running.is_set():
                try:
                    data = conn.recv(65536)
                except socket.timeout:
                    continue
                except OSError:
                    break
                if not data:
                    break
                try:
                    msgs = decoder.feed(data)
                except wire.ProtocolError as e:
                    log.error("subject control stream failed: %s", e)
                    break
                for msg in msgs:
                    if not claimed:
                        if msg.type != "hello":
                            log.warning("first message was %r, not hello;"
                                        " closing", msg.type)
                            return
                        claimed = self._handle_hello(conn, msg)
                        if not claimed:
                            return
                    else:
                        self._on_control(msg)
        finally:
            if claimed:
                with self._lock:
                    if self._subject_sock is conn:
                        self._subject_sock = None
                        self._subject = None
                log.info("subject disconnected")
            try:
                conn.close()
            except OSError:
                pass

    def _handle_hello(self, conn: socket.socket, msg: wire.ControlMessage) -> bool:
        with self._lock:
            free = self._subject_sock is None
            if free:
                self._subject_sock = conn
                self._subject = {
                    "session_id": msg.body.get("session_id"),
                    "subject": msg.body.get("subject", ""),
                }
        status = "ok" if free else "busy"
        try:
            conn.sendall(wire.encode_control(
                wire.ControlMessage(type="hello", body={"status": status})))
        except OSError:
            status = "lost"
            if free:
                with self._lock:
                    self._subject_sock = None
                    self._subject = None
        if status == "busy":
            log.warning("second subject hello refused: busy")
        return status == "ok"

    def _on_control(self, msg: wire.ControlMessage) -> None:
        if msg.type == "event_batch":
            events = msg.body.get("events", [])
            with self._lock:
                self._event_tail.extend(events)
                self._events_total += len(events)
            for e in events:
                self._push({"delta": "event", "event": e})
        elif msg.type == "help_request":
            self._on_help_request(msg.body)
        elif msg.type == "playback_report":
            with self._lock:
                self._reports.append(msg.body)
            self._push({"delta": "report", "report": msg.body})
        elif msg.type == "heartbeat":
            pass
        else:
            log.warning("unexpected control type %r from subject", msg.type)

    def _on_help_request(self, body: dict) -> None:
        try:
            request = trace.HelpRequestPayload(
                request_type=str(body.get("request_type", "")),
                object_kind=str(body.get("object_kind", "")),
                object_id=str(body.get("object_id", "")))
            request.validate()
        except trace.ValidationError as e:
            log.warning("malformed help request dropped: %s", e)
            return
        t0 = time.perf_counter()
        suggestions = store.filter_messages(self.mirror, request)
        latency_ms = (time.perf_counter() - t0) * 1000
        with self._lock:
            self._pending_request = dict(body)
            self._suggestions = suggestions
            self._requests_total += 1
            self._latencies_ms.append(latency_ms)
        self._push({"delta": "request", "request": dict(body)})
        self._push({"delta": "suggestions",
                    "request_seq": body.get("seq"),
                    "suggestions": [self._suggestion_dict(s)
                                    for s in suggestions]})

    def _suggestion_dict(self, s: store.Suggestion) -> dict:
        m = self.mirror.messages.get(s.message_id)
        return {"message_id": s.message_id, "score": s.score, "rank": s.rank,
                "title": m.title if m else ""}

    # -- wizard commands --------------------------------------------------

    def _send_to_subject(self, mtype: str, body: dict) -> None:
        with self._lock:
            conn = self._subject_sock
        if conn is None:
            raise WizardError("no subject session")
        try:
            with self._send_lock:
                conn.sendall(wire.encode_control(
                    wire.ControlMessage(type=mtype, body=body)))
        except OSError as e:
            raise WizardError(f"subject link lost: {e}")
        with self._lock:
            self._commands_sent += 1

    def _log_action(self, command: str, arg: str) -> None:
        payload = trace.WizardCommandPayload(command=command, arg=arg)
        now = time.monotonic_ns() // 1000 - self._log_epoch
        with self._lock:
            t = max(now, self._log_last_t)
            self._log_last_t = t
            rec = trace.TraceRecord(seq=self._log_seq, t_us=t,
                                    kind=trace.WIZARD_COMMAND, payload=payload)
            self._log_seq += 1
            if self._log_file is not None:
                self._log_file.write(trace.encode_record(rec) + "\n")
                self._log_file.flush()

    def activate(self, message_id: str) -> None:
        """Send the pending (or any valid) message to the subject."""
        if not self.mirror.has_message(message_id):
            raise WizardError(f"unknown message id {message_id!r}")
        self._send_to_subject("activate_message", {"id": message_id})
        self._log_action("activate", message_id)
        with self._lock:
            self._pending_request = None
            self._suggestions = []

    def send_general(self, message_id: str) -> None:
        if not self.mirror.has_message(message_id):
            raise WizardError(f"unknown message id {message_id!r}")
        if not self.mirror.is_general(message_id):
            raise WizardError(f"message {message_id!r} is not general")
        self._send_to_subject("general_message", {"id": message_id})
        self._log_action("general_message", message_id)

    def send_undo(self, n: int) -> None:
        if n < 1:
            raise WizardError("undo count must be >= 1")
        self._send_to_subject("undo", {"n": n})
        self._log_action("undo", str(n))

    # -- snapshots --------------------------------------------------------

    def latest_frame(self) -> wire.CompleteFrame | None:
        with self._lock:
            return self._latest

    def latencies_ms(self) -> list[float]:
        with self._lock:
            return list(self._latencies_ms)

    def state_snapshot(self) -> dict:
        with self._lock:
            frame = None
            if self._latest is not None:
                age_ms = None
                if self._latest_recv is not None:
                    age_ms = int((time.monotonic() - self._latest_recv) * 1000)
                frame = {"frame_seq": self._latest.frame_seq,
                         "t_us": self._latest.t_us,
                         "byte_len": len(self._latest.data),
                         "age_ms": age_ms}
            counters = self._reasm.counters()
            return {
                "subject": dict(self._subject) if self._subject else None,
                "latest_frame": frame,
                "event_tail": list(self._event_tail),
                "pending_request": dict(self._pending_request)
                if self._pending_request else None,
                "suggestions": [self._suggestion_dict(s)
                                for s in self._suggestions],
                "reports": list(self._reports),
                "link": {
                    "datagrams_received": self._datagrams_received,
                    "frames_delivered": counters["delivered"],
                    "frames_dropped": counters["dropped_incomplete"],
                    "crc_failures": counters["crc_failures"],
                    "stale_discarded": counters["stale_discarded"],
                    "events_total": self._events_total,
                    "requests_total": self._requests_total,
                    "commands_sent": self._commands_sent,
                    "gaze_rows": self._gaze_rows,
                    "audio_chunks": self._audio_chunks,
                },
                "mirror": {
                    "count": len(self.mirror.messages),
                    "messages": [{"id": m.id, "title": m.title,
                                  "general": m.general}
                                 for m in sorted(self.mirror.messages.values(),
                                                 key=lambda m: m.id)],
                },
            }


def _make_handler(service: WizardService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            log.debug("ui: " + fmt, *args)

        def _json(self, code: int, obj: dict) -> None:
            body = json.dumps(obj).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _bytes(self, code: int, content_type: str, body: bytes) -> None:
            self.send_response(code)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _read_body(self) -> dict:
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b""
            if not raw:
                return {}
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError:
                raise WizardError("request body is not JSON")
            if not isinstance(obj, dict):
                raise WizardError("request body must be a JSON object")
            return obj

        def _serve_file(self, root: Path, rel: str) -> None:
            target = (root / rel).resolve()
            if not target.is_relative_to(root.resolve()) \
                    or not target.is_file():
                self._json(404, {"error": f"no such file: {rel}"})
                return
            ctype = mimetypes.guess_type(target.name)[0] \
                or "application/octet-stream"
            self._bytes(200, ctype, target.read_bytes())

        def do_GET(self):
            path = self.path.split("?", 1)[0]
            if path == "/state":
                self._json(200, service.state_snapshot())
            elif path == "/frame/latest":
                frame = service.latest_frame()
                if frame is None:
                    self._json(404, {"error": "no frame yet"})
                else:
                    self._bytes(200, "image/jpeg", frame.data)
            elif path == "/stream":
                self._stream()
            elif path.startswith("/replay/") and service.config.replay_dir:
                self._serve_file(Path(service.config.replay_dir),
                                 path[len("/replay/"):])
            elif service.config.static_dir:
                rel = "index.html" if path == "/" else path.lstrip("/")
                self._serve_file(Path(service.config.static_dir), rel)
            else:
                self._json(404, {"error": f"no route for {path}"})

        def do_POST(self):
            path = self.path.split("?", 1)[0]
            try:
                body = self._read_body()
                if path == "/activate":
                    service.activate(str(body.get("id", "")))
                elif path == "/general":
                    service.send_general(str(body.get("id", "")))
                elif path == "/undo":
                    n = body.get("n", 1)
                    if not isinstance(n, int) or isinstance(n, bool):
                        raise WizardError("undo count must be an integer")
                    service.send_undo(n)
                else:
                    self._json(404, {"error": f"no route for {path}"})
                    return
            except WizardError as e:
                text = str(e)
                code = 404 if "unknown message id" in text else \
                    409 if "no subject" in text or "not general" in text else 400
                self._json(code, {"error": text})
                return
            self._json(200, {"ok": True})

        def _stream(self):
            key = self.headers.get("Sec-WebSocket-Key")
            if self.headers.get("Upgrade", "").lower() != "websocket" or not key:
                self._json(400, {"error": "websocket upgrade required"})
                return
            accept = base64.b64encode(hashlib.sha1(
                (key + WS_GUID).encode("ascii")).digest()).decode("ascii")
            self.send_response(101, "Switching Protocols")
            self.send_header("Upgrade", "websocket")
            self.send_header("Connection", "Upgrade")
            self.send_header("Sec-WebSocket-Accept", accept)
            self.end_headers()
            self.wfile.flush()
            q = service.subscribe()
            self.close_connection = True
            try:
                while service.running:
                    try:
                        delta = q.get(timeout=0.5)
                    except queue.Empty:
                        continue
                    payload = json.dumps(delta).encode("utf-8")
                    self.wfile.write(_ws_frame(payload))
                    self.wfile.flush()
            except OSError:
                pass  # client went away
            finally:
                service.unsubscribe(q)

    return Handler


def serve(config: WizardConfig) -> WizardService:
    """Load the mirror and bring up all three listeners."""
    return WizardService(config).start()
