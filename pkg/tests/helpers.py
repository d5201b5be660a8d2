"""Shared test utilities: independent oracles and synthetic data builders."""

from __future__ import annotations

import io
import math
import random
import socket
import struct
import threading
import time
from fractions import Fraction

from PIL import Image

from ozforge import wire
from ozforge.gaze import Fixation, FixationParams, GazeSample


def brute_force_fixations(samples: list[GazeSample],
                          params: FixationParams) -> list[Fixation]:
    """Reference fixation detector by window enumeration.

    For every start index, every candidate window is materialized as a slice
    and its dispersion recomputed from scratch with max()/min(); the longest
    qualifying window per start is kept (dispersion can only grow with the
    window, so the scan may stop at the first violation). Selection is then
    greedy left to right over non-overlapping candidates. Centroids use
    Fraction arithmetic: floor(mean + 1/2).
    """
    min_dur_us = params.min_duration_ms * 1000
    n = len(samples)
    candidates = {}
    for i in range(n):
        if not samples[i].valid:
            continue
        best_j = None
        for j in range(i + 1, n):
            window = samples[i:j + 1]
            if not window[-1].valid:
                break
            xs = [s.x for s in window]
            ys = [s.y for s in window]
            if (max(xs) - min(xs)) + (max(ys) - min(ys)) > params.dispersion_px:
                break
            best_j = j
        if best_j is None:
            continue
        if samples[best_j].t_us - samples[i].t_us >= min_dur_us:
            candidates[i] = best_j
    out = []
    limit = -1
    for i in sorted(candidates):
        if i <= limit:
            continue
        j = candidates[i]
        window = samples[i:j + 1]
        count = len(window)
        cx = math.floor(Fraction(sum(s.x for s in window), count) + Fraction(1, 2))
        cy = math.floor(Fraction(sum(s.y for s in window), count) + Fraction(1, 2))
        out.append(Fixation(start_us=window[0].t_us,
                            duration_us=window[-1].t_us - window[0].t_us,
                            cx=cx, cy=cy, n_samples=count))
        limit = j
    return out


def random_trace(rng: random.Random, max_samples: int = 300,
                 invalid_rate: float = 0.03) -> list[GazeSample]:
    """Synthetic gaze: dwell clusters joined by saccade jumps, with jitter,
    occasional invalid samples, and slightly irregular sample spacing."""
    n = rng.randrange(0, max_samples + 1)
    samples = []
    t = rng.randrange(0, 1_000_000)
    x = rng.randrange(0, 1024)
    y = rng.randrange(0, 768)
    remaining_dwell = 0
    for _ in range(n):
        if remaining_dwell == 0:
            # saccade to a new dwell point
            x = rng.randrange(-50, 1100)
            y = rng.randrange(-50, 800)
            remaining_dwell = rng.randrange(1, 40)
        jitter = rng.choice((0, 1, 2, 3, 15, 40))
        sx = x + rng.randrange(-jitter, jitter + 1) if jitter else x
        sy = y + rng.randrange(-jitter, jitter + 1) if jitter else y
        valid = rng.random() >= invalid_rate
        samples.append(GazeSample(t_us=t, x=sx, y=sy, valid=valid))
        t += 16_667 + rng.randrange(-400, 401)
        remaining_dwell -= 1
    return samples


def oracle_filter(messages, request, limit: int = 7):
    """Reference assistance filter: score every message independently.

    Ancestor matching works on split path segments (not string prefixes) so
    it cannot share a bug with the implementation. Returns (message_id,
    score, rank) triples.
    """
    results = []
    req_path = request.object_id.split("/")
    for m in messages:
        if m.general:
            continue
        score = 0
        if (request.object_kind, request.object_id) in m.objects:
            score = 3 if request.request_type in m.request_types else 2
        elif request.object_kind == "lexicon":
            for kind, oid in m.objects:
                if kind != "lexicon":
                    continue
                seg = oid.split("/")
                if len(seg) < len(req_path) and req_path[:len(seg)] == seg:
                    score = max(score, 1)
        if score:
            results.append((score, m.id))
    results.sort(key=lambda t: (-t[0], t[1]))
    return [(mid, score, rank)
            for rank, (score, mid) in enumerate(results[:limit], start=1)]


def solid_jpeg(width: int = 64, height: int = 48, shade: int = 128) -> bytes:
    """Deterministic small JPEG (same inputs, same bytes)."""
    img = Image.new("RGB", (width, height),
                    (shade % 256, (shade * 3 + 40) % 256, (shade * 7 + 90) % 256))
    buf = io.BytesIO()
    img.save(buf, format="JPEG", quality=80)
    return buf.getvalue()


def make_wav(duration_ms: int, rate: int = 8000) -> bytes:
    """Minimal valid PCM WAV of the given duration (silence)."""
    n_frames = rate * duration_ms // 1000
    data = b"\x00\x00" * n_frames
    hdr = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVEfmt "
    hdr += struct.pack("<IHHIIHH", 16, 1, 1, rate, rate * 2, 2, 16)
    hdr += b"data" + struct.pack("<I", len(data))
    return hdr + data


class CountingFrameSource:
    """Frame provider whose output varies deterministically per call."""

    def __init__(self, width: int = 64, height: int = 48):
        self.width = width
        self.height = height
        self.calls = 0

    def __call__(self):
        from ozforge.recorder import ScreenFrame
        self.calls += 1
        return ScreenFrame(jpeg=solid_jpeg(self.width, self.height, self.calls),
                           width=self.width, height=self.height)


def wait_until(pred, timeout: float = 5.0, interval: float = 0.005) -> bool:
    """Poll pred() until it returns truthy or the timeout passes."""
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if pred():
            return True
        time.sleep(interval)
    return bool(pred())


class SubjectStub:
    """Bare subject endpoints for driving a wizard service in tests:
    a control connection that can speak any message, plus a datagram
    socket for frames. Collects whatever the wizard sends back."""

    def __init__(self, control_port: int, frame_port: int | None = None,
                 session_id: int = 5, label: str = "stub"):
        self.session_id = session_id
        self.label = label
        self.received: list[wire.ControlMessage] = []
        self.closed = threading.Event()
        self._lock = threading.Lock()
        self.sock = socket.create_connection(("127.0.0.1", control_port),
                                             timeout=5)
        self.sock.settimeout(0.2)
        self._udp = None
        self._frame_addr = None
        if frame_port is not None:
            self._udp = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self._frame_addr = ("127.0.0.1", frame_port)
        self._closing = threading.Event()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self):
        decoder = wire.ControlDecoder()
        while not self._closing.is_set():
            try:
                data = self.sock.recv(65536)
            except socket.timeout:
                continue
            except OSError:
                break
            if not data:
                break
            for msg in decoder.feed(data):
                with self._lock:
                    self.received.append(msg)
        self.closed.set()

    def messages_of(self, mtype: str) -> list[wire.ControlMessage]:
        with self._lock:
            return [m for m in self.received if m.type == mtype]

    def send(self, mtype: str, body: dict) -> None:
        self.sock.sendall(wire.encode_control(
            wire.ControlMessage(type=mtype, body=body)))

    def hello(self, timeout: float = 5.0) -> str:
        """Send the handshake; returns the wizard's status reply."""
        self.send("hello", {"session_id": self.session_id,
                            "subject": self.label})
        assert wait_until(lambda: self.messages_of("hello"), timeout=timeout), \
            "no hello reply"
        return self.messages_of("hello")[0].body.get("status", "")

    def send_frame(self, data: bytes, frame_seq: int, t_us: int = 0,
                   channel=None, msg_type: int = wire.MSG_FRAME) -> int:
        """Chunk and transmit one frame; returns datagrams actually sent."""
        assert self._udp is not None and self._frame_addr is not None
        datagrams = wire.chunk_frame(data, self.session_id, frame_seq, t_us,
                                     msg_type=msg_type)
        if channel is not None:
            datagrams = channel.transmit(datagrams)
        for d in datagrams:
            self._udp.sendto(d, self._frame_addr)
        return len(datagrams)

    def close(self):
        self._closing.set()
        self._reader.join(timeout=5)
        for s in (self.sock, self._udp):
            if s is not None:
                try:
                    s.close()
                except OSError:
                    pass


def ws_connect(port: int, path: str = "/stream") -> socket.socket:
    """Plain-socket WebSocket client handshake; returns the upgraded socket."""
    s = socket.create_connection(("127.0.0.1", port), timeout=5)
    key = "dGhlIHNhbXBsZSBub25jZQ=="
    s.sendall((f"GET {path} HTTP/1.1\r\nHost: 127.0.0.1\r\n"
               "Upgrade: websocket\r\nConnection: Upgrade\r\n"
               f"Sec-WebSocket-Key: {key}\r\n"
               "Sec-WebSocket-Version: 13\r\n\r\n").encode("ascii"))
    head = b""
    while b"\r\n\r\n" not in head:
        part = s.recv(4096)
        if not part:
            raise AssertionError("connection closed during upgrade")
        head += part
    assert b" 101 " in head.split(b"\r\n", 1)[0], head
    return s


def ws_read_text(sock: socket.socket, timeout: float = 5.0) -> str | None:
    """Read one unmasked text frame from a server; None on timeout/close."""
    sock.settimeout(timeout)

    def read_exact(n: int) -> bytes | None:
        buf = b""
        while len(buf) < n:
            try:
                part = sock.recv(n - len(buf))
            except socket.timeout:
                return None
            if not part:
                return None
            buf += part
        return buf

    hdr = read_exact(2)
    if hdr is None:
        return None
    length = hdr[1] & 0x7F
    if length == 126:
        ext = read_exact(2)
        if ext is None:
            return None
        (length,) = struct.unpack(">H", ext)
    elif length == 127:
        ext = read_exact(8)
        if ext is None:
            return None
        (length,) = struct.unpack(">Q", ext)
    payload = read_exact(length)
    if payload is None:
        return None
    return payload.decode("utf-8")


class WizardStub:
    """Bare wizard endpoints for driving a subject agent in tests.

    Accepts one control connection, answers its hello, and collects every
    later control message; datagrams landing on the frame socket are parsed
    and frame chunks reassembled. Not the real service: no filtering, no UI.
    """

    def __init__(self, hello_status: str = "ok"):
        self.hello_status = hello_status
        self.received: list[wire.ControlMessage] = []
        self.frames: list[wire.CompleteFrame] = []
        self.gaze_payloads: list[bytes] = []
        self.reassembler = wire.Reassembler()
        self._lock = threading.Lock()
        self._conn: socket.socket | None = None
        self._connected = threading.Event()
        self._srv = socket.create_server(("127.0.0.1", 0))
        self.control_port = self._srv.getsockname()[1]
        self._udp = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._udp.bind(("127.0.0.1", 0))
        self.frame_port = self._udp.getsockname()[1]
        self._udp.settimeout(0.2)
        self._closing = threading.Event()
        self._threads = [
            threading.Thread(target=self._control_loop, daemon=True),
            threading.Thread(target=self._frame_loop, daemon=True),
        ]
        for t in self._threads:
            t.start()

    def _control_loop(self):
        self._srv.settimeout(0.2)
        while not self._closing.is_set():
            try:
                conn, _ = self._srv.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            decoder = wire.ControlDecoder()
            conn.settimeout(0.2)
            saw_hello = False
            while not self._closing.is_set():
                try:
                    data = conn.recv(65536)
                except socket.timeout:
                    continue
                except OSError:
                    break
                if not data:
                    break
                for msg in decoder.feed(data):
                    if msg.type == "hello" and not saw_hello:
                        saw_hello = True
                        conn.sendall(wire.encode_control(wire.ControlMessage(
                            type="hello", body={"status": self.hello_status})))
                        if self.hello_status != "ok":
                            conn.close()
                            break
                        self._conn = conn
                        self._connected.set()
                    else:
                        with self._lock:
                            self.received.append(msg)
            try:
                conn.close()
            except OSError:
                pass

    def _frame_loop(self):
        while not self._closing.is_set():
            try:
                data, _ = self._udp.recvfrom(65536)
            except socket.timeout:
                continue
            except OSError:
                return
            try:
                chunk = wire.parse_datagram(data)
            except wire.ChunkError:
                continue
            if chunk.msg_type == wire.MSG_GAZE_BATCH:
                with self._lock:
                    self.gaze_payloads.append(chunk.payload)
                continue
            frame = self.reassembler.feed(chunk)
            if frame is not None:
                with self._lock:
                    self.frames.append(frame)

    def messages_of(self, mtype: str) -> list[wire.ControlMessage]:
        with self._lock:
            return [m for m in self.received if m.type == mtype]

    def events(self) -> list[dict]:
        out = []
        for m in self.messages_of("event_batch"):
            out.extend(m.body["events"])
        return out

    def send(self, mtype: str, body: dict) -> None:
        assert self._connected.wait(5), "no subject connected"
        assert self._conn is not None
        self._conn.sendall(wire.encode_control(
            wire.ControlMessage(type=mtype, body=body)))

    def close(self):
        self._closing.set()
        for t in self._threads:
            t.join(timeout=5)
        for s in (self._srv, self._udp):
            try:
                s.close()
            except OSError:
                pass
