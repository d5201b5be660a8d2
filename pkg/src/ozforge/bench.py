"""In-process protocol and filter benchmark.

Pushes synthetic frames through the datagram codec, a seeded lossy
channel, and the reassembler; round-trips control messages through the
length-prefixed stream codec; and times the suggestion filter over a
synthetic corpus. Nothing touches the network, so every count in the
report is reproducible for a given seed and only the timing figures
vary between runs.
"""

from __future__ import annotations

import math
import struct
import time
from dataclasses import dataclass
from random import Random

from . import store, trace, wire

DEFAULT_FRAMES = 1000
DEFAULT_FRAME_BYTES = 100_000
DEFAULT_MESSAGES = 300
DEFAULT_REQUESTS = 200
DEFAULT_CONTROL = 200

_LEX_ROOTS = ("panel", "canvas", "tools", "layers", "file", "view")


class BenchError(Exception):
    """A measured value violated one of the report's invariants."""


@dataclass(frozen=True)
class BenchReport:
    frames: int
    frame_bytes: int
    elapsed_s: float
    frames_per_s: float
    frames_delivered: int
    frames_incomplete: int
    datagrams_sent: int
    datagrams_dropped: int
    datagrams_delivered: int
    control_sent: int
    control_roundtripped: int
    filter_p50_ms: float
    filter_p99_ms: float

    def validate(self) -> None:
        if self.datagrams_delivered > self.datagrams_sent:
            raise BenchError("delivered datagrams exceed sent")
        if self.datagrams_delivered != self.datagrams_sent - self.datagrams_dropped:
            raise BenchError("datagram counters do not reconcile")
        if self.filter_p50_ms < 0 or self.filter_p99_ms < 0:
            raise BenchError("negative filter latency")

    def lines(self) -> list[str]:
        return [
            f"frames               {self.frames} x {self.frame_bytes} bytes",
            f"elapsed_s            {self.elapsed_s:.3f}",
            f"frames_per_s         {self.frames_per_s:.1f}",
            f"frames_delivered     {self.frames_delivered}",
            f"frames_incomplete    {self.frames_incomplete}",
            f"datagrams_sent       {self.datagrams_sent}",
            f"datagrams_dropped    {self.datagrams_dropped}",
            f"datagrams_delivered  {self.datagrams_delivered}",
            f"control_sent         {self.control_sent}",
            f"control_roundtripped {self.control_roundtripped}",
            f"filter_p50_ms        {self.filter_p50_ms:.3f}",
            f"filter_p99_ms        {self.filter_p99_ms:.3f}",
        ]


def lexicon_paths() -> list[str]:
    """The fixed three-level object tree the synthetic corpus draws from."""
    paths = []
    for a in _LEX_ROOTS:
        paths.append(a)
        for b in "abcdef":
            paths.append(f"{a}/{b}")
            for c in "xyz":
                paths.append(f"{a}/{b}/{c}")
    return paths


def build_corpus(n_messages: int, seed: int) -> store.MirrorStore:
    """Synthetic in-memory corpus shaped like a real mirror: exact-object
    and typed messages over a small lexicon tree, with a sprinkling of
    general ones."""
    rng = Random(seed)
    paths = lexicon_paths()
    msgs = {}
    for i in range(n_messages):
        mid = f"bm_{i:04d}"
        general = i % 29 == 28
        if general:
            objects = frozenset()
        else:
            objects = frozenset(("lexicon", rng.choice(paths))
                                for _ in range(rng.randrange(1, 4)))
        rtypes = frozenset(rng.sample(trace.REQUEST_TYPES, rng.randrange(1, 3)))
        msgs[mid] = store.MirrorMessage(id=mid, title=f"bench message {i}",
                                        request_types=rtypes, objects=objects,
                                        general=general)
    return store.MirrorStore(messages=msgs)


def _percentile(sorted_ms: list[float], q: float) -> float:
    """Nearest-rank percentile (1-based ceil(q*n)) over a sorted list."""
    if not sorted_ms:
        return 0.0
    rank = math.ceil(q * len(sorted_ms))
    return sorted_ms[min(len(sorted_ms), max(1, rank)) - 1]


def _frame_pipeline(frames: int, frame_bytes: int, loss: float, reorder: float,
                    seed: int) -> tuple[float, wire.LossyChannel, wire.Reassembler]:
    rng = Random(seed)
    body = rng.randbytes(frame_bytes)
    channel = wire.LossyChannel(p_loss=loss, p_reorder=reorder, seed=seed)
    reasm = wire.Reassembler()
    t0 = time.perf_counter()
    for seq in range(frames):
        if frame_bytes >= 4:
            payload = struct.pack(">I", seq) + body[4:]
        else:
            payload = body
        datagrams = wire.chunk_frame(payload, session_id=1, frame_seq=seq,
                                     t_us=seq * 33_333)
        for raw in channel.transmit(datagrams):
            reasm.feed(wire.parse_datagram(raw))
    elapsed = time.perf_counter() - t0
    return elapsed, channel, reasm


def _control_roundtrip(count: int, seed: int) -> tuple[int, int]:
    """Encode `count` control messages, replay the byte stream through a
    decoder in seeded odd-sized slices, and count what comes back out."""
    rng = Random(seed + 2)
    sent = []
    for i in range(count):
        kind = i % 4
        if kind == 0:
            msg = wire.ControlMessage("heartbeat", {"n": i})
        elif kind == 1:
            msg = wire.ControlMessage("event_batch", {"events": [
                {"seq": i, "t_us": i * 1000, "kind": trace.USER_EVENT,
                 "payload": {"action": "mouse_move", "detail": "",
                             "cursor_x": i % 640, "cursor_y": i % 480}}]})
        elif kind == 2:
            msg = wire.ControlMessage("help_request", {
                "seq": i, "t_us": i * 1000, "request_type": "Procedural",
                "object_kind": "lexicon", "object_id": "panel"})
        else:
            msg = wire.ControlMessage("hello", {"session_id": 1, "role": "subject"})
        sent.append(msg)
    blob = b"".join(wire.encode_control(m) for m in sent)
    decoder = wire.ControlDecoder()
    got = []
    pos = 0
    while pos < len(blob):
        step = rng.randrange(1, 97)
        got.extend(decoder.feed(blob[pos:pos + step]))
        pos += step
    matched = sum(1 for a, b in zip(sent, got)
                  if a.type == b.type and a.body == b.body)
    return len(sent), matched


def _filter_latencies(corpus: store.MirrorStore, requests: int,
                      seed: int) -> list[float]:
    rng = Random(seed + 3)
    paths = lexicon_paths()
    out = []
    for _ in range(requests):
        req = trace.HelpRequestPayload(
            request_type=rng.choice(trace.REQUEST_TYPES),
            object_kind="lexicon", object_id=rng.choice(paths))
        t0 = time.perf_counter()
        store.filter_messages(corpus, req)
        out.append((time.perf_counter() - t0) * 1000.0)
    return out


def run_bench(frames: int = DEFAULT_FRAMES,
              frame_bytes: int = DEFAULT_FRAME_BYTES,
              loss: float = 0.0, reorder: float = 0.0, seed: int = 0,
              messages: int = DEFAULT_MESSAGES,
              requests: int = DEFAULT_REQUESTS,
              control: int = DEFAULT_CONTROL) -> BenchReport:
    """Measure the full in-process pipeline and return a validated report."""
    if frames < 1 or frame_bytes < 0:
        raise trace.UsageError("frames must be >= 1 and size >= 0")
    elapsed, channel, reasm = _frame_pipeline(frames, frame_bytes, loss,
                                              reorder, seed)
    ctl_sent, ctl_back = _control_roundtrip(control, seed)
    lat = sorted(_filter_latencies(build_corpus(messages, seed), requests, seed))
    report = BenchReport(
        frames=frames,
        frame_bytes=frame_bytes,
        elapsed_s=elapsed,
        frames_per_s=frames / elapsed if elapsed > 0 else 0.0,
        frames_delivered=reasm.delivered,
        frames_incomplete=reasm.dropped_incomplete,
        datagrams_sent=channel.sent,
        datagrams_dropped=channel.dropped,
        datagrams_delivered=channel.sent - channel.dropped,
        control_sent=ctl_sent,
        control_roundtripped=ctl_back,
        filter_p50_ms=_percentile(lat, 0.50),
        filter_p99_ms=_percentile(lat, 0.99),
    )
    report.validate()
    return report
