"""Dual-channel transport: lossy datagrams for frames, lossless control stream.

Datagram layout (big-endian, 27-byte header + payload + 4-byte trailer):

    ┌───────┬──────┬────────────┬───────────┬──────┬─────────┬─────────┬─────────┬─────────┬───────┐
    │ magic │ type │ session_id │ frame_seq │ t_us │ total   │ index   │ p_len   │ payload │ crc32 │
    │ OZF1  │ u8   │ u32        │ u32       │ u64  │ u16     │ u16     │ u16     │ bytes   │ u32   │
    └───────┴──────┴────────────┴───────────┴──────┴─────────┴─────────┴─────────┴─────────┴───────┘

The CRC32 (IEEE polynomial, reflected, init 0xFFFFFFFF; zlib's) covers
header plus payload. Frames are delivered latest-wins: once a frame has been
delivered, anything older is stale and silently counted, never surfaced.

Control messages are 4-byte big-endian length prefix + UTF-8 JSON with a
"type" field, decoded incrementally so the stream may fragment anywhere.
"""

from __future__ import annotations

import json
import random
import struct
import zlib
from dataclasses import dataclass

MAGIC = b"OZF1"
MSG_FRAME = 1
MSG_GAZE_BATCH = 2
MSG_AUDIO = 3

HEADER_FMT = ">4sBIIQHHH"
HEADER_LEN = struct.calcsize(HEADER_FMT)  # 27
TRAILER_LEN = 4
OVERHEAD = HEADER_LEN + TRAILER_LEN  # 31

DEFAULT_MAX_DATAGRAM = 1400
DEFAULT_PAYLOAD_CAP = DEFAULT_MAX_DATAGRAM - OVERHEAD  # 1369

CONTROL_TYPES = ("hello", "help_request", "event_batch", "activate_message",
                 "general_message", "undo", "playback_report", "heartbeat")
MAX_CONTROL_LEN = 1 << 20  # 1 MiB

DEFAULT_FRAME_PORT = 47001
DEFAULT_CONTROL_PORT = 47002


class WireError(Exception):
    """Base error for transport encoding and decoding."""


class ChunkError(WireError):
    """A datagram failed parsing; `reason` is one of bad_magic, truncated,
    arity, crc_mismatch, oversize."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


class ProtocolError(WireError):
    """Control stream violation; carries the offending raw bytes."""

    def __init__(self, message: str, raw: bytes = b""):
        self.raw = raw
        super().__init__(message)


@dataclass(frozen=True)
class FrameChunk:
    msg_type: int
    session_id: int
    frame_seq: int
    t_us: int
    total_chunks: int
    chunk_index: int
    payload: bytes


@dataclass(frozen=True)
class CompleteFrame:
    frame_seq: int
    t_us: int
    data: bytes


@dataclass(frozen=True)
class ControlMessage:
    type: str
    body: dict

    def validate(self) -> None:
        if self.type not in CONTROL_TYPES:
            raise ProtocolError(f"unknown control type {self.type!r}")


def chunk_frame(frame_bytes: bytes, session_id: int, frame_seq: int, t_us: int,
                max_datagram: int = DEFAULT_MAX_DATAGRAM,
                msg_type: int = MSG_FRAME) -> list[bytes]:
    """Split one frame into self-describing datagrams.

    payload_cap = max_datagram - 31; an empty frame still yields one
    datagram so receivers learn the frame exists.
    """
    if max_datagram < 64:
        raise ValueError("max_datagram must be >= 64")
    cap = max_datagram - OVERHEAD
    total = max(1, -(-len(frame_bytes) // cap))
    if total > 0xFFFF:
        raise ChunkError("oversize", f"{len(frame_bytes)} bytes need {total} chunks")
    out = []
    for index in range(total):
        payload = frame_bytes[index * cap:(index + 1) * cap]
        header = struct.pack(HEADER_FMT, MAGIC, msg_type, session_id, frame_seq,
                             t_us, total, index, len(payload))
        crc = zlib.crc32(header + payload) & 0xFFFFFFFF
        out.append(header + payload + struct.pack(">I", crc))
    return out


def parse_datagram(data: bytes) -> FrameChunk:
    """Parse and verify one datagram; any anomaly raises ChunkError."""
    if len(data) < OVERHEAD:
        raise ChunkError("truncated", f"{len(data)} bytes")
    magic, msg_type, session_id, frame_seq, t_us, total, index, payload_len = \
        struct.unpack_from(HEADER_FMT, data)
    if magic != MAGIC:
        raise ChunkError("bad_magic", magic.hex())
    if len(data) != OVERHEAD + payload_len:
        raise ChunkError("arity", f"{len(data)} bytes, payload_len {payload_len}")
    if index >= total:
        raise ChunkError("arity", f"chunk_index {index} >= total_chunks {total}")
    payload = data[HEADER_LEN:HEADER_LEN + payload_len]
    (crc,) = struct.unpack_from(">I", data, HEADER_LEN + payload_len)
    if crc != zlib.crc32(data[:HEADER_LEN + payload_len]) & 0xFFFFFFFF:
        raise ChunkError("crc_mismatch")
    return FrameChunk(msg_type=msg_type, session_id=session_id, frame_seq=frame_seq,
                      t_us=t_us, total_chunks=total, chunk_index=index, payload=payload)


class Reassembler:
    """Per-frame chunk buffers with latest-wins delivery.

    All anomalies become counters; a lossy channel must never fail the
    receiver. At most `max_pending` incomplete frames are buffered; beyond
    that the oldest is evicted.
    """

    def __init__(self, max_pending: int = 8):
        self.max_pending = max_pending
        self._buffers: dict[int, dict] = {}
        self.highest_delivered = -1
        self.delivered = 0
        self.dropped_incomplete = 0
        self.crc_failures = 0
        self.stale_discarded = 0

    def note_crc_failure(self) -> None:
        self.crc_failures += 1

    def feed(self, chunk: FrameChunk) -> CompleteFrame | None:
        """Absorb one CRC-validated chunk; returns a frame when complete."""
        seq = chunk.frame_seq
        if seq <= self.highest_delivered:
            self.stale_discarded += 1
            return None
        buf = self._buffers.get(seq)
        if buf is None or buf["total"] != chunk.total_chunks:
            buf = {"total": chunk.total_chunks, "t_us": chunk.t_us, "parts": {}}
            self._buffers[seq] = buf
        parts = buf["parts"]
        if chunk.chunk_index in parts:
            return None
        parts[chunk.chunk_index] = chunk.payload
        if len(parts) < buf["total"]:
            if len(self._buffers) > self.max_pending:
                oldest = min(self._buffers)
                del self._buffers[oldest]
                self.dropped_incomplete += 1
            return None
        del self._buffers[seq]
        data = b"".join(parts[i] for i in range(buf["total"]))
        self.highest_delivered = seq
        self.delivered += 1
        for old in [s for s in self._buffers if s <= seq]:
            del self._buffers[old]
            self.dropped_incomplete += 1
        return CompleteFrame(frame_seq=seq, t_us=buf["t_us"], data=data)

    def counters(self) -> dict[str, int]:
        return {
            "delivered": self.delivered,
            "dropped_incomplete": self.dropped_incomplete,
            "crc_failures": self.crc_failures,
            "stale_discarded": self.stale_discarded,
        }


def encode_control(msg: ControlMessage) -> bytes:
    msg.validate()
    body = dict(msg.body)
    body["type"] = msg.type
    raw = json.dumps(body, separators=(",", ":"), sort_keys=True).encode("utf-8")
    if len(raw) > MAX_CONTROL_LEN:
        raise ProtocolError(f"control message too large: {len(raw)} bytes")
    return struct.pack(">I", len(raw)) + raw


class ControlDecoder:
    """Incremental length-prefixed decoder; preserves order across any
    byte-level fragmentation. A poison message (oversize length or
    malformed body) permanently fails the stream."""

    def __init__(self):
        self._buf = bytearray()
        self._poisoned = False

    def feed(self, data: bytes) -> list[ControlMessage]:
        if self._poisoned:
            raise ProtocolError("control stream already failed")
        self._buf.extend(data)
        out = []
        while len(self._buf) >= 4:
            (length,) = struct.unpack_from(">I", self._buf)
            if length > MAX_CONTROL_LEN:
                self._poisoned = True
                raise ProtocolError(f"declared length {length} exceeds 1 MiB",
                                    raw=bytes(self._buf[:4]))
            if len(self._buf) < 4 + length:
                break
            raw = bytes(self._buf[4:4 + length])
            del self._buf[:4 + length]
            try:
                body = json.loads(raw.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as e:
                self._poisoned = True
                raise ProtocolError(f"malformed control body: {e}", raw=raw)
            if not isinstance(body, dict) or "type" not in body:
                self._poisoned = True
                raise ProtocolError("control body missing type tag", raw=raw)
            mtype = body.pop("type")
            msg = ControlMessage(type=mtype, body=body)
            msg.validate()
            out.append(msg)
        return out


class LossyChannel:
    """Deterministic datagram impairment simulator.

    Loss and reorder decisions come from two independent seeded streams
    (seed and seed + 1) so the drop pattern replays identically whatever
    the reorder probability. Each datagram is dropped with p_loss;
    surviving adjacent pairs swap with p_reorder.
    """

    def __init__(self, p_loss: float, p_reorder: float = 0.0, seed: int = 0):
        if not (0.0 <= p_loss <= 1.0 and 0.0 <= p_reorder <= 1.0):
            raise ValueError("probabilities must be in [0, 1]")
        self.p_loss = p_loss
        self.p_reorder = p_reorder
        self._loss_rng = random.Random(seed)
        self._reorder_rng = random.Random(seed + 1)
        self.sent = 0
        self.dropped = 0
        self.swapped = 0

    def transmit(self, datagrams) -> list[bytes]:
        """Run a batch through the channel, in order of submission."""
        survivors = []
        for d in datagrams:
            self.sent += 1
            if self._loss_rng.random() < self.p_loss:
                self.dropped += 1
            else:
                survivors.append(d)
        i = 0
        while i + 1 < len(survivors):
            if self._reorder_rng.random() < self.p_reorder:
                survivors[i], survivors[i + 1] = survivors[i + 1], survivors[i]
                self.swapped += 1
                i += 2
            else:
                i += 1
        return survivors
