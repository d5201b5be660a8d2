"""Acceptance gates.

Each test exercises one headline criterion end to end and prints exactly
one `[ACCEPTANCE] <name>: PASS|FAIL` line. The two long soak-based tests
are marked slow; everything else runs in the normal suite.
"""

from __future__ import annotations

import contextlib
import io
import time
from pathlib import Path
from random import Random

import pytest
from PIL import Image

from ozforge import fixtures, gaze, recorder, replay, store, subject, trace, wire, wizard

from helpers import (CountingFrameSource, brute_force_fixations, oracle_filter,
                     random_trace, wait_until)


@contextlib.contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"\n[ACCEPTANCE] {name}: FAIL", flush=True)
        raise
    print(f"\n[ACCEPTANCE] {name}: PASS", flush=True)


def padded_jpeg(target: int, variant: int) -> bytes:
    """A decodable noise JPEG padded after its end marker to an exact size."""
    rng = Random(1000 + variant)
    img = Image.frombytes("RGB", (160, 120), rng.randbytes(160 * 120 * 3))
    buf = io.BytesIO()
    img.save(buf, format="JPEG", quality=85)
    data = buf.getvalue()
    assert len(data) < target, "noise image unexpectedly large"
    return data + rng.randbytes(target - len(data))


class CycleSource:
    """Frame source cycling through a fixed set of prebuilt JPEGs."""

    def __init__(self, jpegs: list[bytes], width: int, height: int):
        self.jpegs = jpegs
        self.width = width
        self.height = height
        self.calls = 0

    def __call__(self) -> recorder.ScreenFrame:
        data = self.jpegs[self.calls % len(self.jpegs)]
        self.calls += 1
        return recorder.ScreenFrame(jpeg=data, width=self.width,
                                    height=self.height)


# -- criterion: sustained loopback throughput ------------------------------

def test_throughput_floor(tmp_path, fixture_tree):
    """>= 30 frames/s of 100 KB JPEGs for 60 s on loopback, with zero
    control-channel loss or reordering. Budget: 90 s."""
    with criterion("throughput-floor"):
        t0 = time.monotonic()
        jpegs = [padded_jpeg(100_000, k) for k in range(8)]
        wiz = wizard.serve(wizard.WizardConfig(
            mirror_dir=fixture_tree / "mirror", frame_port=0, control_port=0,
            ui_port=0, log_path=tmp_path / "wizard.jsonl"))
        agent = None
        try:
            agent = subject.run(subject.AgentConfig(
                store_dir=fixture_tree / "store",
                session_dir=tmp_path / "session",
                recorder=recorder.RecorderConfig(
                    frame_source=CycleSource(jpegs, 160, 120),
                    auto_capture_period_ms=500,
                    screen_width=1024, screen_height=768),
                control_port=wiz.control_port, frame_port=wiz.frame_port,
                frame_rate_cap=500.0, session_id=41))
            n_frames = 1860                   # 31/s for 60 s
            iv = 60.0 / n_frames
            n_events = (n_frames + 2) // 6    # ~5.2/s
            request_marks = [10.0 * j + iv / 4 for j in range(1, 6)]
            schedule = [(k * iv, "frame") for k in range(n_frames)]
            schedule += [((6 * m + 3) * iv + iv / 2, "event")
                         for m in range(n_events)]
            schedule += [(mark, "request") for mark in request_marks]
            schedule.sort()

            rng = Random(4242)
            start = time.monotonic()
            fired = {"frame": 0, "event": 0, "request": 0}
            for offset, what in schedule:
                now = time.monotonic()
                delay = start + offset - now
                if delay > 0:
                    time.sleep(delay)
                if what == "frame":
                    agent.rec.record_frame(jpegs[fired["frame"] % 8], 160, 120)
                elif what == "event":
                    agent.submit_event(trace.USER_EVENT, trace.UserEventPayload(
                        action="mouse_move", cursor_x=rng.randrange(1024),
                        cursor_y=rng.randrange(768), detail=""))
                else:
                    agent.submit_help_request(trace.HelpRequestPayload(
                        request_type="Procedural", object_kind="widget",
                        object_id="main_panel"))
                fired[what] += 1
            summary = agent.stop()   # drains the send queues
            agent = None
            total_frames = fired["frame"] + fired["event"]  # events capture too
            link = summary.link
            assert link.frames_rate_capped == 0
            assert link.frames_dropped_full == 0
            assert link.frames_sent == total_frames

            assert wait_until(
                lambda: wiz.state_snapshot()["link"]["frames_delivered"]
                >= total_frames * 0.97, timeout=10.0)
            drained = time.monotonic()
            state = wiz.state_snapshot()
            window = max(60.0, drained - start)
            sustained = state["link"]["frames_delivered"] / window
            assert sustained >= 30.0, f"sustained {sustained:.1f} frames/s"
            # control channel: everything arrived, exactly once, in order
            assert state["link"]["events_total"] == fired["event"]
            assert state["link"]["requests_total"] == fired["request"]
            tail_seqs = [e["seq"] for e in state["event_tail"]]
            assert tail_seqs == sorted(tail_seqs)
            assert len(set(tail_seqs)) == len(tail_seqs)
            assert state["link"]["crc_failures"] == 0
        finally:
            if agent is not None:
                agent.stop()
            wiz.stop()
        assert time.monotonic() - t0 <= 90.0


# -- criterion: gaze fidelity ----------------------------------------------

def test_gaze_fidelity(tmp_path):
    """36,000-sample 60 Hz stream ingested with zero drops; detector equals
    the brute-force oracle on 100 random traces. Budget: 60 s."""
    with criterion("gaze-fidelity"):
        t0 = time.monotonic()
        clock = trace.ManualClock()
        rec = recorder.start(
            recorder.RecorderConfig(frame_source=CountingFrameSource()),
            tmp_path / "sess", trace.SessionMeta(session_id=61),
            clock=clock)
        rng = Random(6161)
        submitted = []
        x, y = 512, 384
        for k in range(36_000):
            if k % 120 == 0:
                x, y = rng.randrange(0, 1024), rng.randrange(0, 768)
            sample = gaze.GazeSample(
                t_us=k * 16_667,
                x=x + rng.randrange(-3, 4), y=y + rng.randrange(-3, 4),
                valid=rng.random() >= 0.02)
            assert rec.submit_gaze(sample)
            submitted.append(sample)
            clock.advance(16_667)
        summary = rec.stop()
        assert summary.gaze_rows == 36_000
        back = gaze.read_gaze_csv(tmp_path / "sess" / "gaze.csv")
        assert back == submitted

        rng = Random(6262)
        for _ in range(100):
            samples = random_trace(rng, max_samples=2000)
            params = gaze.FixationParams(
                dispersion_px=rng.randrange(20, 61),
                min_duration_ms=rng.randrange(80, 201))
            assert gaze.detect_fixations(samples, params) == \
                brute_force_fixations(samples, params)
        assert time.monotonic() - t0 <= 60.0


# -- criterion: lossy channel correctness ----------------------------------

def test_lossy_channel_correctness():
    """1,000 ~50 KB frames at 5% seeded datagram loss: every delivery
    bit-identical, dropped_incomplete matches the seed-replayed oracle,
    zero corrupted deliveries. Budget: 30 s."""
    with criterion("lossy-channel-correctness"):
        t0 = time.monotonic()
        seed = 1337
        base = Random(9).randbytes(52_000)
        originals = []
        for k in range(1000):
            size = 50_000 + (k % 11) * 97
            originals.append(k.to_bytes(4, "big") + base[4:size])

        channel = wire.LossyChannel(p_loss=0.05, p_reorder=0.0, seed=seed)
        reasm = wire.Reassembler()
        delivered: dict[int, bytes] = {}
        for k, frame in enumerate(originals):
            for raw in channel.transmit(
                    wire.chunk_frame(frame, session_id=9, frame_seq=k,
                                     t_us=k * 20_000)):
                got = reasm.feed(wire.parse_datagram(raw))
                if got is not None:
                    delivered[got.frame_seq] = got.data

        # Independent replay: the loss stream is one uniform draw per
        # datagram from Random(seed); a frame completes iff every one of
        # its chunks survived (chunks are fed frame by frame, in order).
        loss = Random(seed)
        cap = wire.DEFAULT_PAYLOAD_CAP
        complete = []
        for k, frame in enumerate(originals):
            n_chunks = -(-len(frame) // cap)
            survived = [loss.random() >= 0.05 for _ in range(n_chunks)]
            if all(survived):
                complete.append(k)
        assert channel.dropped > 0
        assert complete, "no frame survived intact; loss model broken"
        assert sorted(delivered) == complete
        for k in complete:
            assert delivered[k] == originals[k]
        # Incomplete frames before the last delivery are flushed or evicted;
        # of the trailing ones only max_pending stay buffered.
        complete_set = set(complete)
        last = complete[-1]
        trailing = sum(1 for k in range(last + 1, 1000)
                       if k not in complete_set)
        expected_dropped = (last + 1 - len(complete)) + \
            max(0, trailing - reasm.max_pending)
        assert reasm.dropped_incomplete == expected_dropped
        assert reasm.crc_failures == 0
        assert time.monotonic() - t0 <= 30.0


# -- criterion: filter equivalence and latency -----------------------------

@pytest.fixture(scope="module")
def corpus300(tmp_path_factory):
    out = tmp_path_factory.mktemp("accept300") / "fx"
    fixtures.gen_fixtures(out, fixtures.FixtureSpec(
        n_messages=300, session_seconds=5, seed=2023))
    return out


def test_filter_equivalence_and_latency(corpus300):
    """1,000 random requests over the 300-message corpus match the
    exhaustive-scan oracle; p99 latency < 10 ms; mirror equals full store."""
    with criterion("filter-equivalence-and-latency"):
        full = store.load_store(corpus300 / "store")
        mirrored = store.load_mirror(corpus300 / "mirror")
        assert len(full.messages) == 300

        object_pool: list[tuple[str, str]] = []
        for m in full.messages.values():
            object_pool.extend(m.objects)
        lex_paths = sorted(full.lexicon.paths)
        rng = Random(414)
        latencies = []
        for i in range(1000):
            draw = rng.random()
            if draw < 0.35 and object_pool:
                kind, oid = rng.choice(object_pool)
            elif draw < 0.80:
                kind, oid = "lexicon", rng.choice(lex_paths)
                if rng.random() < 0.25:
                    kind, oid = "lexicon", oid + "/extra"
            else:
                kind, oid = "widget", f"w_{rng.randrange(40)}"
            req = trace.HelpRequestPayload(
                request_type=rng.choice(trace.REQUEST_TYPES),
                object_kind=kind, object_id=oid)
            t0 = time.perf_counter()
            got = store.filter_messages(full, req)
            latencies.append(time.perf_counter() - t0)
            triples = [(s.message_id, s.score, s.rank) for s in got]
            assert triples == oracle_filter(full.messages.values(), req)
            assert store.filter_messages(mirrored, req) == got
        latencies.sort()
        p99 = latencies[989]
        assert p99 < 0.010, f"p99 filter latency {p99 * 1000:.2f} ms"


# -- criterion: soak + replay determinism ----------------------------------

SOAK_SECONDS = 600
SOAK_TICK = 0.2


@pytest.fixture(scope="module")
def soak_data(tmp_path_factory, fixture_tree):
    """Ten-minute loopback session: 5 events/s, 60 Hz gaze, periodic
    requests, activations, generals, and undos driven end to end."""
    base = tmp_path_factory.mktemp("soak")
    loaded = store.load_store(fixture_tree / "store")
    normals = sorted(m for m, v in loaded.messages.items() if not v.general)
    generals = sorted(m for m, v in loaded.messages.items() if v.general)
    lex_paths = sorted(loaded.lexicon.paths)

    wiz = wizard.serve(wizard.WizardConfig(
        mirror_dir=fixture_tree / "mirror", frame_port=0, control_port=0,
        ui_port=0, log_path=base / "wizard.jsonl"))
    adapter = subject.ActionStackApp()
    agent = subject.run(subject.AgentConfig(
        store_dir=fixture_tree / "store", session_dir=base / "session",
        recorder=recorder.RecorderConfig(
            frame_source=fixtures.SyntheticScreen(),
            auto_capture_period_ms=200,
            screen_width=1024, screen_height=768),
        control_port=wiz.control_port, frame_port=wiz.frame_port,
        frame_rate_cap=30.0, session_id=77), adapter=adapter)

    rng = Random(7878)
    expected_stack: list[str] = []
    issued: list[tuple[str, str]] = []
    n_ticks = int(SOAK_SECONDS / SOAK_TICK)
    counts = {"events": 0, "gaze": 0, "requests": 0, "clicks": 0}
    gaze_t = 0
    stopped = False
    try:
        start = time.monotonic()
        for i in range(n_ticks):
            delay = start + i * SOAK_TICK - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            # 5 events/s, every tenth one a real host-app action
            if i % 10 == 5:
                action = f"act_{rng.randrange(1000)}"
                agent.apply_action(action, cursor=(rng.randrange(1024),
                                                   rng.randrange(768)))
                expected_stack.append(action)
                counts["clicks"] += 1
            else:
                agent.submit_event(trace.USER_EVENT, trace.UserEventPayload(
                    action="mouse_move", cursor_x=rng.randrange(1024),
                    cursor_y=rng.randrange(768), detail=""))
            counts["events"] += 1
            # 60 Hz gaze, timestamped on its own synthetic clock
            for _ in range(12):
                agent.submit_gaze(gaze.GazeSample(
                    t_us=gaze_t, x=rng.randrange(0, 1024),
                    y=rng.randrange(0, 768), valid=rng.random() >= 0.03))
                gaze_t += 16_667
                counts["gaze"] += 1
            if i % 35 == 34:
                agent.submit_help_request(trace.HelpRequestPayload(
                    request_type=rng.choice(trace.REQUEST_TYPES),
                    object_kind="lexicon", object_id=rng.choice(lex_paths)))
                counts["requests"] += 1
            if i % 100 == 99:
                before = agent.stats.commands_received
                turn = (i // 100) % 4
                if turn in (0, 3):
                    mid = normals[(i // 100) % len(normals)]
                    wiz.activate(mid)
                    issued.append(("activate", mid))
                elif turn == 1:
                    n = rng.randrange(1, 4)
                    wiz.send_undo(n)
                    issued.append(("undo", str(n)))
                    del expected_stack[max(0, len(expected_stack) - n):]
                else:
                    wiz.send_general(generals[0])
                    issued.append(("general_message", generals[0]))
                assert wait_until(
                    lambda: agent.stats.commands_received == before + 1,
                    timeout=10.0)
        agent.wait_for_playbacks(20.0)
        summary = agent.stop()
        stopped = True
        assert wait_until(lambda: wiz.state_snapshot()["link"]["events_total"]
                          >= counts["events"], timeout=10.0)
        wiz_state = wiz.state_snapshot()
    finally:
        if not stopped:
            with contextlib.suppress(Exception):
                agent.stop()
        wiz.stop()
    return {
        "session": base / "session",
        "wizard_log": base / "wizard.jsonl",
        "store": loaded,
        "summary": summary,
        "wizard_state": wiz_state,
        "expected_stack": expected_stack,
        "issued": issued,
        "counts": counts,
    }


@pytest.mark.slow
def test_soak_consistency(request):
    """10-minute loopback soak: clean validation, command-for-command log
    reconciliation, and host-app state equal to the stack oracle."""
    with criterion("soak-consistency"):
        data = request.getfixturevalue("soak_data")
        report = trace.validate_session(data["session"], store=data["store"])
        assert report.issues == []
        assert report.warnings == []

        wiz_cmds = []
        for line in Path(data["wizard_log"]).read_text().splitlines():
            rec = trace.decode_record(line)
            assert rec.kind == trace.WIZARD_COMMAND
            wiz_cmds.append((rec.payload.command, rec.payload.arg))
        subj_cmds = [(r.payload.command, r.payload.arg)
                     for r in trace.read_records(data["session"])
                     if r.kind == trace.WIZARD_COMMAND]
        assert wiz_cmds == data["issued"]
        assert subj_cmds == data["issued"]

        expected = data["expected_stack"]
        oracle_state = "/".join(expected) if expected else "initial"
        assert data["summary"].final_state_id == oracle_state

        counts = data["counts"]
        recs = trace.read_records(data["session"])
        user_events = [r for r in recs if r.kind == trace.USER_EVENT]
        assert len(user_events) == counts["events"]
        rows = gaze.read_gaze_csv(data["session"] / "gaze.csv")
        assert len(rows) == counts["gaze"] == 36_000
        assert data["wizard_state"]["link"]["events_total"] == counts["events"]
        assert data["wizard_state"]["link"]["requests_total"] == counts["requests"]


@pytest.mark.slow
def test_replay_determinism_soak_export(request, tmp_path):
    """Two exports of the soak session are byte-identical."""
    with criterion("replay-determinism (soak double export)"):
        data = request.getfixturevalue("soak_data")
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        replay.export(data["session"], out_a, fps=5)
        replay.export(data["session"], out_b, fps=5)
        names_a = sorted(p.name for p in out_a.iterdir())
        assert names_a == sorted(p.name for p in out_b.iterdir())
        assert "index.json" in names_a
        for name in names_a:
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name


def test_replay_determinism_seek_step_sweep(fixture_tree):
    """seek() equals step() at 1,000 random positions, including clamped
    out-of-range ones."""
    with criterion("replay-determinism (seek/step sweep)"):
        timeline = replay.load(fixture_tree / "session")
        assert timeline.t_max > 0
        rng = Random(606)
        for _ in range(1000):
            t = rng.randrange(-50_000, timeline.t_max + 50_001)
            assert replay.seek(timeline, t) == replay.step(timeline, t)
