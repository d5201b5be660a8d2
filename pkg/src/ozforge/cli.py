"""Command-line front door.

One executable wiring every module: run a subject daemon or a wizard
service, inspect or export recorded sessions, validate a session
directory, generate a synthetic corpus, and benchmark the protocol
stack. Exit codes: 0 success, 1 validation or runtime failure, 2 usage
error. The OZFORGE_LOG environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import collections
import logging
import os
import sys
import time
from pathlib import Path
from random import Random

from . import (bench, fixtures, gaze, recorder, replay, store, subject,
               trace, wire, wizard)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

DEMO_ACTIONS = ("open_panel", "select_brush", "zoom_in", "drop_marker")


def _setup_logging() -> None:
    name = os.environ.get("OZFORGE_LOG", "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _fixation_params(args) -> gaze.FixationParams:
    params = gaze.FixationParams(dispersion_px=args.dispersion,
                                 min_duration_ms=args.min_dur)
    params.validate()
    return params


# -- subject ---------------------------------------------------------------

def _run_demo_loop(agent: subject.SubjectAgent, duration: float | None,
                   demo_events: int, seed: int) -> None:
    """Idle until the duration elapses (or forever), optionally emitting a
    scripted trickle of user activity so a run produces a lively trace."""
    rng = Random(seed)
    t_end = None if duration is None else time.monotonic() + duration
    interval = 0.25
    if demo_events > 0 and duration:
        interval = max(0.01, duration / (demo_events + 1))
    sent = 0
    next_demo = time.monotonic() + interval
    while True:
        now = time.monotonic()
        if t_end is not None and now >= t_end:
            break
        if sent < demo_events and now >= next_demo:
            x = rng.randrange(0, fixtures.FRAME_W)
            y = rng.randrange(0, fixtures.FRAME_H)
            turn = sent % 4
            if turn == 0:
                agent.apply_action(rng.choice(DEMO_ACTIONS), cursor=(x, y))
            elif turn == 3:
                agent.submit_help_request(trace.HelpRequestPayload(
                    request_type=rng.choice(trace.REQUEST_TYPES),
                    object_kind="widget", object_id="demo_panel"))
            else:
                agent.submit_event(trace.USER_EVENT, trace.UserEventPayload(
                    action="mouse_move", cursor_x=x, cursor_y=y, detail=""))
            sent += 1
            next_demo = now + interval
        time.sleep(0.02)


def cmd_subject(args) -> int:
    cfg = subject.AgentConfig(
        store_dir=Path(args.store),
        session_dir=Path(args.session),
        recorder=recorder.RecorderConfig(
            frame_source=fixtures.SyntheticScreen(),
            auto_capture_period_ms=args.auto_period,
            screen_width=fixtures.FRAME_W,
            screen_height=fixtures.FRAME_H),
        wizard_host=args.wizard,
        control_port=args.control_port,
        frame_port=args.frame_port,
        offline=args.offline,
        forward_gaze=args.forward_gaze,
        frame_rate_cap=args.rate_cap,
        session_id=args.session_id,
        extra_snapshot={
            "auto_capture_period_ms": str(args.auto_period),
            "demo_events": str(args.demo_events),
            "seed": str(args.seed),
        })
    agent = subject.run(cfg)
    try:
        _run_demo_loop(agent, args.duration, args.demo_events, args.seed)
    except KeyboardInterrupt:
        pass
    finally:
        summary = agent.stop()
    counts = summary.recorder.counts
    print(f"session closed: {sum(counts.values())} records "
          f"({counts.get(trace.FRAME_REF, 0)} frames), "
          f"{summary.recorder.gaze_rows} gaze rows")
    link = summary.link
    print(f"link: frames_sent={link.frames_sent} "
          f"events_forwarded={link.events_forwarded} "
          f"requests_sent={link.requests_sent} "
          f"commands_received={link.commands_received}")
    return EXIT_OK


# -- wizard ----------------------------------------------------------------

def cmd_wizard(args) -> int:
    svc = wizard.serve(wizard.WizardConfig(
        mirror_dir=Path(args.mirror),
        host=args.host,
        frame_port=args.frame_port,
        control_port=args.control_port,
        ui_port=args.ui_port,
        log_path=Path(args.log) if args.log else None,
        static_dir=Path(args.static) if args.static else None,
        replay_dir=Path(args.replay_dir) if args.replay_dir else None))
    print(f"frame_port={svc.frame_port} control_port={svc.control_port} "
          f"ui_port={svc.ui_port}", flush=True)
    try:
        if args.duration is not None:
            time.sleep(args.duration)
        else:
            while True:
                time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        svc.stop()
    return EXIT_OK


# -- replay / export -------------------------------------------------------

def cmd_replay(args) -> int:
    timeline = replay.load(args.session, _fixation_params(args))
    counts = collections.Counter(e.record.kind for e in timeline.entries
                                 if e.record is not None)
    print(f"session {timeline.meta.session_id} "
          f"({timeline.meta.subject_label}): "
          f"{timeline.t_max / 1e6:.3f}s, "
          f"{sum(counts.values())} records, "
          f"{len(timeline.fixations)} fixations")
    for kind in sorted(counts):
        print(f"  {kind}: {counts[kind]}")
    if args.at is not None:
        ri = replay.seek(timeline, args.at)
        print(f"at {ri.t_us}us: frame={ri.frame_file or '-'} "
              f"cursor={ri.cursor or '-'} "
              f"active_fixations={len(ri.active)} markers={len(ri.markers)}")
    return EXIT_OK


def cmd_export(args) -> int:
    out = replay.export(args.session, args.out, args.fps,
                        _fixation_params(args))
    n = sum(1 for p in out.iterdir() if p.suffix == ".png")
    print(f"exported {n} frames to {out}")
    return EXIT_OK


# -- validate / gen-fixtures / bench ---------------------------------------

def cmd_validate(args) -> int:
    loaded = store.load_store(args.store) if args.store else None
    report = trace.validate_session(args.session, store=loaded)
    if report.ok:
        print(report.summary())
        return EXIT_OK
    print(report.summary(), file=sys.stderr)
    return EXIT_FAIL


def cmd_gen_fixtures(args) -> int:
    spec = fixtures.FixtureSpec(n_messages=args.messages,
                                lexicon_depth=args.depth,
                                session_seconds=args.seconds,
                                seed=args.seed)
    tree = fixtures.gen_fixtures(args.out, spec)
    print(f"store:   {tree['store']}")
    print(f"mirror:  {tree['mirror']}")
    print(f"session: {tree['session']}")
    print(f"messages: {tree['n_messages']}")
    return EXIT_OK


def cmd_bench(args) -> int:
    report = bench.run_bench(frames=args.frames, frame_bytes=args.size,
                             loss=args.loss, reorder=args.reorder,
                             seed=args.seed)
    for line in report.lines():
        print(line)
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ozforge",
        description="Wizard-of-Oz experiment platform: subject daemon, "
                    "wizard service, session replay, and tooling.")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="COMMAND")

    p = sub.add_parser("subject", help="run the subject-side daemon")
    p.add_argument("--wizard", default="127.0.0.1", metavar="HOST",
                   help="wizard host to connect to")
    p.add_argument("--store", required=True, metavar="DIR",
                   help="help-message store directory")
    p.add_argument("--session", required=True, metavar="DIR",
                   help="session directory to record into")
    p.add_argument("--offline", action="store_true",
                   help="record locally without a wizard connection")
    p.add_argument("--forward-gaze", action="store_true",
                   help="stream gaze samples to the wizard (off by default)")
    p.add_argument("--auto-period", type=int, default=500, metavar="MS",
                   help="idle auto-capture period in milliseconds")
    p.add_argument("--control-port", type=int,
                   default=wire.DEFAULT_CONTROL_PORT)
    p.add_argument("--frame-port", type=int,
                   default=wire.DEFAULT_FRAME_PORT)
    p.add_argument("--rate-cap", type=float, default=10.0, metavar="FPS",
                   help="outgoing frame rate cap")
    p.add_argument("--session-id", type=int, default=1)
    p.add_argument("--duration", type=float, default=None, metavar="S",
                   help="stop after S seconds (default: run until Ctrl-C)")
    p.add_argument("--demo-events", type=int, default=0, metavar="N",
                   help="emit N scripted user events over the run")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_subject)

    p = sub.add_parser("wizard", help="run the wizard-side service")
    p.add_argument("--mirror", required=True, metavar="DIR",
                   help="store mirror directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--frame-port", type=int,
                   default=wire.DEFAULT_FRAME_PORT)
    p.add_argument("--control-port", type=int,
                   default=wire.DEFAULT_CONTROL_PORT)
    p.add_argument("--ui-port", type=int, default=wizard.DEFAULT_UI_PORT)
    p.add_argument("--log", default=None, metavar="PATH",
                   help="wizard action log path (default: ./wizard.jsonl)")
    p.add_argument("--static", default=None, metavar="DIR",
                   help="directory served at / on the UI port")
    p.add_argument("--replay-dir", default=None, metavar="DIR",
                   help="directory served at /replay/ on the UI port")
    p.add_argument("--duration", type=float, default=None, metavar="S",
                   help="stop after S seconds (default: run until Ctrl-C)")
    p.set_defaults(func=cmd_wizard)

    p = sub.add_parser("replay", help="summarize a recorded session")
    p.add_argument("--session", required=True, metavar="DIR")
    p.add_argument("--at", type=int, default=None, metavar="US",
                   help="also print the render state at this timestamp")
    p.add_argument("--dispersion", type=int, default=40, metavar="PX")
    p.add_argument("--min-dur", type=int, default=100, metavar="MS")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("export", help="export a session as PNG frames")
    p.add_argument("--session", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--fps", type=int, default=10)
    p.add_argument("--dispersion", type=int, default=40, metavar="PX")
    p.add_argument("--min-dur", type=int, default=100, metavar="MS")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("validate", help="check a session directory")
    p.add_argument("session", metavar="SESSION_DIR")
    p.add_argument("--store", default=None, metavar="DIR",
                   help="resolve wizard message ids against this store")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gen-fixtures",
                       help="generate a synthetic store, mirror, and session")
    p.add_argument("out", metavar="OUT_DIR")
    p.add_argument("--messages", type=int, default=300)
    p.add_argument("--depth", type=int, default=3,
                   help="lexicon tree depth")
    p.add_argument("--seconds", type=int, default=30,
                   help="scripted session length")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_fixtures)

    p = sub.add_parser("bench", help="benchmark the protocol stack in-process")
    p.add_argument("--frames", type=int, default=bench.DEFAULT_FRAMES)
    p.add_argument("--size", type=int, default=bench.DEFAULT_FRAME_BYTES,
                   metavar="BYTES", help="frame payload size")
    p.add_argument("--loss", type=float, default=0.0,
                   help="datagram loss probability")
    p.add_argument("--reorder", type=float, default=0.0,
                   help="adjacent-datagram swap probability")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    _setup_logging()
    try:
        return args.func(args)
    except trace.UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except replay.ReplayLoadError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL
    except (trace.TraceError, store.StoreError, subject.AgentError,
            wizard.WizardError, bench.BenchError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
