"""Seeded fixture generation: message corpus, mirror, and a scripted session.

Everything downstream of the seed is deterministic, including media bytes
and the session's manual clock, so regenerating with the same seed gives a
byte-identical tree. The wall-clock anchor is a fixed constant for the same
reason.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from random import Random

from PIL import Image, ImageDraw

from . import recorder, store, trace
from .gaze import GazeSample

FIXED_WALL_CLOCK = "2026-01-01T00:00:00Z"

SYLLABLES = ("ba", "do", "ka", "lu", "mi", "no", "pe", "ra", "su", "ti",
             "vo", "ze", "fa", "go", "hi")
VERBS = ("adjust", "open", "apply", "move", "export", "blend", "select",
         "group", "trace", "resize")
WIDGET_COUNT = 8
SCREEN_W, SCREEN_H = 1024, 768
FRAME_W, FRAME_H = 320, 240


@dataclass
class FixtureSpec:
    n_messages: int = 300
    lexicon_depth: int = 3
    session_seconds: int = 30
    seed: int = 0


def _word(rng: Random) -> str:
    return "".join(rng.choice(SYLLABLES) for _ in range(rng.randrange(2, 4)))


def _wav(duration_ms: int, seed: int, rate: int = 8000) -> bytes:
    """Tiny PCM16 mono WAV with a deterministic sample pattern."""
    n = rate * duration_ms // 1000
    body = b"".join(struct.pack("<h", ((seed * 7 + k * 13) % 2048) - 1024)
                    for k in range(n))
    hdr = b"RIFF" + struct.pack("<I", 36 + len(body)) + b"WAVEfmt "
    hdr += struct.pack("<IHHIIHH", 16, 1, 1, rate, rate * 2, 2, 16)
    hdr += b"data" + struct.pack("<I", len(body))
    return hdr + body


def _jpeg(width: int, height: int, shade: int) -> bytes:
    img = Image.new("RGB", (width, height),
                    (shade % 256, (shade * 5 + 60) % 256, (shade * 11 + 30) % 256))
    buf = io.BytesIO()
    img.save(buf, format="JPEG", quality=80)
    return buf.getvalue()


class SyntheticScreen:
    """Deterministic stand-in for screen capture: a box orbits the canvas,
    advancing with every call, on a shade that shifts slowly."""

    def __init__(self, width: int = FRAME_W, height: int = FRAME_H):
        self.width = width
        self.height = height
        self.calls = 0

    def __call__(self) -> recorder.ScreenFrame:
        k = self.calls
        self.calls += 1
        img = Image.new("RGB", (self.width, self.height),
                        (30 + (k // 8) % 60, 40, 70))
        draw = ImageDraw.Draw(img)
        bx = (k * 17) % (self.width - 40)
        by = (k * 11) % (self.height - 40)
        draw.rectangle((bx, by, bx + 40, by + 40), fill=(220, 180, 40))
        draw.rectangle((0, 0, self.width - 1, 14), fill=(52, 52, 64))
        buf = io.BytesIO()
        img.save(buf, format="JPEG", quality=80)
        return recorder.ScreenFrame(jpeg=buf.getvalue(), width=self.width,
                                    height=self.height)


def _gen_lexicon(rng: Random, depth: int) -> tuple[dict, list[str]]:
    paths: list[str] = []

    def node(name: str, level: int, prefix: str) -> dict:
        path = f"{prefix}/{name}" if prefix else name
        paths.append(path)
        children = []
        if level < depth:
            used = set()
            for _ in range(rng.randrange(2, 5)):
                w = _word(rng)
                if w in used:
                    continue
                used.add(w)
                children.append(node(w, level + 1, path))
        return {"name": name, "children": children}

    top = []
    used = set()
    for _ in range(6):
        w = _word(rng)
        if w in used:
            continue
        used.add(w)
        top.append(node(w, 1, ""))
    return {"name": "root", "children": top}, paths


def _gen_store(out: Path, rng: Random, spec: FixtureSpec) -> list[str]:
    """Write the corpus tree; returns the generated message ids."""
    (out / "smil").mkdir(parents=True)
    (out / "media").mkdir()
    lexicon, paths = _gen_lexicon(rng, spec.lexicon_depth)
    widgets = [f"w_{_word(rng)}{i}" for i in range(WIDGET_COUNT)]
    records = []
    for i in range(spec.n_messages):
        mid = f"msg_{i:04d}"
        general = i % 37 == 36
        if general:
            rtypes: list[str] = []
            objects: list[dict] = []
        else:
            rtypes = [t for t in trace.REQUEST_TYPES if rng.random() < 0.45]
            if not rtypes:
                rtypes = [rng.choice(trace.REQUEST_TYPES)]
            objects = []
            seen = set()
            for _ in range(rng.randrange(1, 4)):
                if rng.random() < 0.75:
                    obj = ("lexicon", rng.choice(paths))
                else:
                    obj = ("widget", rng.choice(widgets))
                if obj in seen:
                    continue
                seen.add(obj)
                objects.append({"kind": obj[0], "id": obj[1]})
        subject = objects[0]["id"].rsplit("/", 1)[-1] if objects else "the basics"
        title = f"How to {rng.choice(VERBS)} {subject}"
        smil_rel = f"smil/{mid}.smil"
        roll = rng.random()
        anim_rel = f"media/anim_{i:04d}.xml"
        (out / anim_rel).write_text(
            f'<animation pose="{_word(rng)}" beats="{rng.randrange(2, 9)}"/>\n')
        if roll < 0.85:
            wav_rel = f"media/utt_{i:04d}.wav"
            (out / wav_rel).write_bytes(_wav(rng.randrange(250, 900), seed=i))
            begin = '' if roll < 0.70 else f' begin="{rng.randrange(300, 900)}ms"'
            smil = (f'<smil><body><par><audio src="{wav_rel}"{begin}/>'
                    f'<animation src="{anim_rel}"/></par></body></smil>\n')
        else:
            parts = []
            for k in range(rng.randrange(2, 4)):
                wav_rel = f"media/utt_{i:04d}_{k}.wav"
                (out / wav_rel).write_bytes(
                    _wav(rng.randrange(200, 600), seed=i * 10 + k))
                offset = '' if k == 0 else f' begin="{rng.randrange(200, 700)}ms"'
                parts.append(f'<audio src="{wav_rel}"{offset}/>')
            smil = f'<smil><body><seq>{"".join(parts)}</seq></body></smil>\n'
        (out / smil_rel).write_text(smil)
        attachments = []
        if rng.random() < 0.2:
            att_rel = f"media/att_{i:04d}.jpg"
            (out / att_rel).write_bytes(_jpeg(160, 120, shade=i * 3))
            attachments.append(att_rel)
        records.append({"id": mid, "title": title, "request_types": rtypes,
                        "objects": objects, "smil_file": smil_rel,
                        "attachments": attachments, "general": general})
    (out / "manifest.json").write_text(
        json.dumps(records, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    (out / "lexicon.json").write_text(
        json.dumps(lexicon, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return [r["id"] for r in records]


def _script_session(out: Path, rng: Random, spec: FixtureSpec,
                    loaded: store.Store) -> None:
    clock = trace.ManualClock()
    cfg = recorder.RecorderConfig(frame_source=SyntheticScreen(),
                                  auto_capture_period_ms=500,
                                  screen_width=SCREEN_W, screen_height=SCREEN_H)
    meta = trace.SessionMeta(session_id=spec.seed + 1,
                             subject_label=f"fixture-{spec.seed}",
                             wall_clock_start=FIXED_WALL_CLOCK)
    h = recorder.start(cfg, out, meta, clock=clock, tick_thread=False)

    end_us = spec.session_seconds * 1_000_000
    next_event = rng.randrange(200_000, 330_000)
    next_gaze = 0
    idle_until = 0
    cx, cy = SCREEN_W // 2, SCREEN_H // 2
    gaze_x, gaze_y = cx, cy
    dwell_left = 0
    activatable = [m for m in loaded.messages.values() if not m.general]
    request_times = ([rng.randrange(3, spec.session_seconds - 2) * 1_000_000
                      for _ in range(3)] if activatable and spec.session_seconds > 6
                     else [])
    request_times = sorted(set(request_times))
    utter_times = ([rng.randrange(2, spec.session_seconds - 2) * 1_000_000
                    for _ in range(2)] if spec.session_seconds > 5 else [])
    utter_times = sorted(set(utter_times))
    open_utt: list[tuple[int, recorder.UtteranceToken]] = []
    pending_play: list[tuple[int, str, str, str, str]] = []
    undone = False

    while clock.t < end_us:
        clock.advance(10_000)
        t = clock.t
        # gaze at 60 Hz with dwell clusters
        while next_gaze <= t:
            if dwell_left == 0:
                gaze_x = rng.randrange(0, SCREEN_W)
                gaze_y = rng.randrange(0, SCREEN_H)
                dwell_left = rng.randrange(3, 45)
            jitter = rng.choice((0, 1, 2, 8))
            sx = gaze_x + (rng.randrange(-jitter, jitter + 1) if jitter else 0)
            sy = gaze_y + (rng.randrange(-jitter, jitter + 1) if jitter else 0)
            valid = rng.random() > 0.02
            h.submit_gaze(GazeSample(t_us=next_gaze, x=sx, y=sy, valid=valid))
            dwell_left -= 1
            next_gaze += 16_667
        # user/system events, with scripted idle stretches
        if t >= next_event and t >= idle_until:
            cx = min(max(cx + rng.randrange(-80, 81), 0), SCREEN_W - 1)
            cy = min(max(cy + rng.randrange(-60, 61), 0), SCREEN_H - 1)
            roll = rng.random()
            if roll < 0.5:
                h.submit_event(trace.USER_EVENT, trace.UserEventPayload(
                    action="mouse_move", cursor_x=cx, cursor_y=cy, detail=""))
            elif roll < 0.8:
                h.submit_event(trace.USER_EVENT, trace.UserEventPayload(
                    action="mouse_click", cursor_x=cx, cursor_y=cy,
                    detail=rng.choice(("left", "right"))))
            elif roll < 0.92:
                h.submit_event(trace.USER_EVENT, trace.UserEventPayload(
                    action="key_press", cursor_x=cx, cursor_y=cy,
                    detail=rng.choice("abcdefgh")))
            else:
                h.submit_event(trace.SYSTEM_EVENT, trace.SystemEventPayload(
                    action=rng.choice(trace.SYSTEM_ACTIONS),
                    target=rng.choice(("main", "palette", "dlg"))))
            next_event = t + rng.randrange(200_000, 330_000)
            if rng.random() < 0.04:
                idle_until = t + 1_300_000  # let the auto-capture fire
        h.tick_auto_capture()
        # utterances
        if utter_times and t >= utter_times[0]:
            utter_times.pop(0)
            open_utt.append((t + rng.randrange(400_000, 900_000),
                             h.begin_utterance()))
        for due, token in list(open_utt):
            if t >= due:
                h.end_utterance(token, _wav(rng.randrange(100, 500), seed=due % 997))
                open_utt.remove((due, token))
        # help requests -> wizard command -> activation -> playback cues
        if request_times and t >= request_times[0]:
            request_times.pop(0)
            target = rng.choice(activatable)
            kind, oid = sorted(target.objects)[0]
            rtype = (sorted(target.request_types)[0] if target.request_types
                     else trace.REQUEST_TYPES[0])
            h.append_record(trace.HELP_REQUEST, trace.HelpRequestPayload(
                request_type=rtype, object_kind=kind, object_id=oid))
            pending_play.append((t + 600_000, target.id, "", "", "queued"))
        for entry in list(pending_play):
            due, mid, cue_kind, cue_src, phase = entry
            if t < due:
                continue
            pending_play.remove(entry)
            if phase == "queued":
                h.append_record(trace.WIZARD_COMMAND, trace.WizardCommandPayload(
                    command="activate", arg=mid))
                h.append_record(trace.MESSAGE_ACTIVATION,
                                trace.MessageActivationPayload(message_id=mid))
                for cue in loaded.messages[mid].timeline.cues:
                    pending_play.append((t + cue.begin_ms * 1000, mid,
                                         cue.kind, cue.src, "pending_start"))
            elif phase == "pending_start":
                h.append_record(trace.PLAYBACK_CUE, trace.PlaybackCuePayload(
                    message_id=mid, cue_kind=cue_kind, cue_src=cue_src,
                    phase="start"))
                pending_play.append((t + 300_000, mid, cue_kind, cue_src,
                                     "playing"))
            elif phase == "playing":
                h.append_record(trace.PLAYBACK_CUE, trace.PlaybackCuePayload(
                    message_id=mid, cue_kind=cue_kind, cue_src=cue_src,
                    phase="end"))
        if not undone and clock.t > end_us * 2 // 3:
            undone = True
            h.append_record(trace.WIZARD_COMMAND,
                            trace.WizardCommandPayload(command="undo", arg="1"))
    for due, token in open_utt:
        h.end_utterance(token, _wav(150, seed=7))
    for entry in list(pending_play):
        if entry[4] == "playing":
            h.append_record(trace.PLAYBACK_CUE, trace.PlaybackCuePayload(
                message_id=entry[1], cue_kind=entry[2], cue_src=entry[3],
                phase="end"))
    h.stop()


def gen_fixtures(out_dir: str | Path, spec: FixtureSpec | None = None) -> dict:
    """Generate store/, mirror/, and session/ under a fresh directory."""
    spec = spec or FixtureSpec()
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        raise trace.UsageError(f"fixture directory not empty: {out}")
    out.mkdir(parents=True, exist_ok=True)
    rng = Random(spec.seed)
    _gen_store(out / "store", rng, spec)
    loaded = store.load_store(out / "store")
    store.save_mirror(loaded, out / "mirror")
    _script_session(out / "session", rng, spec, loaded)
    report = trace.validate_session(out / "session", store=loaded)
    if not report.ok:
        raise trace.TraceError("generated session failed validation:\n"
                               + report.summary())
    return {"store": out / "store", "mirror": out / "mirror",
            "session": out / "session",
            "n_messages": len(loaded.messages)}
