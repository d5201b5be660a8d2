"""Help-message corpus: manifest loading, SMIL timelines, lexicon, filter.

A store directory holds manifest.json (array of message records),
lexicon.json (nested {name, children} tree), the SMIL files, and the media
they reference. Everything is resolved and validated at load time; after
that the store is immutable and freely shared.

The wizard side never gets the media. `mirror` projects each message down
to the five fields needed to choose and activate it, and `filter` gives
identical output over either representation.
"""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path

from .trace import REQUEST_TYPES, OBJECT_KINDS, HelpRequestPayload

CUE_KINDS = ("audio", "text", "animation")
DEFAULT_LIMIT = 7


class StoreError(Exception):
    """Base error for corpus handling."""


class LoadError(StoreError):
    """Aggregated load failure; `issues` itemizes every problem found."""

    def __init__(self, issues: list[str]):
        self.issues = list(issues)
        super().__init__(f"{len(self.issues)} issue(s):\n" +
                         "\n".join(f"  - {i}" for i in self.issues))


class SmilError(StoreError):
    """SMIL text outside the accepted subset."""


@dataclass(frozen=True)
class SmilCue:
    kind: str
    src: str
    begin_ms: int


@dataclass(frozen=True)
class SmilTimeline:
    cues: tuple[SmilCue, ...]


@dataclass(frozen=True)
class HelpMessage:
    id: str
    title: str
    request_types: frozenset[str]
    objects: frozenset[tuple[str, str]]  # (kind, id) pairs
    smil_file: str
    attachments: tuple[str, ...]
    general: bool
    timeline: SmilTimeline | None = None


@dataclass(frozen=True)
class MirrorMessage:
    id: str
    title: str
    request_types: frozenset[str]
    objects: frozenset[tuple[str, str]]
    general: bool


@dataclass(frozen=True)
class Suggestion:
    message_id: str
    score: int
    rank: int


def _begin_to_ms(text: str) -> int:
    """Convert a begin attribute ("1.5s", "300ms") to integer milliseconds."""
    text = text.strip()
    if text.endswith("ms"):
        number, scale = text[:-2], 1.0
    elif text.endswith("s"):
        number, scale = text[:-1], 1000.0
    else:
        raise SmilError(f"begin value {text!r} lacks an s/ms unit")
    try:
        value = float(number)
    except ValueError:
        raise SmilError(f"begin value {text!r} is not numeric") from None
    if value < 0:
        raise SmilError(f"begin value {text!r} is negative")
    return int(round(value * scale))


def parse_smil(text: str) -> SmilTimeline:
    """Parse the accepted SMIL subset into an ordered cue list.

    Grammar: smil > body > (par | seq)+, containers holding only leaf
    elements audio|text|animation with a src and an optional begin.
    par children all start from the container base plus their own offset;
    seq children chain, each starting at its predecessor's begin plus its
    own explicit offset (media durations are unknown at parse time).
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as e:
        raise SmilError(f"not well-formed XML: {e}") from None
    if root.tag != "smil":
        raise SmilError(f"root element is <{root.tag}>, expected <smil>")
    body = None
    for child in root:
        if child.tag != "body":
            raise SmilError(f"unknown element <{child.tag}> under <smil>")
        if body is not None:
            raise SmilError("multiple <body> elements")
        body = child
    if body is None:
        raise SmilError("missing <body>")
    cues: list[SmilCue] = []
    for container in body:
        if container.tag not in ("par", "seq"):
            raise SmilError(f"unknown element <{container.tag}> under <body>")
        base = _begin_to_ms(container.get("begin", "0ms"))
        cursor = base
        for leaf in container:
            if leaf.tag not in CUE_KINDS:
                raise SmilError(f"unknown element <{leaf.tag}> under <{container.tag}>")
            src = leaf.get("src")
            if not src:
                raise SmilError(f"<{leaf.tag}> missing src")
            offset = _begin_to_ms(leaf.get("begin", "0ms"))
            if container.tag == "par":
                begin = base + offset
            else:
                cursor = cursor + offset
                begin = cursor
            cues.append(SmilCue(kind=leaf.tag, src=src, begin_ms=begin))
    return SmilTimeline(cues=tuple(cues))


class Lexicon:
    """Rooted tree of named nodes; a path is the '/'-joined names below
    the root (the root's own name never appears in paths)."""

    def __init__(self, root_name: str, paths: frozenset[str]):
        self.root_name = root_name
        self.paths = paths

    def has_path(self, path: str) -> bool:
        return path in self.paths

    @classmethod
    def from_json(cls, data: dict) -> "Lexicon":
        if not isinstance(data, dict):
            raise LoadError(["lexicon.json: root must be an object"])
        issues: list[str] = []
        paths: set[str] = set()

        def walk(node, prefix: str, where: str) -> None:
            if not isinstance(node, dict):
                issues.append(f"lexicon: node at {where} is not an object")
                return
            name = node.get("name")
            if not isinstance(name, str) or not name:
                issues.append(f"lexicon: empty or missing name at {where}")
                return
            if "/" in name:
                issues.append(f"lexicon: name {name!r} contains '/'")
                return
            path = f"{prefix}/{name}" if prefix else name
            paths.add(path)
            seen = set()
            for i, child in enumerate(node.get("children") or []):
                cname = child.get("name") if isinstance(child, dict) else None
                if cname in seen:
                    issues.append(f"lexicon: duplicate sibling name {cname!r} under {path!r}")
                seen.add(cname)
                walk(child, path, f"{where}/{i}")

        root_name = data.get("name", "")
        seen = set()
        for i, child in enumerate(data.get("children") or []):
            cname = child.get("name") if isinstance(child, dict) else None
            if cname in seen:
                issues.append(f"lexicon: duplicate sibling name {cname!r} at top level")
            seen.add(cname)
            walk(child, "", f"root/{i}")
        if issues:
            raise LoadError(issues)
        return cls(root_name=root_name, paths=frozenset(paths))


class Store:
    """Loaded corpus: message map, lexicon, and resolved timelines."""

    def __init__(self, directory: Path, messages: dict[str, HelpMessage],
                 lexicon: Lexicon):
        self.directory = directory
        self.messages = messages
        self.lexicon = lexicon

    def has_message(self, message_id: str) -> bool:
        return message_id in self.messages

    def is_general(self, message_id: str) -> bool:
        msg = self.messages.get(message_id)
        return msg is not None and msg.general

    def byte_size(self) -> int:
        return sum(p.stat().st_size for p in self.directory.rglob("*") if p.is_file())


class MirrorStore:
    """Wizard-side projection: commands only, no media, no file paths."""

    def __init__(self, messages: dict[str, MirrorMessage]):
        self.messages = messages

    def has_message(self, message_id: str) -> bool:
        return message_id in self.messages

    def is_general(self, message_id: str) -> bool:
        msg = self.messages.get(message_id)
        return msg is not None and msg.general


def _parse_objects(raw, where: str, issues: list[str]) -> frozenset[tuple[str, str]]:
    objects = set()
    if not isinstance(raw, list):
        issues.append(f"{where}: objects must be a list")
        return frozenset()
    for entry in raw:
        if (not isinstance(entry, dict) or not isinstance(entry.get("kind"), str)
                or not isinstance(entry.get("id"), str)):
            issues.append(f"{where}: object entries need string kind and id")
            continue
        if entry["kind"] not in OBJECT_KINDS:
            issues.append(f"{where}: unknown object kind {entry['kind']!r}")
            continue
        if not entry["id"]:
            issues.append(f"{where}: empty object id")
            continue
        objects.add((entry["kind"], entry["id"]))
    return frozenset(objects)


def load_store(directory: str | Path) -> Store:
    """Load and fully validate a corpus; raises LoadError listing every
    problem rather than stopping at the first."""
    directory = Path(directory)
    issues: list[str] = []
    manifest_path = directory / "manifest.json"
    lexicon_path = directory / "lexicon.json"
    if not manifest_path.is_file():
        raise LoadError([f"missing {manifest_path}"])
    if not lexicon_path.is_file():
        raise LoadError([f"missing {lexicon_path}"])
    try:
        lexicon = Lexicon.from_json(json.loads(lexicon_path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as e:
        raise LoadError([f"lexicon.json: invalid JSON: {e}"]) from None
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise LoadError([f"manifest.json: invalid JSON: {e}"]) from None
    if not isinstance(manifest, list):
        raise LoadError(["manifest.json: top level must be an array"])

    messages: dict[str, HelpMessage] = {}
    for i, rec in enumerate(manifest):
        where = f"message[{i}]"
        if not isinstance(rec, dict):
            issues.append(f"{where}: not an object")
            continue
        mid = rec.get("id")
        if not isinstance(mid, str) or not mid:
            issues.append(f"{where}: missing id")
            continue
        where = f"message {mid!r}"
        if mid in messages:
            issues.append(f"duplicate id {mid!r}")
            continue
        title = rec.get("title", "")
        if not isinstance(title, str):
            issues.append(f"{where}: title must be a string")
            title = ""
        rtypes = rec.get("request_types", [])
        bad = [t for t in rtypes if t not in REQUEST_TYPES]
        if bad:
            issues.append(f"{where}: unknown request types {bad}")
        objects = _parse_objects(rec.get("objects", []), where, issues)
        general = bool(rec.get("general", False))
        if not general and not objects:
            issues.append(f"{where}: non-general message has no objects")
        for kind, oid in objects:
            if kind == "lexicon" and not lexicon.has_path(oid):
                issues.append(f"{where}: lexicon path {oid!r} absent from lexicon")
        smil_file = rec.get("smil_file", "")
        timeline = None
        if not isinstance(smil_file, str) or not smil_file:
            issues.append(f"{where}: missing smil_file")
        else:
            smil_path = directory / smil_file
            if not smil_path.is_file():
                issues.append(f"{where}: dangling smil_file {smil_file!r}")
            else:
                try:
                    timeline = parse_smil(smil_path.read_text(encoding="utf-8"))
                except SmilError as e:
                    issues.append(f"{where}: {smil_file}: {e}")
                else:
                    for cue in timeline.cues:
                        if not (directory / cue.src).is_file():
                            issues.append(f"{where}: cue src {cue.src!r} does not resolve")
        attachments = rec.get("attachments", [])
        if not isinstance(attachments, list):
            issues.append(f"{where}: attachments must be a list")
            attachments = []
        for a in attachments:
            if not isinstance(a, str) or not (directory / a).is_file():
                issues.append(f"{where}: dangling attachment {a!r}")
        messages[mid] = HelpMessage(
            id=mid, title=title,
            request_types=frozenset(t for t in rtypes if t in REQUEST_TYPES),
            objects=objects, smil_file=smil_file if isinstance(smil_file, str) else "",
            attachments=tuple(a for a in attachments if isinstance(a, str)),
            general=general, timeline=timeline,
        )
    if issues:
        raise LoadError(issues)
    return Store(directory=directory, messages=messages, lexicon=lexicon)


def _score(message, request: HelpRequestPayload) -> int:
    """Relevance ladder: 3 exact object + type, 2 exact object, 1 strict
    lexicon ancestor, 0 unrelated. General messages never score (they
    have their own palette)."""
    if message.general:
        return 0
    key = (request.object_kind, request.object_id)
    if key in message.objects:
        return 3 if request.request_type in message.request_types else 2
    if request.object_kind == "lexicon":
        prefix = request.object_id
        for kind, oid in message.objects:
            if kind == "lexicon" and prefix != oid and prefix.startswith(oid + "/"):
                return 1
    return 0


def filter_messages(store: Store | MirrorStore, request: HelpRequestPayload,
                    limit: int = DEFAULT_LIMIT) -> list[Suggestion]:
    """Rank the corpus against one request; deterministic by construction
    (total order on (score desc, id asc))."""
    request.validate()
    scored = []
    for message in store.messages.values():
        s = _score(message, request)
        if s > 0:
            scored.append((-s, message.id))
    scored.sort()
    out = []
    for rank, (neg, mid) in enumerate(scored[:limit], start=1):
        out.append(Suggestion(message_id=mid, score=-neg, rank=rank))
    return out


def mirror(store: Store) -> MirrorStore:
    return MirrorStore(messages={
        m.id: MirrorMessage(id=m.id, title=m.title, request_types=m.request_types,
                            objects=m.objects, general=m.general)
        for m in store.messages.values()
    })


def mirror_to_json(m: MirrorStore) -> str:
    """Canonical serialization (sorted ids, sorted members) so identical
    stores mirror to identical bytes."""
    records = []
    for mid in sorted(m.messages):
        msg = m.messages[mid]
        records.append({
            "id": msg.id,
            "title": msg.title,
            "request_types": sorted(msg.request_types),
            "objects": [{"kind": k, "id": i} for k, i in sorted(msg.objects)],
            "general": msg.general,
        })
    return json.dumps({"messages": records}, separators=(",", ":"))


def save_mirror(store: Store, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "mirror.json"
    path.write_text(mirror_to_json(mirror(store)), encoding="utf-8")
    return path


def load_mirror(directory: str | Path) -> MirrorStore:
    """Read a mirror directory (or the mirror.json inside it)."""
    path = Path(directory)
    if path.is_dir():
        path = path / "mirror.json"
    if not path.is_file():
        raise LoadError([f"missing {path}"])
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise LoadError([f"{path.name}: invalid JSON: {e}"]) from None
    issues: list[str] = []
    messages: dict[str, MirrorMessage] = {}
    for i, rec in enumerate(data.get("messages", [])):
        mid = rec.get("id")
        if not isinstance(mid, str) or not mid:
            issues.append(f"mirror message[{i}]: missing id")
            continue
        if mid in messages:
            issues.append(f"mirror: duplicate id {mid!r}")
            continue
        messages[mid] = MirrorMessage(
            id=mid, title=rec.get("title", ""),
            request_types=frozenset(t for t in rec.get("request_types", [])
                                    if t in REQUEST_TYPES),
            objects=_parse_objects(rec.get("objects", []), f"mirror {mid!r}", issues),
            general=bool(rec.get("general", False)),
        )
    if issues:
        raise LoadError(issues)
    return MirrorStore(messages=messages)
