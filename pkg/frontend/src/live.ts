// Live console tab: subject screen with cursor marker and staleness badge,
// event ticker, request inbox with one-click activation, general palette,
// undo control, and the command history.

import {
  CommandGate,
  frameUrl,
  postActivate,
  postGeneral,
  postUndo,
  type CommandResult,
} from "./api.js";
import {
  commandsEnabled,
  frameAgeMs,
  isFrameStale,
  lastCursor,
  noteCommand,
  type CommandEntry,
  type ConsoleState,
} from "./state.js";
import type { TraceEvent } from "./types.js";

export interface LiveDeps {
  base: string;
  getState: () => ConsoleState;
  update: (mutate: (s: ConsoleState) => ConsoleState) => void;
}

function el<T extends Element>(selector: string): T {
  const found = document.querySelector<T>(selector);
  if (!found) throw new Error(`missing element ${selector}`);
  return found;
}

function describeEvent(ev: TraceEvent): string {
  const p = ev.payload;
  switch (ev.kind) {
    case "UserEvent": {
      const detail = p["detail"] ? ` ${String(p["detail"])}` : "";
      return `${String(p["action"])}${detail} @ ${String(p["cursor_x"])},${String(p["cursor_y"])}`;
    }
    case "HelpRequest":
      return `${String(p["request_type"])} about ${String(p["object_id"])}`;
    case "WizardCommand":
      return `${String(p["command"])} ${String(p["arg"])}`;
    case "MessageActivation":
      return `played ${String(p["message_id"])}`;
    default:
      return ev.kind;
  }
}

function fmtUs(tUs: number): string {
  return `${(tUs / 1_000_000).toFixed(2)}s`;
}

export function initLive(deps: LiveDeps): { render: () => void } {
  const connDot = el<HTMLSpanElement>("#connDot");
  const connText = el<HTMLSpanElement>("#connText");
  const banner = el<HTMLDivElement>("#disconnectBanner");
  const subjectLabel = el<HTMLSpanElement>("#subjectLabel");

  const frameImg = el<HTMLImageElement>("#frameImg");
  const framePlaceholder = el<HTMLDivElement>("#framePlaceholder");
  const staleBadge = el<HTMLSpanElement>("#staleBadge");
  const cursorMark = el<HTMLDivElement>("#cursorMark");
  const frameMeta = el<HTMLDivElement>("#frameMeta");

  const tickerEl = el<HTMLDivElement>("#ticker");
  const requestEl = el<HTMLDivElement>("#pendingRequest");
  const suggestionsEl = el<HTMLDivElement>("#suggestions");
  const awaitingEl = el<HTMLDivElement>("#awaiting");
  const commandErrorEl = el<HTMLDivElement>("#commandError");

  const overrideInput = el<HTMLInputElement>("#overrideSearch");
  const overrideList = el<HTMLDivElement>("#overrideList");
  const paletteEl = el<HTMLDivElement>("#generalPalette");

  const undoCount = el<HTMLInputElement>("#undoCount");
  const undoBtn = el<HTMLButtonElement>("#undoBtn");

  const historyEl = el<HTMLDivElement>("#history");
  const countersEl = el<HTMLDivElement>("#linkCounters");

  const gate = new CommandGate();
  let renderedEvents: TraceEvent[] | null = null;
  let renderedHistory = -1;
  let overrideOpen = false;

  async function send(
    command: CommandEntry["command"],
    arg: string,
    post: () => Promise<CommandResult>,
  ): Promise<void> {
    const state = deps.getState();
    if (!commandsEnabled(state) || gate.busy) return;
    await gate.run(async () => {
      const res = await post();
      deps.update((s) =>
        noteCommand(s, {
          at: Date.now(),
          command,
          arg,
          outcome: res.ok ? "sent" : "rejected",
          error: res.error,
        }),
      );
      commandErrorEl.textContent = res.ok ? "" : res.error ?? "command failed";
    });
  }

  function activate(id: string): void {
    void send("activate", id, () => postActivate(deps.base, id));
  }

  undoBtn.addEventListener("click", () => {
    const n = Math.max(1, Math.floor(Number(undoCount.value) || 1));
    void send("undo", String(n), () => postUndo(deps.base, n));
  });

  overrideInput.addEventListener("input", () => {
    overrideOpen = overrideInput.value.trim().length > 0;
    renderOverride(deps.getState());
  });

  function renderOverride(state: ConsoleState): void {
    overrideList.innerHTML = "";
    if (!overrideOpen) return;
    const needle = overrideInput.value.trim().toLowerCase();
    const hits = state.mirror.filter(
      (m) =>
        m.id.toLowerCase().includes(needle) ||
        m.title.toLowerCase().includes(needle),
    );
    for (const m of hits.slice(0, 12)) {
      const row = document.createElement("button");
      row.className = "suggestion override";
      row.textContent = `${m.title || m.id} (${m.id})`;
      row.disabled = !commandsEnabled(state);
      row.addEventListener("click", () => activate(m.id));
      overrideList.appendChild(row);
    }
    if (!hits.length) {
      const none = document.createElement("div");
      none.className = "muted";
      none.textContent = "no matching message";
      overrideList.appendChild(none);
    }
  }

  function renderFrame(state: ConsoleState, now: number): void {
    if (!state.frame) {
      frameImg.classList.add("hidden");
      framePlaceholder.classList.remove("hidden");
      staleBadge.classList.add("hidden");
      cursorMark.classList.add("hidden");
      frameMeta.textContent = "";
      return;
    }
    framePlaceholder.classList.add("hidden");
    frameImg.classList.remove("hidden");
    const seq = String(state.frame.frame_seq);
    if (frameImg.dataset.seq !== seq) {
      frameImg.dataset.seq = seq;
      frameImg.src = frameUrl(deps.base, state.frame.frame_seq);
    }
    const age = frameAgeMs(state, now);
    staleBadge.classList.toggle("hidden", !isFrameStale(state, now));
    frameMeta.textContent =
      `frame ${seq} · t=${fmtUs(state.frame.t_us)} · ` +
      `${(state.frame.byte_len / 1024).toFixed(1)} KB` +
      (age !== null ? ` · ${(age / 1000).toFixed(1)}s ago` : "");

    const cursor = lastCursor(state);
    if (cursor && frameImg.naturalWidth > 0) {
      const sx = frameImg.clientWidth / frameImg.naturalWidth;
      const sy = frameImg.clientHeight / frameImg.naturalHeight;
      cursorMark.style.left = `${cursor.x * sx}px`;
      cursorMark.style.top = `${cursor.y * sy}px`;
      cursorMark.classList.remove("hidden");
    } else {
      cursorMark.classList.add("hidden");
    }
  }

  function renderTicker(state: ConsoleState): void {
    if (renderedEvents === state.events) return;
    renderedEvents = state.events;
    tickerEl.innerHTML = "";
    for (let i = state.events.length - 1; i >= 0; i--) {
      const ev = state.events[i];
      const row = document.createElement("div");
      row.className = "ticker-row";
      row.dataset.kind = ev.kind;
      row.textContent = `${fmtUs(ev.t_us)}  ${describeEvent(ev)}`;
      tickerEl.appendChild(row);
    }
  }

  function renderInbox(state: ConsoleState): void {
    const enabled = commandsEnabled(state);
    if (state.pendingRequest) {
      const r = state.pendingRequest;
      requestEl.textContent =
        `${r.request_type} about ${r.object_kind} ${r.object_id}`;
      requestEl.classList.add("active");
    } else {
      requestEl.textContent = "no pending request";
      requestEl.classList.remove("active");
    }
    suggestionsEl.innerHTML = "";
    for (const s of state.suggestions) {
      const btn = document.createElement("button");
      btn.className = "suggestion";
      btn.disabled = !enabled;
      btn.textContent = `#${s.rank} ${s.title || s.message_id} · score ${s.score}`;
      btn.addEventListener("click", () => activate(s.message_id));
      suggestionsEl.appendChild(btn);
    }
    awaitingEl.classList.toggle("hidden", !state.awaitingReport);
  }

  function renderPalette(state: ConsoleState): void {
    const enabled = commandsEnabled(state);
    paletteEl.innerHTML = "";
    for (const m of state.mirror.filter((m) => m.general)) {
      const btn = document.createElement("button");
      btn.className = "palette-btn";
      btn.disabled = !enabled;
      btn.textContent = m.title || m.id;
      btn.addEventListener("click", () =>
        void send("general", m.id, () => postGeneral(deps.base, m.id)),
      );
      paletteEl.appendChild(btn);
    }
  }

  function renderHistory(state: ConsoleState): void {
    if (renderedHistory === state.history.length) return;
    renderedHistory = state.history.length;
    historyEl.innerHTML = "";
    for (let i = state.history.length - 1; i >= 0; i--) {
      const h = state.history[i];
      const row = document.createElement("div");
      row.className = `history-row ${h.outcome}`;
      const when = new Date(h.at).toLocaleTimeString();
      const tail = h.outcome === "rejected" ? ` : ${h.error ?? "rejected"}` : "";
      row.textContent = `${when}  ${h.command} ${h.arg}${tail}`;
      historyEl.appendChild(row);
    }
  }

  function renderCounters(state: ConsoleState): void {
    if (!state.link) {
      countersEl.textContent = "";
      return;
    }
    const l = state.link;
    countersEl.textContent =
      `frames ${l.frames_delivered} (dropped ${l.frames_dropped}) · ` +
      `events ${l.events_total} · requests ${l.requests_total} · ` +
      `commands ${l.commands_sent} · gaze ${l.gaze_rows} · ` +
      `crc ${l.crc_failures}`;
  }

  function render(): void {
    const state = deps.getState();
    const now = Date.now();
    const live = state.connection === "live";
    connDot.className = `dot ${live ? "ok" : state.connection === "lost" ? "bad" : ""}`;
    connText.textContent = state.connection;
    banner.classList.toggle("hidden", state.connection !== "lost");
    subjectLabel.textContent = state.subject
      ? `session ${state.subject.session_id ?? "?"}${state.subject.subject ? ` · ${state.subject.subject}` : ""}`
      : "no subject connected";

    renderFrame(state, now);
    renderTicker(state);
    renderInbox(state);
    renderPalette(state);
    renderOverride(state);
    renderHistory(state);
    renderCounters(state);
    undoBtn.disabled = !commandsEnabled(state);
  }

  return { render };
}
