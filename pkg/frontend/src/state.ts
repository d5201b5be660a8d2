// Console state and the reducer that maintains it. The console never
// originates state: every field other than the local command history is a
// copy of a /state snapshot or the result of applying stream deltas to one.

import type {
  Delta,
  FrameMeta,
  HelpRequest,
  LinkCounters,
  MirrorEntry,
  PlaybackReport,
  StateSnapshot,
  SubjectInfo,
  Suggestion,
  TraceEvent,
} from "./types.js";

export const EVENT_TAIL_LIMIT = 200;
export const STALE_AFTER_MS = 1000;
export const REPORT_TAIL_LIMIT = 50;

export type Connection = "connecting" | "live" | "lost";

export interface CommandEntry {
  at: number; // local wall-clock ms
  command: "activate" | "general" | "undo";
  arg: string;
  outcome: "sent" | "rejected";
  error?: string;
}

export interface ConsoleState {
  connection: Connection;
  subject: SubjectInfo | null;
  frame: FrameMeta | null;
  frameSeenAt: number | null; // local ms when the frame meta arrived
  events: TraceEvent[];
  pendingRequest: HelpRequest | null;
  suggestions: Suggestion[];
  reports: PlaybackReport[];
  awaitingReport: boolean;
  link: LinkCounters | null;
  mirror: MirrorEntry[];
  history: CommandEntry[];
}

export function initialState(): ConsoleState {
  return {
    connection: "connecting",
    subject: null,
    frame: null,
    frameSeenAt: null,
    events: [],
    pendingRequest: null,
    suggestions: [],
    reports: [],
    awaitingReport: false,
    link: null,
    mirror: [],
    history: [],
  };
}

/** Replace every server-owned field with the snapshot's values. */
export function applySnapshot(
  state: ConsoleState,
  snap: StateSnapshot,
  now: number,
): ConsoleState {
  let seenAt: number | null = null;
  if (snap.latest_frame) {
    // The snapshot reports the frame's age; back-date our local receipt
    // time so the staleness badge is right from the first render.
    seenAt = now - (snap.latest_frame.age_ms ?? 0);
  }
  return {
    ...state,
    connection: "live",
    subject: snap.subject,
    frame: snap.latest_frame,
    frameSeenAt: seenAt,
    events: snap.event_tail.slice(-EVENT_TAIL_LIMIT),
    pendingRequest: snap.pending_request,
    suggestions: snap.suggestions,
    reports: snap.reports.slice(-REPORT_TAIL_LIMIT),
    link: snap.link,
    mirror: snap.mirror.messages,
  };
}

/** Apply one stream delta. Deltas arrive in order and are never reordered. */
export function applyDelta(
  state: ConsoleState,
  delta: Delta,
  now: number,
): ConsoleState {
  switch (delta.delta) {
    case "frame_meta": {
      // Stale frames are never displayed: the shown frame_seq only grows.
      if (state.frame && delta.frame_seq < state.frame.frame_seq) {
        return state;
      }
      const frame: FrameMeta = {
        frame_seq: delta.frame_seq,
        t_us: delta.t_us,
        byte_len: delta.byte_len,
      };
      return { ...state, frame, frameSeenAt: now };
    }
    case "event": {
      const events = [...state.events, delta.event];
      if (events.length > EVENT_TAIL_LIMIT) {
        events.splice(0, events.length - EVENT_TAIL_LIMIT);
      }
      return { ...state, events };
    }
    case "request": {
      // Suggestions for the previous request no longer apply; the ranked
      // list for this one follows in its own delta.
      return { ...state, pendingRequest: delta.request, suggestions: [] };
    }
    case "suggestions": {
      return { ...state, suggestions: delta.suggestions };
    }
    case "report": {
      const reports = [...state.reports, delta.report];
      if (reports.length > REPORT_TAIL_LIMIT) {
        reports.splice(0, reports.length - REPORT_TAIL_LIMIT);
      }
      return { ...state, reports, awaitingReport: false };
    }
  }
}

export function setConnection(
  state: ConsoleState,
  connection: Connection,
): ConsoleState {
  if (state.connection === connection) return state;
  return { ...state, connection };
}

export function noteCommand(
  state: ConsoleState,
  entry: CommandEntry,
): ConsoleState {
  const awaiting =
    entry.outcome === "sent" && entry.command !== "undo"
      ? true
      : state.awaitingReport;
  return { ...state, history: [...state.history, entry], awaitingReport: awaiting };
}

export function frameAgeMs(state: ConsoleState, now: number): number | null {
  if (state.frameSeenAt === null) return null;
  return Math.max(0, now - state.frameSeenAt);
}

/** True once the shown frame is older than the staleness threshold. */
export function isFrameStale(state: ConsoleState, now: number): boolean {
  const age = frameAgeMs(state, now);
  return age !== null && age > STALE_AFTER_MS;
}

/** Commands are only allowed with a live link and an established session. */
export function commandsEnabled(state: ConsoleState): boolean {
  return state.connection === "live" && state.subject !== null;
}

/** Last known cursor position from the event ticker, if any. */
export function lastCursor(
  state: ConsoleState,
): { x: number; y: number } | null {
  for (let i = state.events.length - 1; i >= 0; i--) {
    const ev = state.events[i];
    if (ev.kind !== "UserEvent") continue;
    const x = ev.payload["cursor_x"];
    const y = ev.payload["cursor_y"];
    if (typeof x === "number" && typeof y === "number") {
      return { x, y };
    }
  }
  return null;
}
