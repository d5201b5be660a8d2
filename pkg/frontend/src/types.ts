// Shapes of everything the wizard service sends over its UI boundary:
// the /state snapshot, the /stream deltas, and the exported replay index.

export interface SubjectInfo {
  session_id: number | null;
  subject: string;
}

export interface FrameMeta {
  frame_seq: number;
  t_us: number;
  byte_len: number;
  age_ms?: number | null;
}

export interface TraceEvent {
  seq: number;
  t_us: number;
  kind: string;
  payload: Record<string, unknown>;
}

export interface HelpRequest {
  seq?: number;
  t_us?: number;
  request_type: string;
  object_kind: string;
  object_id: string;
}

export interface Suggestion {
  message_id: string;
  score: number;
  rank: number;
  title: string;
}

export interface PlaybackReport {
  message_id: string;
  status: string;
  cues?: number;
}

export interface LinkCounters {
  datagrams_received: number;
  frames_delivered: number;
  frames_dropped: number;
  crc_failures: number;
  stale_discarded: number;
  events_total: number;
  requests_total: number;
  commands_sent: number;
  gaze_rows: number;
  audio_chunks: number;
}

export interface MirrorEntry {
  id: string;
  title: string;
  general: boolean;
}

export interface StateSnapshot {
  subject: SubjectInfo | null;
  latest_frame: FrameMeta | null;
  event_tail: TraceEvent[];
  pending_request: HelpRequest | null;
  suggestions: Suggestion[];
  reports: PlaybackReport[];
  link: LinkCounters;
  mirror: { count: number; messages: MirrorEntry[] };
}

export type Delta =
  | ({ delta: "frame_meta" } & FrameMeta)
  | { delta: "event"; event: TraceEvent }
  | { delta: "request"; request: HelpRequest }
  | { delta: "suggestions"; request_seq?: number; suggestions: Suggestion[] }
  | { delta: "report"; report: PlaybackReport };

export interface ReplayIndexEntry {
  k: number;
  t_us: number;
  frame_file: string;
  n_active_fixations: number;
}
