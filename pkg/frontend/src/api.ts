// Thin wrappers for the wizard service's HTTP surface, plus the gate that
// guarantees one user gesture posts at most one command.

import type { StateSnapshot } from "./types.js";

export interface CommandResult {
  ok: boolean;
  status: number;
  error?: string;
}

export async function getState(base: string): Promise<StateSnapshot> {
  const resp = await fetch(`${base}/state`);
  if (!resp.ok) {
    throw new Error(`GET /state failed: HTTP ${resp.status}`);
  }
  return (await resp.json()) as StateSnapshot;
}

async function postJson(
  base: string,
  path: string,
  body: Record<string, unknown>,
): Promise<CommandResult> {
  let resp: Response;
  try {
    resp = await fetch(`${base}${path}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  } catch (err) {
    return { ok: false, status: 0, error: String(err) };
  }
  if (resp.ok) {
    return { ok: true, status: resp.status };
  }
  let error = `HTTP ${resp.status}`;
  try {
    const payload = (await resp.json()) as { error?: string };
    if (payload.error) error = payload.error;
  } catch {
    // non-JSON error body; keep the status text
  }
  return { ok: false, status: resp.status, error };
}

export function postActivate(base: string, id: string): Promise<CommandResult> {
  return postJson(base, "/activate", { id });
}

export function postGeneral(base: string, id: string): Promise<CommandResult> {
  return postJson(base, "/general", { id });
}

export function postUndo(base: string, n: number): Promise<CommandResult> {
  return postJson(base, "/undo", { n });
}

/** Cache-busting URL for the latest frame; seq changes per delivery. */
export function frameUrl(base: string, frameSeq: number): string {
  return `${base}/frame/latest?seq=${frameSeq}`;
}

/**
 * Serializes command posts per user gesture: while one command is in
 * flight, further run() calls are ignored rather than queued, so rapid
 * clicks can never double-fire.
 */
export class CommandGate {
  private inFlight = false;

  get busy(): boolean {
    return this.inFlight;
  }

  async run<T>(action: () => Promise<T>): Promise<T | undefined> {
    if (this.inFlight) return undefined;
    this.inFlight = true;
    try {
      return await action();
    } finally {
      this.inFlight = false;
    }
  }
}
