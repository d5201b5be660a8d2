// Replay position math over an exported index.json. All arithmetic is
// integer microseconds so a scrub position maps to exactly one entry no
// matter how it was reached (dragging, stepping, or timed playback).

import type { ReplayIndexEntry } from "./types.js";

export function durationUs(index: ReplayIndexEntry[]): number {
  return index.length ? index[index.length - 1].t_us : 0;
}

export function clampPosition(index: ReplayIndexEntry[], tUs: number): number {
  if (!index.length) return 0;
  if (tUs < 0) return 0;
  const last = durationUs(index);
  return tUs > last ? last : Math.floor(tUs);
}

/** Index of the entry shown at position t: the last one with t_us <= t. */
export function entryIndexAt(index: ReplayIndexEntry[], tUs: number): number {
  if (!index.length) return -1;
  const t = clampPosition(index, tUs);
  let lo = 0;
  let hi = index.length - 1;
  while (lo < hi) {
    const mid = (lo + hi + 1) >> 1;
    if (index[mid].t_us <= t) {
      lo = mid;
    } else {
      hi = mid - 1;
    }
  }
  return lo;
}

/** New position after wallDtMs of wall time at the given speed. */
export function advance(
  positionUs: number,
  wallDtMs: number,
  speed: number,
): number {
  if (speed <= 0) throw new Error("speed must be positive");
  return positionUs + Math.floor(wallDtMs * 1000 * speed);
}

export interface ReplayView {
  entry: ReplayIndexEntry | null;
  /** Whether the console's fixation layer should be shown. */
  overlayVisible: boolean;
  nActiveFixations: number;
}

/**
 * What the viewer shows at a position. The frame is the index entry at the
 * scrub position regardless of the overlay toggle: the overlay is a layer
 * above the img, never a different image.
 */
export function replayView(
  index: ReplayIndexEntry[],
  positionUs: number,
  overlayOn: boolean,
): ReplayView {
  const i = entryIndexAt(index, positionUs);
  const entry = i >= 0 ? index[i] : null;
  const n = entry ? entry.n_active_fixations : 0;
  return {
    entry,
    overlayVisible: overlayOn && n > 0,
    nActiveFixations: n,
  };
}

/** Tick-driven playback clock; the DOM layer feeds it wall-time deltas. */
export class Playback {
  positionUs = 0;
  speed = 1;
  playing = false;

  constructor(private index: ReplayIndexEntry[]) {}

  get finished(): boolean {
    return this.positionUs >= durationUs(this.index);
  }

  play(): void {
    if (this.finished) this.positionUs = 0;
    this.playing = true;
  }

  pause(): void {
    this.playing = false;
  }

  seekTo(tUs: number): void {
    this.positionUs = clampPosition(this.index, tUs);
  }

  /** Advance by one wall-time slice; stops at the end. */
  tick(wallDtMs: number): void {
    if (!this.playing) return;
    const next = advance(this.positionUs, wallDtMs, this.speed);
    const last = durationUs(this.index);
    if (next >= last) {
      this.positionUs = last;
      this.playing = false;
    } else {
      this.positionUs = next;
    }
  }
}
