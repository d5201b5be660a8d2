import { describe, expect, it } from "vitest";

import {
  Playback,
  advance,
  clampPosition,
  durationUs,
  entryIndexAt,
  replayView,
} from "../src/replay.js";
import type { ReplayIndexEntry } from "../src/types.js";

/** An fps-5 export grid like the exporter writes: t = floor(k * 1e6 / 5). */
function makeIndex(nFrames: number): ReplayIndexEntry[] {
  return Array.from({ length: nFrames }, (_, k) => ({
    k,
    t_us: Math.floor((k * 1_000_000) / 5),
    frame_file: `frame_${String(k).padStart(6, "0")}.png`,
    n_active_fixations: k % 3 === 0 ? 0 : (k % 3),
  }));
}

const index = makeIndex(51); // 10 s at 5 fps

describe("scrub position math", () => {
  it("maps grid timestamps to their own entry", () => {
    for (const k of [0, 1, 7, 50]) {
      expect(entryIndexAt(index, index[k].t_us)).toBe(k);
    }
  });

  it("shows the last entry at or before mid-interval positions", () => {
    expect(entryIndexAt(index, 250_000)).toBe(1);
    expect(entryIndexAt(index, 399_999)).toBe(1);
    expect(entryIndexAt(index, 400_000)).toBe(2);
  });

  it("clamps before the start to the first frame", () => {
    expect(entryIndexAt(index, -5_000_000)).toBe(0);
  });

  it("scrub to t_max and beyond shows the last exported frame", () => {
    const last = index.length - 1;
    expect(entryIndexAt(index, durationUs(index))).toBe(last);
    expect(entryIndexAt(index, durationUs(index) + 123_456_789)).toBe(last);
  });

  it("clampPosition bounds any input into the export's range", () => {
    expect(clampPosition(index, -1)).toBe(0);
    expect(clampPosition(index, 123)).toBe(123);
    expect(clampPosition(index, 99_000_000)).toBe(durationUs(index));
  });

  it("handles an empty index without entries", () => {
    expect(entryIndexAt([], 0)).toBe(-1);
    expect(durationUs([])).toBe(0);
    expect(replayView([], 0, true).entry).toBeNull();
  });
});

describe("advance", () => {
  it("is exact integer microsecond arithmetic", () => {
    expect(advance(0, 16, 1)).toBe(16_000);
    expect(advance(100, 16, 2)).toBe(32_100);
    expect(advance(0, 16, 0.5)).toBe(8_000);
  });

  it("rejects non-positive speeds", () => {
    expect(() => advance(0, 16, 0)).toThrow();
    expect(() => advance(0, 16, -1)).toThrow();
  });
});

describe("timed playback", () => {
  function ticksToFinish(speed: number): number {
    const p = new Playback(index);
    p.speed = speed;
    p.play();
    let ticks = 0;
    while (p.playing) {
      p.tick(16);
      ticks++;
      if (ticks > 100_000) throw new Error("never finished");
    }
    return ticks;
  }

  it("2x speed finishes in half the wall time, within 5%", () => {
    const normal = ticksToFinish(1);
    const double = ticksToFinish(2);
    const ratio = double / normal;
    expect(Math.abs(ratio - 0.5)).toBeLessThanOrEqual(0.025);
  });

  it("stops exactly at the end of the export", () => {
    const p = new Playback(index);
    p.play();
    for (let i = 0; i < 100_000 && p.playing; i++) p.tick(16);
    expect(p.positionUs).toBe(durationUs(index));
    expect(p.finished).toBe(true);
    expect(p.playing).toBe(false);
  });

  it("play after finishing restarts from the beginning", () => {
    const p = new Playback(index);
    p.seekTo(durationUs(index));
    expect(p.finished).toBe(true);
    p.play();
    expect(p.positionUs).toBe(0);
    expect(p.playing).toBe(true);
  });

  it("seek clamps into range and pausing freezes the position", () => {
    const p = new Playback(index);
    p.seekTo(-10);
    expect(p.positionUs).toBe(0);
    p.seekTo(3_000_000);
    p.pause();
    p.tick(16);
    expect(p.positionUs).toBe(3_000_000);
  });
});

describe("overlay layering", () => {
  it("the frame shown never depends on the overlay toggle", () => {
    for (const t of [0, 333_333, 1_000_000, durationUs(index)]) {
      const on = replayView(index, t, true);
      const off = replayView(index, t, false);
      expect(off.entry).toEqual(on.entry);
      expect(off.entry?.frame_file).toBe(on.entry?.frame_file);
    }
  });

  it("overlay off hides the fixation layer", () => {
    const entryWithFix = index.find((e) => e.n_active_fixations > 0)!;
    const view = replayView(index, entryWithFix.t_us, false);
    expect(view.overlayVisible).toBe(false);
    expect(view.nActiveFixations).toBe(entryWithFix.n_active_fixations);
  });

  it("overlay on shows the layer only while fixations are active", () => {
    const withFix = index.find((e) => e.n_active_fixations > 0)!;
    const without = index.find((e) => e.n_active_fixations === 0)!;
    expect(replayView(index, withFix.t_us, true).overlayVisible).toBe(true);
    expect(replayView(index, without.t_us, true).overlayVisible).toBe(false);
  });
});
