// Replay tab: scrub/seek/speed controls over an exported frame sequence
// served under /replay/, with the console's own fixation layer on top.
// The overlay toggle only shows or hides that layer; the frame element
// always shows the exported image for the scrub position unchanged.

import { Playback, durationUs, replayView } from "./replay.js";
import type { ReplayIndexEntry } from "./types.js";

function el<T extends Element>(selector: string): T {
  const found = document.querySelector<T>(selector);
  if (!found) throw new Error(`missing element ${selector}`);
  return found;
}

export function initViewer(base: string): { render: () => void } {
  const loadBtn = el<HTMLButtonElement>("#replayLoad");
  const errorEl = el<HTMLDivElement>("#replayError");
  const bodyEl = el<HTMLDivElement>("#replayBody");
  const img = el<HTMLImageElement>("#replayImg");
  const overlayEl = el<HTMLDivElement>("#fixationLayer");
  const badgeEl = el<HTMLSpanElement>("#fixationBadge");
  const slider = el<HTMLInputElement>("#scrub");
  const playBtn = el<HTMLButtonElement>("#playPause");
  const speedSel = el<HTMLSelectElement>("#speed");
  const overlayToggle = el<HTMLInputElement>("#overlayToggle");
  const posEl = el<HTMLSpanElement>("#replayPos");

  let index: ReplayIndexEntry[] = [];
  let playback = new Playback(index);
  let lastTick = 0;

  loadBtn.addEventListener("click", () => {
    void load();
  });

  async function load(): Promise<void> {
    errorEl.classList.add("hidden");
    let resp: Response;
    try {
      resp = await fetch(`${base}/replay/index.json`);
    } catch (err) {
      showError(`replay index unreachable: ${String(err)}`);
      return;
    }
    if (!resp.ok) {
      showError(
        "no replay export available (start the wizard with --replay-dir " +
          "pointing at an export directory)",
      );
      return;
    }
    index = (await resp.json()) as ReplayIndexEntry[];
    playback = new Playback(index);
    slider.max = String(durationUs(index));
    slider.value = "0";
    bodyEl.classList.remove("hidden");
    render();
  }

  function showError(text: string): void {
    errorEl.textContent = text;
    errorEl.classList.remove("hidden");
    bodyEl.classList.add("hidden");
  }

  playBtn.addEventListener("click", () => {
    if (playback.playing) {
      playback.pause();
    } else {
      playback.play();
      lastTick = performance.now();
      requestAnimationFrame(tick);
    }
    render();
  });

  slider.addEventListener("input", () => {
    playback.pause();
    playback.seekTo(Number(slider.value));
    render();
  });

  speedSel.addEventListener("change", () => {
    playback.speed = Number(speedSel.value);
  });

  overlayToggle.addEventListener("change", () => render());

  function tick(now: number): void {
    if (!playback.playing) return;
    playback.tick(now - lastTick);
    lastTick = now;
    slider.value = String(playback.positionUs);
    render();
    if (playback.playing) requestAnimationFrame(tick);
  }

  function render(): void {
    if (!index.length) return;
    const view = replayView(index, playback.positionUs, overlayToggle.checked);
    if (view.entry) {
      const src = `${base}/replay/${view.entry.frame_file}`;
      if (img.dataset.file !== view.entry.frame_file) {
        img.dataset.file = view.entry.frame_file;
        img.src = src;
      }
    }
    overlayEl.classList.toggle("hidden", !view.overlayVisible);
    badgeEl.textContent =
      view.nActiveFixations === 1
        ? "1 fixation"
        : `${view.nActiveFixations} fixations`;
    playBtn.textContent = playback.playing ? "Pause" : "Play";
    posEl.textContent =
      `${(playback.positionUs / 1_000_000).toFixed(2)}s / ` +
      `${(durationUs(index) / 1_000_000).toFixed(2)}s`;
  }

  return { render };
}
