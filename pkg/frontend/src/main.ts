// Console entry point: fetch the initial snapshot, subscribe to the delta
// stream, and keep the two tabs rendering from one shared state value.

import { getState } from "./api.js";
import { initLive } from "./live.js";
import {
  applyDelta,
  applySnapshot,
  initialState,
  setConnection,
  type ConsoleState,
} from "./state.js";
import { initViewer } from "./viewer.js";
import { connectStream } from "./ws.js";

const base = window.location.origin;
const wsUrl = base.replace(/^http/, "ws") + "/stream";

let state: ConsoleState = initialState();
let renderQueued = false;

const live = initLive({
  base,
  getState: () => state,
  update: (mutate) => {
    state = mutate(state);
    scheduleRender();
  },
});
const viewer = initViewer(base);

function scheduleRender(): void {
  if (renderQueued) return;
  renderQueued = true;
  requestAnimationFrame(() => {
    renderQueued = false;
    live.render();
  });
}

async function resync(): Promise<void> {
  try {
    const snap = await getState(base);
    state = applySnapshot(state, snap, Date.now());
  } catch {
    state = setConnection(state, "lost");
  }
  scheduleRender();
}

connectStream(
  wsUrl,
  (delta) => {
    state = applyDelta(state, delta, Date.now());
    scheduleRender();
  },
  (status) => {
    if (status === "live") {
      // Reconnected: deltas missed while down are unrecoverable, so pull
      // a fresh snapshot and continue from there.
      void resync();
    } else {
      state = setConnection(state, status === "lost" ? "lost" : "connecting");
      scheduleRender();
    }
  },
);

void resync();

// The staleness badge and age readout move with wall time even when no
// delta arrives, so repaint on a short interval as well.
setInterval(() => live.render(), 250);

// -- tabs -------------------------------------------------------------------

const tabLive = document.querySelector<HTMLButtonElement>("#tabLive");
const tabReplay = document.querySelector<HTMLButtonElement>("#tabReplay");
const paneLive = document.querySelector<HTMLDivElement>("#paneLive");
const paneReplay = document.querySelector<HTMLDivElement>("#paneReplay");

function showTab(which: "live" | "replay"): void {
  if (!tabLive || !tabReplay || !paneLive || !paneReplay) return;
  tabLive.classList.toggle("active", which === "live");
  tabReplay.classList.toggle("active", which === "replay");
  paneLive.classList.toggle("hidden", which !== "live");
  paneReplay.classList.toggle("hidden", which !== "replay");
  if (which === "replay") viewer.render();
}

tabLive?.addEventListener("click", () => showTab("live"));
tabReplay?.addEventListener("click", () => showTab("replay"));
showTab("live");
