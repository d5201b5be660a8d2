// Delta stream subscription with reconnect. The wizard pushes one JSON
// object per WebSocket message; order is the order things happened.

import type { Delta } from "./types.js";

export type StreamStatus = "connecting" | "live" | "lost";

export interface StreamHandle {
  close: () => void;
}

export function connectStream(
  wsUrl: string,
  onDelta: (delta: Delta) => void,
  onStatus: (status: StreamStatus) => void,
): StreamHandle {
  let ws: WebSocket | null = null;
  let closed = false;
  let retryMs = 500;

  const open = () => {
    onStatus("connecting");
    ws = new WebSocket(wsUrl);

    ws.onopen = () => {
      retryMs = 500;
      onStatus("live");
    };

    ws.onmessage = (ev) => {
      try {
        onDelta(JSON.parse(String(ev.data)) as Delta);
      } catch {
        // not JSON; ignore
      }
    };

    ws.onclose = () => {
      if (closed) return;
      onStatus("lost");
      setTimeout(open, retryMs);
      retryMs = Math.min(retryMs * 2, 8000);
    };

    ws.onerror = () => {
      // onclose fires next and owns the reconnect
    };
  };

  open();

  return {
    close: () => {
      closed = true;
      ws?.close();
    },
  };
}
