import { parseEventLine, type SessionEvent } from "./events.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export type StreamOptions = {
  baseUrl: string;
  sessionId: string;
  /** Resume after this sequence number (0 means from the beginning). */
  after?: number;
  /** Keep the connection open for new events and reconnect on clean ends. */
  follow?: boolean;
  onEvent: (event: SessionEvent) => void;
  /** Called before each reconnect attempt, mainly for tests and status UI. */
  onRetry?: (attempt: number, cursor: number) => void;
  fetchImpl?: FetchLike;
  retryDelayMs?: number;
  /** Consecutive failed connections tolerated before giving up. */
  maxRetries?: number;
};

export type StreamHandle = {
  stop: () => void;
  /** Resolves with the last applied sequence number. */
  done: Promise<number>;
};

function delay(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

async function* ndjsonLines(
  body: ReadableStream<Uint8Array>,
): AsyncGenerator<string, void, void> {
  const reader = body.getReader();
  const decoder = new TextDecoder();
  let buffer = "";
  try {
    for (;;) {
      const { done, value } = await reader.read();
      if (done) {
        break;
      }
      buffer += decoder.decode(value, { stream: true });
      let cut = buffer.indexOf("\n");
      while (cut >= 0) {
        const line = buffer.slice(0, cut).trim();
        buffer = buffer.slice(cut + 1);
        if (line !== "") {
          yield line;
        }
        cut = buffer.indexOf("\n");
      }
    }
  } finally {
    reader.releaseLock();
  }
  buffer += decoder.decode();
  if (buffer.trim() !== "") {
    // A partial trailing line means the connection died mid-record; the
    // record will be re-served after reconnecting from the cursor.
    throw new Error("stream truncated mid-line");
  }
}

/** Consume the session's NDJSON event stream with resume and dedup.
 *
 * The cursor starts at `after` and advances only on events actually
 * delivered to `onEvent`; every (re)connection asks the server for
 * `?after=<cursor>`, and anything at or below the cursor that arrives
 * anyway is dropped. Together those give exactly-once delivery to the
 * caller across disconnects.
 */
export function streamEvents(options: StreamOptions): StreamHandle {
  const fetchImpl: FetchLike = options.fetchImpl ?? ((url, init) => fetch(url, init));
  const follow = options.follow ?? false;
  const retryDelayMs = options.retryDelayMs ?? 1000;
  const maxRetries = options.maxRetries ?? 3;
  const controller = new AbortController();
  let stopped = false;
  let cursor = options.after ?? 0;
  let sawClosed = false;

  async function pump(): Promise<number> {
    let failures = 0;
    let attempt = 0;
    for (;;) {
      if (attempt > 0) {
        options.onRetry?.(attempt, cursor);
        await delay(retryDelayMs);
      }
      attempt += 1;
      if (stopped) {
        return cursor;
      }
      const url =
        `${options.baseUrl}/sessions/${options.sessionId}/events/stream` +
        `?after=${cursor}&follow=${follow ? "true" : "false"}`;
      let progressed = false;
      try {
        const response = await fetchImpl(url, { signal: controller.signal });
        if (!response.ok) {
          throw new Error(`stream request failed: HTTP ${response.status}`);
        }
        if (response.body === null) {
          throw new Error("stream response has no body");
        }
        for await (const line of ndjsonLines(response.body)) {
          const event = parseEventLine(line);
          if (event.seq <= cursor) {
            continue;
          }
          cursor = event.seq;
          progressed = true;
          if (event.kind === "phase_change" && event.payload["to"] === "Closed") {
            sawClosed = true;
          }
          options.onEvent(event);
          if (stopped) {
            return cursor;
          }
        }
      } catch (error) {
        if (stopped) {
          return cursor;
        }
        // A drop after delivering events is ordinary streaming churn; only
        // connections that produced nothing consume the retry budget.
        failures = progressed ? 0 : failures + 1;
        if (failures > maxRetries) {
          throw error;
        }
        continue;
      }
      failures = 0;
      if (!follow || sawClosed || stopped) {
        return cursor;
      }
    }
  }

  return {
    stop: () => {
      stopped = true;
      controller.abort();
    },
    done: pump(),
  };
}
