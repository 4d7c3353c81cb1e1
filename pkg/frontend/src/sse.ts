/**
 * Server-sent event reader for the session event stream.
 *
 * Built on fetch + ReadableStream rather than EventSource so the same code
 * runs in the browser and in Node tests, and so reconnects can resume from
 * an explicit cursor (`?from=`) instead of relying on Last-Event-ID.
 */

import { ApiError, type ConsoleClient } from "./client.js";
import { isEventDoc, type EventDoc } from "./wire.js";

export interface EventSink {
  onEvent(event: EventDoc): void;
  /** Called once when the server ends the stream with its done frame. */
  onDone?(): void;
}

export type StreamEnd = "done" | "closed";

interface Frame {
  event: string;
  data: string;
  id?: string;
}

function parseFrame(raw: string): Frame | null {
  const frame: Frame = { event: "message", data: "" };
  const dataLines: string[] = [];
  for (const line of raw.split("\n")) {
    if (line === "" || line.startsWith(":")) continue;
    const sep = line.indexOf(":");
    const field = sep === -1 ? line : line.slice(0, sep);
    let value = sep === -1 ? "" : line.slice(sep + 1);
    if (value.startsWith(" ")) value = value.slice(1);
    if (field === "event") frame.event = value;
    else if (field === "data") dataLines.push(value);
    else if (field === "id") frame.id = value;
  }
  if (dataLines.length === 0 && frame.event === "message") return null;
  frame.data = dataLines.join("\n");
  return frame;
}

/**
 * Drain one open stream. Resolves "done" when the server's terminal frame
 * arrives, "closed" when the transport ends or aborts before that.
 */
export async function readEventStream(response: Response, sink: EventSink): Promise<StreamEnd> {
  const body = response.body;
  if (body === null) {
    return "closed";
  }
  const reader = body.getReader();
  const decoder = new TextDecoder();
  let buffer = "";

  const handle = (raw: string): StreamEnd | null => {
    const frame = parseFrame(raw.replace(/\r\n/g, "\n"));
    if (frame === null) return null;
    if (frame.event === "done") return "done";
    const doc: unknown = JSON.parse(frame.data);
    if (!isEventDoc(doc)) {
      throw new Error(`stream frame is not an event: ${frame.data.slice(0, 120)}`);
    }
    sink.onEvent(doc);
    return null;
  };

  try {
    for (;;) {
      let chunk: ReadableStreamReadResult<Uint8Array>;
      try {
        chunk = await reader.read();
      } catch (err) {
        if ((err as Error).name === "AbortError") return "closed";
        throw err;
      }
      if (chunk.done) return "closed";
      buffer += decoder.decode(chunk.value, { stream: true });
      let cut: number;
      while ((cut = buffer.indexOf("\n\n")) !== -1) {
        const raw = buffer.slice(0, cut);
        buffer = buffer.slice(cut + 2);
        const end = handle(raw);
        if (end === "done") {
          sink.onDone?.();
          return "done";
        }
      }
    }
  } finally {
    reader.releaseLock();
    // cancel is a no-op on a finished stream and frees a live one
    await body.cancel().catch(() => undefined);
  }
}

export interface FollowOptions {
  fromSeq?: number;
  signal?: AbortSignal;
  /** Pause before re-opening a dropped stream. */
  retryDelayMs?: number;
  /** Transport drops tolerated before giving up. */
  maxRetries?: number;
}

const sleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

/**
 * Follow a session's events from a cursor until the done frame, re-opening
 * the stream after transport drops. Duplicate delivery is impossible: the
 * cursor only moves forward and replayed frames below it are skipped.
 */
export async function followEvents(
  client: ConsoleClient,
  sessionId: string,
  sink: EventSink,
  opts: FollowOptions = {},
): Promise<void> {
  let cursor = opts.fromSeq ?? 0;
  const maxRetries = opts.maxRetries ?? 50;
  let drops = 0;

  for (;;) {
    let end: StreamEnd;
    try {
      const response = await client.openEvents(sessionId, {
        fromSeq: cursor,
        signal: opts.signal,
      });
      end = await readEventStream(response, {
        onEvent: (event) => {
          if (event.seq < cursor) return;
          cursor = event.seq + 1;
          sink.onEvent(event);
        },
        onDone: sink.onDone,
      });
    } catch (err) {
      if (err instanceof ApiError) throw err;
      if ((err as Error).name === "AbortError") return;
      end = "closed";
    }
    if (end === "done") return;
    if (opts.signal?.aborted) return;
    drops += 1;
    if (drops > maxRetries) {
      throw new Error(`event stream for ${sessionId} dropped ${drops} times, giving up`);
    }
    await sleep(opts.retryDelayMs ?? 150);
  }
}
