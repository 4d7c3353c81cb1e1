/**
 * Console application: one session, one event-stream subscription, and a
 * board re-rendered from the projected log after every event.
 *
 * No optimistic UI anywhere: operator actions (send, approve, upload) only
 * issue the API call. The board changes when the kernel's own event for
 * that action arrives on the stream.
 */

import { ApiError, ConsoleClient, type FetchLike } from "./client.js";
import { projectLog, type ViewModel } from "./projection.js";
import { mountConsole, renderBoard, showToast, type ConsoleRefs } from "./render.js";
import { followEvents, type FollowOptions } from "./sse.js";
import type { EventDoc } from "./wire.js";
import type { Validator } from "./schema.js";
import { formatIssues } from "./schema.js";

export interface ConsoleOptions {
  root: HTMLElement;
  baseUrl: string;
  sessionId: string;
  fetchImpl?: FetchLike;
  /** Compiled schemas/v1/event.json; stream frames that fail it are refused. */
  validateEvent?: Validator;
  follow?: Pick<FollowOptions, "retryDelayMs" | "maxRetries">;
}

export interface ConsoleApp {
  readonly sessionId: string;
  readonly client: ConsoleClient;
  /** Resolves when the server closes the stream after the terminal event. */
  readonly done: Promise<void>;
  vm(): ViewModel;
  events(): readonly EventDoc[];
  refs(): ConsoleRefs;
  dispose(): void;
}

export function createConsole(opts: ConsoleOptions): ConsoleApp {
  const client = new ConsoleClient(opts.baseUrl, opts.fetchImpl);
  const log: EventDoc[] = [];
  let view: ViewModel = projectLog(log);
  const aborter = new AbortController();

  const toastError = (err: unknown): void => {
    if (err instanceof ApiError) {
      showToast(refs, `${err.code}: ${err.message}`);
    } else {
      showToast(refs, String(err));
    }
  };

  const refs = mountConsole(opts.root, {
    onSend: (text) => {
      client
        .sendMessage(opts.sessionId, text)
        .then(() => {
          refs.chatInput.value = "";
        })
        .catch(toastError);
    },
    onApprove: (approvalId, approved) => {
      client.resolveApproval(opts.sessionId, approvalId, approved).catch(toastError);
    },
    onUpload: (name, content) => {
      client.uploadDataset(opts.sessionId, name, content).catch(toastError);
    },
  });
  refs.sessionLabel.textContent = opts.sessionId;
  renderBoard(refs, view);

  const ingest = (event: EventDoc): void => {
    if (log.length > 0 && event.seq <= log[log.length - 1]!.seq) {
      return; // replayed frame after a resume
    }
    if (opts.validateEvent !== undefined) {
      const issues = opts.validateEvent(event);
      if (issues.length > 0) {
        showToast(refs, `event ${event.seq} violates the schema: ${formatIssues(issues)}`);
        return;
      }
    }
    log.push(event);
    view = projectLog(log);
    renderBoard(refs, view);
  };

  const done = followEvents(
    client,
    opts.sessionId,
    { onEvent: ingest },
    { fromSeq: 0, signal: aborter.signal, ...opts.follow },
  ).catch((err) => {
    toastError(err);
    throw err;
  });

  return {
    sessionId: opts.sessionId,
    client,
    done,
    vm: () => view,
    events: () => log,
    refs: () => refs,
    dispose: () => aborter.abort(),
  };
}

/**
 * Browser entry point. Query parameters:
 *   ?session=s-1            attach to an existing session
 *   ?scenario=textcls       create a fresh session first
 *   ?base=http://host:port  service origin (defaults to the page's own)
 */
export async function bootFromLocation(root: HTMLElement): Promise<ConsoleApp> {
  const params = new URLSearchParams(root.ownerDocument.location?.search ?? "");
  const base = params.get("base") ?? root.ownerDocument.location?.origin ?? "";
  const client = new ConsoleClient(base);
  let sessionId = params.get("session");
  if (sessionId === null) {
    const scenario = params.get("scenario");
    if (scenario === null) {
      throw new Error("pass ?session=<id> or ?scenario=<name>");
    }
    const summary = await client.createSession(scenario);
    sessionId = summary.session_id;
  }
  return createConsole({ root, baseUrl: base, sessionId });
}
