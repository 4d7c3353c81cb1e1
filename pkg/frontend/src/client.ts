/** Typed client for the five session-service endpoints. */

import type { ApiErrorBody, SessionSummary } from "./wire.js";

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;
  readonly details: Record<string, unknown>;

  constructor(status: number, body: ApiErrorBody) {
    super(body.message);
    this.name = "ApiError";
    this.status = status;
    this.code = body.code;
    this.details = body.details;
  }
}

export interface UploadReceipt extends SessionSummary {
  dataset_id: string;
  count: number;
}

export interface HealthDoc {
  status: string;
  version: string;
}

export interface EventStreamOptions {
  fromSeq?: number;
  signal?: AbortSignal;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function errorBody(res: Response): Promise<ApiErrorBody> {
  try {
    const doc: unknown = await res.json();
    if (
      typeof doc === "object" &&
      doc !== null &&
      typeof (doc as ApiErrorBody).code === "string" &&
      typeof (doc as ApiErrorBody).message === "string"
    ) {
      const body = doc as ApiErrorBody;
      return { code: body.code, message: body.message, details: body.details ?? {} };
    }
  } catch {
    // fall through to the generic shape
  }
  return { code: "malformed_error", message: `HTTP ${res.status}`, details: {} };
}

export class ConsoleClient {
  readonly baseUrl: string;
  private readonly doFetch: FetchLike;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    // keep the default fetch bound to its global, browsers reject bare calls
    this.doFetch = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: { accept: "application/json" } };
    if (body !== undefined) {
      init.headers = { ...init.headers, "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const res = await this.doFetch(`${this.baseUrl}${path}`, init);
    if (!res.ok) {
      throw new ApiError(res.status, await errorBody(res));
    }
    return (await res.json()) as T;
  }

  health(): Promise<HealthDoc> {
    return this.request("GET", "/health");
  }

  createSession(scenario: string, sessionId?: string): Promise<SessionSummary> {
    const body: Record<string, string> = { scenario };
    if (sessionId !== undefined) body.session_id = sessionId;
    return this.request("POST", "/v1/sessions", body);
  }

  sendMessage(sessionId: string, text: string): Promise<SessionSummary> {
    return this.request("POST", `/v1/sessions/${encodeURIComponent(sessionId)}/messages`, { text });
  }

  resolveApproval(sessionId: string, approvalId: string, approved: boolean): Promise<SessionSummary> {
    return this.request(
      "POST",
      `/v1/sessions/${encodeURIComponent(sessionId)}/approvals/${encodeURIComponent(approvalId)}`,
      { approved },
    );
  }

  uploadDataset(sessionId: string, name: string, content: string): Promise<UploadReceipt> {
    return this.request("POST", `/v1/sessions/${encodeURIComponent(sessionId)}/datasets`, {
      name,
      content,
    });
  }

  eventsUrl(sessionId: string, fromSeq?: number): string {
    const base = `${this.baseUrl}/v1/sessions/${encodeURIComponent(sessionId)}/events`;
    return fromSeq !== undefined && fromSeq > 0 ? `${base}?from=${fromSeq}` : base;
  }

  /** Open the server-sent event stream; the caller owns frame parsing. */
  async openEvents(sessionId: string, opts: EventStreamOptions = {}): Promise<Response> {
    const init: RequestInit = { headers: { accept: "text/event-stream" } };
    if (opts.signal) init.signal = opts.signal;
    const res = await this.doFetch(this.eventsUrl(sessionId, opts.fromSeq), init);
    if (!res.ok) {
      throw new ApiError(res.status, await errorBody(res));
    }
    return res;
  }
}
