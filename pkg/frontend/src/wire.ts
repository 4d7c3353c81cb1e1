/** Wire types mirroring the kernel's published v1 schemas. */

export type AgentId = "user" | "task" | "data" | "model" | "server";

export const AGENT_IDS: readonly AgentId[] = ["user", "task", "data", "model", "server"];

export type EventKind =
  | "message"
  | "plan_proposed"
  | "step_started"
  | "step_finished"
  | "approval_requested"
  | "approval_resolved"
  | "refusal_issued"
  | "clarification_requested"
  | "deployment_status"
  | "terminal";

/** One audit-log record. seq is dense from 0; timestamps are logical ticks. */
export interface EventDoc {
  seq: number;
  timestamp: number;
  kind: EventKind;
  body: Record<string, unknown>;
}

export interface EnvelopeDoc {
  id: number;
  session: string;
  from: AgentId;
  to: AgentId;
  kind: string;
  payload: Record<string, unknown>;
  causality: number | null;
}

export interface ConstraintDoc {
  metric: string;
  value: number;
}

export interface DeploymentDoc {
  platform: string;
  qps_min: number;
  container_mem_bytes: number;
  target_format: string;
}

export interface TaskSpecDoc {
  task_type: string;
  modality: string[];
  objective: string;
  constraints: ConstraintDoc[];
  data_refs: string[];
  deployment: DeploymentDoc | null;
  raw_request: string;
}

export type Outcome = "completed" | "refused" | "cannot_fulfill";

export interface SessionSummary {
  session_id: string;
  state: string;
  last_seq: number;
}

/** API error body shape; every non-2xx reply carries exactly this. */
export interface ApiErrorBody {
  code: string;
  message: string;
  details: Record<string, unknown>;
}

function isRecord(value: unknown): value is Record<string, unknown> {
  return typeof value === "object" && value !== null && !Array.isArray(value);
}

/**
 * Cheap structural check for stream frames. Full keyword-level validation
 * against schemas/v1/event.json is the schema module's job; this guard only
 * keeps obviously foreign JSON out of the projection.
 */
export function isEventDoc(value: unknown): value is EventDoc {
  return (
    isRecord(value) &&
    typeof value.seq === "number" &&
    Number.isInteger(value.seq) &&
    value.seq >= 0 &&
    typeof value.timestamp === "number" &&
    typeof value.kind === "string" &&
    isRecord(value.body)
  );
}

export function parseEventLine(line: string): EventDoc {
  let doc: unknown;
  try {
    doc = JSON.parse(line);
  } catch (err) {
    throw new Error(`event line is not JSON: ${String(err)}`);
  }
  if (!isEventDoc(doc)) {
    throw new Error(`event line lacks the {seq, timestamp, kind, body} shape: ${line.slice(0, 120)}`);
  }
  return doc;
}

export function parseEventLog(jsonl: string): EventDoc[] {
  return jsonl
    .split("\n")
    .filter((line) => line.trim() !== "")
    .map(parseEventLine);
}
