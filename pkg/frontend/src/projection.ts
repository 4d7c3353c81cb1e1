/**
 * Pure projection of an event log onto the console's view model.
 *
 * The view model is derived state only: feeding the same events in the same
 * order always yields the same board, whether they arrive live or from a
 * recorded log. Nothing here talks to the network or mutates its input.
 */

import type { AgentId, EventDoc, EventKind, Outcome } from "./wire.js";

export type StepState = "pending" | "running" | "done" | "failed" | "insufficient";

export interface ChatEntry {
  seq: number;
  from: AgentId;
  kind: string;
  text: string;
  recommendedN?: number;
  approvalId?: string;
}

export interface PlanStepView {
  seq: number;
  stepId: string;
  owner: AgentId;
  action: string;
  state: StepState;
}

export interface PlanRevisionView {
  seq: number;
  revision: number;
  stepIds: string[];
  added: string[];
  removed: string[];
}

export interface TimelineEntry {
  seq: number;
  agent: AgentId;
  kind: EventKind;
  label: string;
}

export interface ApprovalView {
  seq: number;
  approvalId: string;
  ask: string;
  context: string;
  resolved: boolean;
  approved?: boolean;
  resolvedSeq?: number;
}

export interface DatasetView {
  seq: number;
  datasetId: string;
  count: number;
  labeled?: number;
  trustedLabeled?: number;
  collected?: number;
  correctedIndices?: number[];
  summary?: string;
}

export interface CapacityView {
  seq: number;
  containers: number;
  qpsTarget: number;
  perContainerQps: number;
  fitsMemory: boolean;
}

export interface DeploymentStatusView {
  seq: number;
  status: string;
  endpoint: string;
}

export interface InterfaceDocView {
  seq: number;
  endpoint: string;
  text: string;
}

export interface MonitorView {
  seq: number;
  qpsObserved: number;
  errorRate: number;
}

export interface DeploymentView {
  capacity: CapacityView | null;
  statuses: DeploymentStatusView[];
  interfaceDoc: InterfaceDocView | null;
  monitor: MonitorView | null;
}

export interface TerminalView {
  seq: number;
  outcome: Outcome;
  text: string;
}

export interface RefusalView {
  seq: number;
  reason: string;
  ruleId: string | null;
}

export interface PendingUploadView {
  seq: number;
  text: string;
  recommendedN: number | null;
}

export interface ViewModel {
  lastSeq: number;
  chat: ChatEntry[];
  planSteps: PlanStepView[];
  planRevisions: PlanRevisionView[];
  timeline: TimelineEntry[];
  approvals: ApprovalView[];
  datasets: DatasetView[];
  deployment: DeploymentView;
  terminal: TerminalView | null;
  refusal: RefusalView | null;
  pendingUpload: PendingUploadView | null;
}

type Body = Record<string, unknown>;

const str = (body: Body, key: string): string | undefined =>
  typeof body[key] === "string" ? (body[key] as string) : undefined;

const num = (body: Body, key: string): number | undefined =>
  typeof body[key] === "number" ? (body[key] as number) : undefined;

const rec = (body: Body, key: string): Body | undefined => {
  const value = body[key];
  return typeof value === "object" && value !== null && !Array.isArray(value)
    ? (value as Body)
    : undefined;
};

const AGENTS: readonly string[] = ["user", "task", "data", "model", "server"];

function asAgent(value: unknown, fallback: AgentId): AgentId {
  return typeof value === "string" && AGENTS.includes(value) ? (value as AgentId) : fallback;
}

function chatText(payload: Body): string {
  return str(payload, "text") ?? str(payload, "ask") ?? str(payload, "reason") ?? "";
}

export function projectLog(events: readonly EventDoc[]): ViewModel {
  const chat: ChatEntry[] = [];
  const revisions: PlanRevisionView[] = [];
  const timeline: TimelineEntry[] = [];
  const approvals = new Map<string, ApprovalView>();
  const datasets = new Map<string, DatasetView>();
  const board = new Map<string, PlanStepView>();
  const stepMeta = new Map<string, { owner: AgentId; action: string }>();
  const deployment: DeploymentView = {
    capacity: null,
    statuses: [],
    interfaceDoc: null,
    monitor: null,
  };
  let terminal: TerminalView | null = null;
  let refusal: RefusalView | null = null;
  let pendingUpload: PendingUploadView | null = null;
  let runningStep: string | null = null;

  const push = (seq: number, agent: AgentId, kind: EventKind, label: string) => {
    timeline.push({ seq, agent, kind, label });
  };

  const stepOutput = (seq: number, output: Body) => {
    const datasetId = str(output, "dataset_id");
    if (datasetId !== undefined && num(output, "count") !== undefined) {
      const prior = datasets.get(datasetId);
      const view: DatasetView = {
        seq,
        datasetId,
        count: num(output, "count") ?? prior?.count ?? 0,
      };
      const labeled = num(output, "labeled");
      const trusted = num(output, "trusted_labeled");
      const collected = num(output, "collected");
      const summary = str(output, "summary");
      const corrected = output.corrected_indices;
      if (labeled !== undefined) view.labeled = labeled;
      if (trusted !== undefined) view.trustedLabeled = trusted;
      if (collected !== undefined) view.collected = collected;
      if (summary !== undefined) view.summary = summary;
      if (Array.isArray(corrected) && corrected.every((i) => typeof i === "number")) {
        view.correctedIndices = corrected as number[];
      }
      datasets.set(datasetId, { ...prior, ...view });
    }
    if (num(output, "per_container_qps") !== undefined) {
      deployment.capacity = {
        seq,
        containers: num(output, "containers") ?? 0,
        qpsTarget: num(output, "qps_target") ?? 0,
        perContainerQps: num(output, "per_container_qps") ?? 0,
        fitsMemory: output.fits_memory === true,
      };
    }
    const monitor = rec(output, "monitor");
    if (monitor !== undefined) {
      deployment.monitor = {
        seq,
        qpsObserved: num(monitor, "qps_observed") ?? 0,
        errorRate: num(monitor, "error_rate") ?? 0,
      };
    }
    const doc = str(output, "interface_doc");
    if (doc !== undefined) {
      deployment.interfaceDoc = { seq, endpoint: str(output, "endpoint") ?? "", text: doc };
    }
  };

  for (const event of events) {
    const { seq, kind, body } = event;
    switch (kind) {
      case "message": {
        const type = str(body, "type") ?? "";
        if (type === "chat") {
          const payload = rec(body, "payload") ?? {};
          const from = asAgent(body.from, "task");
          const entry: ChatEntry = {
            seq,
            from,
            kind: str(body, "kind") ?? "status",
            text: chatText(payload),
          };
          const recommended = num(payload, "recommended_n");
          const approvalId = str(payload, "approval_id");
          if (recommended !== undefined) entry.recommendedN = recommended;
          if (approvalId !== undefined) entry.approvalId = approvalId;
          chat.push(entry);
          if (from === "task" && entry.kind === "status" && recommended !== undefined) {
            pendingUpload = { seq, text: entry.text, recommendedN: recommended };
          }
          push(seq, from, kind, `${from}: ${entry.text}`);
        } else if (type === "tool_invocation") {
          const owner = runningStep !== null ? stepMeta.get(runningStep)?.owner ?? "task" : "task";
          push(seq, owner, kind, `${str(body, "tool_id") ?? "tool"} ${str(body, "status") ?? ""}`);
        } else if (type === "gateway_call") {
          push(seq, "task", kind, `gateway ${str(body, "tag") ?? "call"}`);
        } else if (type === "dataset_upload") {
          const datasetId = str(body, "dataset_id") ?? "dataset";
          const count = num(body, "count") ?? 0;
          const prior = datasets.get(datasetId);
          datasets.set(datasetId, { ...prior, seq, datasetId, count });
          pendingUpload = null;
          push(seq, "user", kind, `dataset ${datasetId} uploaded (${count} records)`);
        } else {
          push(seq, "task", kind, type || "message");
        }
        break;
      }
      case "plan_proposed": {
        const steps = Array.isArray(body.steps) ? (body.steps as Body[]) : [];
        const previous = revisions.length > 0 ? revisions[revisions.length - 1]!.stepIds : [];
        board.clear();
        for (const step of steps) {
          const stepId = str(step, "step_id") ?? "";
          const owner = asAgent(step.owner, "task");
          const action = str(step, "action") ?? "";
          stepMeta.set(stepId, { owner, action });
          board.set(stepId, {
            seq,
            stepId,
            owner,
            action,
            state: (str(step, "status") ?? "pending") as StepState,
          });
        }
        const stepIds = [...board.keys()];
        revisions.push({
          seq,
          revision: num(body, "revision") ?? revisions.length,
          stepIds,
          added: stepIds.filter((id) => !previous.includes(id)),
          removed: previous.filter((id) => !stepIds.includes(id)),
        });
        push(seq, "task", kind, `plan revision ${num(body, "revision") ?? "?"} (${steps.length} steps)`);
        break;
      }
      case "step_started": {
        const stepId = str(body, "step_id") ?? "";
        const owner = asAgent(body.owner, stepMeta.get(stepId)?.owner ?? "task");
        const action = str(body, "action") ?? stepMeta.get(stepId)?.action ?? "";
        stepMeta.set(stepId, { owner, action });
        board.set(stepId, { seq, stepId, owner, action, state: "running" });
        runningStep = stepId;
        push(seq, owner, kind, `${stepId} started`);
        break;
      }
      case "step_finished": {
        const stepId = str(body, "step_id") ?? "";
        const meta = stepMeta.get(stepId) ?? { owner: "task" as AgentId, action: "" };
        const state = (str(body, "status") ?? "done") as StepState;
        board.set(stepId, { seq, stepId, owner: meta.owner, action: meta.action, state });
        if (runningStep === stepId) runningStep = null;
        const output = rec(body, "output");
        if (output !== undefined) stepOutput(seq, output);
        push(seq, meta.owner, kind, `${stepId} ${state}`);
        break;
      }
      case "approval_requested": {
        const approvalId = str(body, "approval_id") ?? "";
        approvals.set(approvalId, {
          seq,
          approvalId,
          ask: str(body, "ask") ?? "",
          context: str(body, "context") ?? "",
          resolved: false,
        });
        push(seq, "task", kind, `approval ${approvalId}: ${str(body, "ask") ?? ""}`);
        break;
      }
      case "approval_resolved": {
        const approvalId = str(body, "approval_id") ?? "";
        const approved = body.approved === true;
        const prior = approvals.get(approvalId);
        if (prior !== undefined) {
          approvals.set(approvalId, { ...prior, resolved: true, approved, resolvedSeq: seq });
        }
        push(seq, asAgent(body.by, "user"), kind, `approval ${approvalId} ${approved ? "approved" : "rejected"}`);
        break;
      }
      case "refusal_issued": {
        refusal = { seq, reason: str(body, "reason") ?? "", ruleId: str(body, "rule_id") ?? null };
        push(seq, "task", kind, `refused: ${refusal.reason}`);
        break;
      }
      case "clarification_requested": {
        push(seq, "task", kind, `clarification: ${str(body, "question") ?? str(body, "ask") ?? ""}`);
        break;
      }
      case "deployment_status": {
        const status = str(body, "status") ?? "";
        deployment.statuses.push({ seq, status, endpoint: str(body, "endpoint") ?? "" });
        push(seq, "server", kind, `deployment ${status}`);
        break;
      }
      case "terminal": {
        terminal = {
          seq,
          outcome: (str(body, "outcome") ?? "completed") as Outcome,
          text: str(body, "summary") ?? str(body, "reason") ?? "",
        };
        pendingUpload = null;
        push(seq, "task", kind, `terminal ${terminal.outcome}`);
        break;
      }
    }
  }

  return {
    lastSeq: events.length > 0 ? events[events.length - 1]!.seq : -1,
    chat,
    planSteps: [...board.values()],
    planRevisions: revisions,
    timeline,
    approvals: [...approvals.values()],
    datasets: [...datasets.values()],
    deployment,
    terminal,
    refusal,
    pendingUpload,
  };
}

/** Approvals still waiting on an operator decision. */
export function pendingApprovals(vm: ViewModel): ApprovalView[] {
  return vm.approvals.filter((a) => !a.resolved);
}
