/**
 * DOM layer: a static skeleton mounted once, panels re-rendered from the
 * view model after every event. Rendering is idempotent, the same view
 * model always produces the same markup, and every dynamic element carries
 * the seq of the one event it was derived from (data-seq, and id="ev-N" on
 * timeline rows so individual events are deep-linkable).
 */

import type { ViewModel, ApprovalView } from "./projection.js";
import { pendingApprovals } from "./projection.js";
import { AGENT_IDS } from "./wire.js";

const CSS = `
.ff-root {
  font-family: system-ui, sans-serif;
  font-size: 14px;
  color: #1a1a2e;
  background: #f4f4f8;
  padding: 12px;
  box-sizing: border-box;
}
.ff-header {
  display: flex;
  align-items: baseline;
  gap: 12px;
  padding: 8px 12px;
  background: #fff;
  border: 1px solid #d8d8e0;
  border-radius: 6px;
  margin-bottom: 12px;
}
.ff-title { font-weight: 700; letter-spacing: 1px; }
.ff-session { color: #666; font-size: 12px; }
.ff-badge {
  margin-left: auto;
  padding: 2px 10px;
  border-radius: 10px;
  font-size: 12px;
  font-weight: 600;
  background: #e4e4ec;
  color: #444;
}
.ff-badge-completed { background: #d7f2d7; color: #1d6b1d; }
.ff-badge-refused { background: #fbdcdc; color: #8f1d1d; }
.ff-badge-cannot_fulfill { background: #fbe7d0; color: #8a4b0f; }
.ff-badge-open { background: #dde7fb; color: #1d3f8f; }
.ff-columns { display: flex; gap: 12px; align-items: flex-start; flex-wrap: wrap; }
.ff-panel {
  background: #fff;
  border: 1px solid #d8d8e0;
  border-radius: 6px;
  padding: 10px 12px;
  margin-bottom: 12px;
}
.ff-panel h2 { margin: 0 0 8px 0; font-size: 12px; text-transform: uppercase; color: #555; }
.ff-col-main { flex: 2 1 420px; min-width: 320px; }
.ff-col-side { flex: 1 1 280px; min-width: 260px; }
.ff-chat-list { list-style: none; margin: 0 0 8px 0; padding: 0; max-height: 320px; overflow: auto; }
.ff-chat-list li { margin-bottom: 6px; padding: 6px 8px; border-radius: 6px; background: #eef1f8; }
.ff-chat-list li.ff-from-user { background: #e3f0e3; }
.ff-chat-from { font-weight: 600; margin-right: 6px; }
.ff-chat-kind { color: #888; font-size: 11px; margin-left: 6px; }
.ff-chat-form { display: flex; gap: 6px; }
.ff-chat-form input[type="text"] { flex: 1; padding: 6px 8px; border: 1px solid #ccd; border-radius: 4px; }
.ff-input-note { color: #8a4b0f; font-size: 12px; margin-top: 4px; min-height: 14px; }
.ff-plan-table { width: 100%; border-collapse: collapse; }
.ff-plan-table th { text-align: left; font-size: 11px; color: #777; padding: 2px 6px; }
.ff-plan-table td { padding: 3px 6px; border-top: 1px solid #eee; }
.ff-state { padding: 1px 8px; border-radius: 8px; font-size: 11px; font-weight: 600; }
.ff-state-pending { background: #ececf2; color: #555; }
.ff-state-running { background: #dde7fb; color: #1d3f8f; }
.ff-state-done { background: #d7f2d7; color: #1d6b1d; }
.ff-state-failed { background: #fbdcdc; color: #8f1d1d; }
.ff-state-insufficient { background: #fbe7d0; color: #8a4b0f; }
.ff-revisions { list-style: none; margin: 8px 0 0 0; padding: 0; font-size: 12px; color: #555; }
.ff-lanes { display: flex; gap: 8px; overflow-x: auto; }
.ff-lane { flex: 1 1 0; min-width: 130px; }
.ff-lane h3 { margin: 0 0 4px 0; font-size: 11px; text-transform: uppercase; color: #777; }
.ff-lane ol { list-style: none; margin: 0; padding: 0; font-size: 12px; }
.ff-lane li { padding: 2px 4px; border-left: 2px solid #ccd; margin-bottom: 2px; }
.ff-lane li a { color: #99a; text-decoration: none; margin-right: 4px; font-size: 10px; }
.ff-approval { border: 1px solid #e8d9b8; background: #fdf6e6; border-radius: 6px; padding: 8px; margin-bottom: 6px; }
.ff-approval-resolved { opacity: 0.65; background: #f1f1f4; border-color: #ddd; }
.ff-approval button { margin-right: 6px; }
.ff-dataset { border-top: 1px solid #eee; padding: 4px 0; font-size: 13px; }
.ff-dataset pre { font-size: 11px; background: #f6f6fa; padding: 6px; overflow: auto; }
.ff-deploy dt { font-size: 11px; color: #777; text-transform: uppercase; }
.ff-deploy dd { margin: 0 0 6px 0; }
.ff-doc pre { font-size: 11px; background: #f6f6fa; padding: 6px; max-height: 220px; overflow: auto; }
.ff-toasts { position: fixed; right: 12px; bottom: 12px; display: flex; flex-direction: column; gap: 6px; }
.ff-toast { background: #8f1d1d; color: #fff; padding: 8px 12px; border-radius: 6px; font-size: 13px; }
.ff-empty { color: #999; font-size: 12px; }
`;

export interface ConsoleHandlers {
  onSend(text: string): void;
  onApprove(approvalId: string, approved: boolean): void;
  onUpload(name: string, content: string): void;
}

export interface ConsoleRefs {
  root: HTMLElement;
  handlers: ConsoleHandlers;
  badge: HTMLElement;
  sessionLabel: HTMLElement;
  chatList: HTMLElement;
  chatInput: HTMLInputElement;
  sendButton: HTMLButtonElement;
  inputNote: HTMLElement;
  uploadInput: HTMLInputElement;
  planBody: HTMLElement;
  revisions: HTMLElement;
  lanes: HTMLElement;
  approvalsRoot: HTMLElement;
  datasetsRoot: HTMLElement;
  deployRoot: HTMLElement;
  toastRoot: HTMLElement;
}

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function clip(text: string, max = 110): string {
  return text.length > max ? `${text.slice(0, max - 3)}...` : text;
}

export function mountConsole(root: HTMLElement, handlers: ConsoleHandlers): ConsoleRefs {
  const style = root.ownerDocument.createElement("style");
  style.textContent = CSS;
  root.appendChild(style);

  const shell = root.ownerDocument.createElement("div");
  shell.className = "ff-root";
  shell.innerHTML = `
    <header class="ff-header">
      <span class="ff-title">forgeflow console</span>
      <span class="ff-session"></span>
      <span class="ff-badge ff-badge-open">open</span>
    </header>
    <div class="ff-columns">
      <div class="ff-col-main">
        <section class="ff-panel ff-chat">
          <h2>Conversation</h2>
          <ol class="ff-chat-list"></ol>
          <form class="ff-chat-form">
            <input type="text" name="message" placeholder="message the task agent" autocomplete="off">
            <button type="submit">Send</button>
          </form>
          <div class="ff-input-note"></div>
        </section>
        <section class="ff-panel ff-plan">
          <h2>Plan</h2>
          <table class="ff-plan-table">
            <thead><tr><th>step</th><th>owner</th><th>action</th><th>state</th></tr></thead>
            <tbody></tbody>
          </table>
          <ol class="ff-revisions"></ol>
        </section>
        <section class="ff-panel ff-timeline">
          <h2>Agent timeline</h2>
          <div class="ff-lanes"></div>
        </section>
      </div>
      <div class="ff-col-side">
        <section class="ff-panel ff-approvals">
          <h2>Approvals</h2>
          <div class="ff-approvals-list"></div>
        </section>
        <section class="ff-panel ff-datasets">
          <h2>Datasets</h2>
          <div class="ff-datasets-list"></div>
          <input type="file" class="ff-upload" accept=".jsonl,.json,.txt">
        </section>
        <section class="ff-panel ff-deploy">
          <h2>Deployment</h2>
          <div class="ff-deploy-body"></div>
        </section>
      </div>
    </div>
    <div class="ff-toasts"></div>
  `;
  root.appendChild(shell);

  const pick = <T extends HTMLElement>(selector: string): T => {
    const el = shell.querySelector(selector);
    if (el === null) throw new Error(`console shell lacks ${selector}`);
    return el as T;
  };

  const refs: ConsoleRefs = {
    root: shell,
    handlers,
    badge: pick(".ff-badge"),
    sessionLabel: pick(".ff-session"),
    chatList: pick(".ff-chat-list"),
    chatInput: pick<HTMLInputElement>(".ff-chat-form input"),
    sendButton: pick<HTMLButtonElement>(".ff-chat-form button"),
    inputNote: pick(".ff-input-note"),
    uploadInput: pick<HTMLInputElement>(".ff-upload"),
    planBody: pick(".ff-plan-table tbody"),
    revisions: pick(".ff-revisions"),
    lanes: pick(".ff-lanes"),
    approvalsRoot: pick(".ff-approvals-list"),
    datasetsRoot: pick(".ff-datasets-list"),
    deployRoot: pick(".ff-deploy-body"),
    toastRoot: pick(".ff-toasts"),
  };

  pick<HTMLFormElement>(".ff-chat-form").addEventListener("submit", (ev) => {
    ev.preventDefault();
    const text = refs.chatInput.value.trim();
    if (text === "" || refs.chatInput.disabled) return;
    refs.handlers.onSend(text);
  });
  refs.uploadInput.addEventListener("change", () => {
    const file = refs.uploadInput.files?.[0];
    if (file === undefined) return;
    void file.text().then((content) => {
      refs.handlers.onUpload(file.name, content);
      refs.uploadInput.value = "";
    });
  });

  return refs;
}

function approvalHtml(approval: ApprovalView): string {
  const status = approval.resolved
    ? `<span data-seq="${approval.resolvedSeq}">${approval.approved ? "approved" : "rejected"}</span>`
    : `<button type="button" data-approve="yes">Approve</button>
       <button type="button" data-approve="no">Reject</button>`;
  return `
    <div class="ff-approval ${approval.resolved ? "ff-approval-resolved" : ""}"
         data-seq="${approval.seq}" data-approval-id="${escapeHtml(approval.approvalId)}">
      <div><strong>${escapeHtml(approval.approvalId)}</strong>
        <span class="ff-chat-kind">${escapeHtml(approval.context)}</span></div>
      <div>${escapeHtml(approval.ask)}</div>
      <div>${status}</div>
    </div>
  `;
}

export function renderBoard(refs: ConsoleRefs, vm: ViewModel): void {
  const outcome = vm.terminal?.outcome;
  refs.badge.textContent = outcome ?? "open";
  refs.badge.className = `ff-badge ff-badge-${outcome ?? "open"}`;
  if (vm.terminal !== null) refs.badge.setAttribute("data-seq", String(vm.terminal.seq));
  else refs.badge.removeAttribute("data-seq");

  refs.chatList.innerHTML = vm.chat
    .map(
      (entry) => `
      <li data-seq="${entry.seq}" class="ff-from-${entry.from}">
        <span class="ff-chat-from">${entry.from}</span>${escapeHtml(entry.text)}
        <span class="ff-chat-kind">${escapeHtml(entry.kind)}</span>
      </li>`,
    )
    .join("");

  const closed = vm.terminal !== null;
  refs.chatInput.disabled = closed;
  refs.sendButton.disabled = closed;
  if (closed) {
    refs.inputNote.textContent = `session ${outcome}: input closed`;
    refs.inputNote.setAttribute("data-seq", String(vm.terminal!.seq));
  } else if (vm.pendingUpload !== null) {
    refs.inputNote.textContent = vm.pendingUpload.text;
    refs.inputNote.setAttribute("data-seq", String(vm.pendingUpload.seq));
  } else {
    refs.inputNote.textContent = "";
    refs.inputNote.removeAttribute("data-seq");
  }
  refs.uploadInput.disabled = closed;

  refs.planBody.innerHTML = vm.planSteps
    .map(
      (step) => `
      <tr data-seq="${step.seq}">
        <td>${escapeHtml(step.stepId)}</td>
        <td>${step.owner}</td>
        <td>${escapeHtml(step.action)}</td>
        <td><span class="ff-state ff-state-${step.state}">${step.state}</span></td>
      </tr>`,
    )
    .join("");
  refs.revisions.innerHTML = vm.planRevisions
    .map((rev) => {
      const delta = [
        rev.added.length > 0 ? `+${rev.added.join(", +")}` : "",
        rev.removed.length > 0 ? `-${rev.removed.join(", -")}` : "",
      ]
        .filter((part) => part !== "")
        .join(" ");
      return `<li data-seq="${rev.seq}">revision ${rev.revision}: ${rev.stepIds.length} steps${
        delta === "" ? "" : ` (${escapeHtml(delta)})`
      }</li>`;
    })
    .join("");

  refs.lanes.innerHTML = AGENT_IDS.map((agent) => {
    const rows = vm.timeline
      .filter((entry) => entry.agent === agent)
      .map(
        (entry) => `
        <li id="ev-${entry.seq}" data-seq="${entry.seq}" class="ff-ev ff-ev-${entry.kind}">
          <a href="#ev-${entry.seq}">${entry.seq}</a>${escapeHtml(clip(entry.label))}
        </li>`,
      )
      .join("");
    return `
      <section class="ff-lane" data-agent="${agent}">
        <h3>${agent}</h3>
        <ol>${rows === "" ? '<li class="ff-empty">quiet</li>' : rows}</ol>
      </section>`;
  }).join("");

  const pending = pendingApprovals(vm);
  refs.approvalsRoot.innerHTML =
    vm.approvals.length === 0
      ? '<div class="ff-empty">no approvals requested</div>'
      : vm.approvals.map(approvalHtml).join("");
  for (const card of refs.approvalsRoot.querySelectorAll<HTMLElement>("[data-approval-id]")) {
    const approvalId = card.dataset.approvalId ?? "";
    if (!pending.some((a) => a.approvalId === approvalId)) continue;
    for (const button of card.querySelectorAll<HTMLButtonElement>("button[data-approve]")) {
      button.addEventListener("click", () => {
        refs.handlers.onApprove(approvalId, button.dataset.approve === "yes");
      });
    }
  }

  refs.datasetsRoot.innerHTML =
    vm.datasets.length === 0
      ? '<div class="ff-empty">no datasets yet</div>'
      : vm.datasets
          .map((ds) => {
            const facts: string[] = [`${ds.count} records`];
            if (ds.labeled !== undefined) facts.push(`${ds.labeled} labeled`);
            if (ds.trustedLabeled !== undefined) facts.push(`${ds.trustedLabeled} trusted`);
            if (ds.collected !== undefined && ds.collected > 0) facts.push(`${ds.collected} collected`);
            if (ds.correctedIndices !== undefined && ds.correctedIndices.length > 0) {
              facts.push(`corrected at ${ds.correctedIndices.join(", ")}`);
            }
            const summary =
              ds.summary === undefined ? "" : `<pre>${escapeHtml(ds.summary)}</pre>`;
            return `
              <div class="ff-dataset" data-seq="${ds.seq}">
                <strong>${escapeHtml(ds.datasetId)}</strong>
                <span class="ff-dataset-count"> ${escapeHtml(facts.join(", "))}</span>
                ${summary}
              </div>`;
          })
          .join("");

  const deployParts: string[] = [];
  if (vm.deployment.capacity !== null) {
    const cap = vm.deployment.capacity;
    deployParts.push(`
      <dl class="ff-deploy" data-seq="${cap.seq}">
        <dt>capacity</dt>
        <dd class="ff-containers">${cap.containers} containers for ${cap.qpsTarget} qps
            at ${cap.perContainerQps} qps each${cap.fitsMemory ? "" : " (memory too small)"}</dd>
      </dl>`);
  }
  if (vm.deployment.statuses.length > 0) {
    deployParts.push(
      `<ol class="ff-deploy-statuses">${vm.deployment.statuses
        .map(
          (st) =>
            `<li data-seq="${st.seq}">${escapeHtml(st.status)} at ${escapeHtml(st.endpoint)}</li>`,
        )
        .join("")}</ol>`,
    );
  }
  if (vm.deployment.monitor !== null) {
    const mon = vm.deployment.monitor;
    deployParts.push(
      `<div data-seq="${mon.seq}">observed ${mon.qpsObserved} qps, error rate ${mon.errorRate}</div>`,
    );
  }
  if (vm.deployment.interfaceDoc !== null) {
    const doc = vm.deployment.interfaceDoc;
    deployParts.push(`
      <details class="ff-doc" data-seq="${doc.seq}">
        <summary>interface doc</summary>
        <pre>${escapeHtml(doc.text)}</pre>
      </details>`);
  }
  if (vm.refusal !== null) {
    deployParts.push(
      `<div data-seq="${vm.refusal.seq}">refused${
        vm.refusal.ruleId === null ? "" : ` by ${escapeHtml(vm.refusal.ruleId)}`
      }: ${escapeHtml(vm.refusal.reason)}</div>`,
    );
  }
  refs.deployRoot.innerHTML =
    deployParts.length > 0 ? deployParts.join("") : '<div class="ff-empty">not deployed</div>';
}

export function showToast(refs: ConsoleRefs, text: string): void {
  const toast = refs.root.ownerDocument.createElement("div");
  toast.className = "ff-toast";
  toast.textContent = text;
  refs.toastRoot.appendChild(toast);
  while (refs.toastRoot.children.length > 4) {
    refs.toastRoot.removeChild(refs.toastRoot.children[0]!);
  }
}
