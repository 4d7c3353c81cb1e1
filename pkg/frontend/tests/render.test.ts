// @vitest-environment happy-dom
import { beforeEach, describe, expect, it, vi } from "vitest";

import { projectLog } from "../src/projection.js";
import { mountConsole, renderBoard, showToast, type ConsoleRefs } from "../src/render.js";
import { loadFixtureLog } from "./helpers.js";

const LOG = loadFixtureLog("textcls.events.jsonl");
const VQA = loadFixtureLog("infeasible-vqa.events.jsonl");

describe("console rendering", () => {
  let refs: ConsoleRefs;
  const handlers = {
    onSend: vi.fn(),
    onApprove: vi.fn(),
    onUpload: vi.fn(),
  };

  beforeEach(() => {
    document.body.innerHTML = "";
    handlers.onSend.mockClear();
    handlers.onApprove.mockClear();
    handlers.onUpload.mockClear();
    refs = mountConsole(document.body, handlers);
  });

  it("renders the finished run onto the board", () => {
    renderBoard(refs, projectLog(LOG));

    expect(refs.badge.textContent).toBe("completed");
    expect(refs.badge.className).toContain("ff-badge-completed");

    const chat = refs.chatList.querySelectorAll("li");
    expect(chat.length).toBe(3);
    expect([...chat].map((li) => li.getAttribute("data-seq"))).toEqual(["0", "8", "42"]);

    const rows = refs.planBody.querySelectorAll("tr");
    expect(rows.length).toBe(8);
    for (const row of rows) {
      expect(row.querySelector(".ff-state-done")).not.toBeNull();
    }

    expect(refs.datasetsRoot.textContent).toContain("1100 records");
    expect(refs.deployRoot.querySelector(".ff-containers")?.textContent).toContain(
      "8 containers for 100 qps",
    );
    expect(refs.deployRoot.textContent).toContain("observed 100 qps");
    expect(refs.deployRoot.querySelector(".ff-doc pre")?.textContent).toContain(
      "albert-tiny service",
    );
  });

  it("ties every dynamic element back to one event", () => {
    renderBoard(refs, projectLog(LOG));

    const seqs = new Set(LOG.map((e) => e.seq));
    for (const el of refs.root.querySelectorAll("[data-seq]")) {
      const seq = Number(el.getAttribute("data-seq"));
      expect(Number.isInteger(seq)).toBe(true);
      expect(seqs.has(seq)).toBe(true);
    }

    const ids = [...refs.lanes.querySelectorAll("li[id]")].map((li) => li.id);
    expect(ids.length).toBe(LOG.length); // one timeline row per event
    expect(new Set(ids).size).toBe(ids.length);
    for (const li of refs.lanes.querySelectorAll("li[id]")) {
      expect(li.id).toBe(`ev-${li.getAttribute("data-seq")}`);
      expect(li.querySelector("a")?.getAttribute("href")).toBe(`#${li.id}`);
    }
  });

  it("is idempotent: rendering the same view model twice changes nothing", () => {
    const vm = projectLog(LOG);
    renderBoard(refs, vm);
    const first = refs.root.innerHTML;
    renderBoard(refs, vm);
    expect(refs.root.innerHTML).toBe(first);
  });

  it("shows the upload prompt and the stalled step mid-run", () => {
    renderBoard(refs, projectLog(LOG.slice(0, 9)));

    expect(refs.badge.textContent).toBe("open");
    expect(refs.chatInput.disabled).toBe(false);
    expect(refs.inputNote.textContent).toContain("100");
    const states = [...refs.planBody.querySelectorAll(".ff-state")].map((el) => el.textContent);
    expect(states).toContain("insufficient");
    expect(refs.datasetsRoot.textContent).toContain("no datasets yet");
  });

  it("closes the inputs once the session is terminal", () => {
    renderBoard(refs, projectLog(LOG));

    expect(refs.chatInput.disabled).toBe(true);
    expect(refs.sendButton.disabled).toBe(true);
    expect(refs.uploadInput.disabled).toBe(true);
    expect(refs.inputNote.textContent).toBe("session completed: input closed");

    refs.chatInput.value = "hello?";
    refs.root
      .querySelector(".ff-chat-form")!
      .dispatchEvent(new Event("submit", { cancelable: true }));
    expect(handlers.onSend).not.toHaveBeenCalled();
  });

  it("submits typed chat while the session is open", () => {
    renderBoard(refs, projectLog(LOG.slice(0, 9)));

    refs.chatInput.value = "  train a classifier  ";
    refs.root
      .querySelector(".ff-chat-form")!
      .dispatchEvent(new Event("submit", { cancelable: true }));
    expect(handlers.onSend).toHaveBeenCalledWith("train a classifier");
  });

  it("wires approve and reject buttons only while the approval is pending", () => {
    renderBoard(refs, projectLog(VQA.slice(0, 5)));

    const card = refs.approvalsRoot.querySelector<HTMLElement>("[data-approval-id]");
    expect(card?.dataset.approvalId).toBe("apr-1");
    expect(card?.textContent).toContain("manually annotate data");

    const buttons = card!.querySelectorAll<HTMLButtonElement>("button[data-approve]");
    expect(buttons.length).toBe(2);
    buttons[0]!.click();
    expect(handlers.onApprove).toHaveBeenCalledWith("apr-1", true);
    buttons[1]!.click();
    expect(handlers.onApprove).toHaveBeenCalledWith("apr-1", false);

    renderBoard(refs, projectLog(VQA));
    const resolved = refs.approvalsRoot.querySelector<HTMLElement>("[data-approval-id]");
    expect(resolved?.querySelectorAll("button").length).toBe(0);
    expect(resolved?.textContent).toContain("rejected");
    expect(refs.badge.textContent).toBe("cannot_fulfill");
  });

  it("keeps at most four toasts", () => {
    for (let i = 0; i < 6; i += 1) showToast(refs, `warning ${i}`);
    expect(refs.toastRoot.children.length).toBe(4);
    expect(refs.toastRoot.children[0]!.textContent).toBe("warning 2");
  });
});
