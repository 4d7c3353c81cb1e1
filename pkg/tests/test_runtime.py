"""Context budgeting, SOP checks, plan revisions, memory chain, dispatch."""

from __future__ import annotations

import json
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from forgeflow.protocol import AgentId, Envelope, EnvelopeKind, RoutingViolation
from forgeflow.runtime import (
    BudgetTooSmall,
    ChainTampered,
    Directive,
    Dispatcher,
    KernelError,
    LivenessError,
    MemoryLog,
    Plan,
    PlanInvariantViolation,
    PlanStep,
    ReplanBudgetExhausted,
    SopGraph,
    SopViolation,
    StepStatus,
    UnknownStage,
    build_context,
    load_sop,
    revise_plan,
    sop_check,
    token_cost,
)


class TestContextWindow:
    def test_token_cost_rounds_up(self) -> None:
        assert token_cost("") == 0
        assert token_cost("abcd") == 1
        assert token_cost("abcde") == 2

    def test_system_and_incoming_always_survive(self) -> None:
        context = build_context("sys", "in", ["m1", "m2"], budget=2)
        assert context == ["sys", "in"]

    def test_budget_too_small(self) -> None:
        with pytest.raises(BudgetTooSmall):
            build_context("x" * 40, "y" * 40, [], budget=19)

    def test_newest_memories_kept_first(self) -> None:
        memory = ["old " * 2, "mid " * 2, "new " * 2]  # 2 tokens each
        context = build_context("s", "i", memory, budget=2 + 4)
        assert context == ["s", "mid " * 2, "new " * 2, "i"]

    def test_greedy_skips_oversized_but_continues(self) -> None:
        memory = ["tiny", "x" * 400, "also"]
        context = build_context("s", "i", memory, budget=2 + 3)
        assert context == ["s", "tiny", "also", "i"]

    def test_chronological_order_preserved(self) -> None:
        memory = [f"entry {i}" for i in range(10)]
        context = build_context("s", "i", memory, budget=1000)
        assert context == ["s", *memory, "i"]

    @given(st.lists(st.text(max_size=30), max_size=12), st.integers(min_value=4, max_value=60))
    def test_budget_respected(self, memory: list[str], budget: int) -> None:
        context = build_context("syst", "inco", memory, budget=budget)
        assert sum(token_cost(t) for t in context) <= budget
        assert context[0] == "syst" and context[-1] == "inco"


class TestMemoryLog:
    def test_chain_verifies(self) -> None:
        log = MemoryLog()
        log.append(0, AgentId.TASK, "parsed requirement")
        log.append(1, AgentId.DATA, "dataset ready")
        log.verify()
        assert log.texts() == ["parsed requirement", "dataset ready"]

    def test_tamper_detected(self) -> None:
        log = MemoryLog()
        log.append(0, AgentId.TASK, "original")
        log.append(1, AgentId.TASK, "second")
        entry = log._entries[0]
        log._entries[0] = type(entry)(entry.tick, entry.author, "forged", entry.chain_hash)
        with pytest.raises(ChainTampered):
            log.verify()

    def test_deterministic_hashes(self) -> None:
        first, second = MemoryLog(), MemoryLog()
        for log in (first, second):
            log.append(3, AgentId.MODEL, "trained")
        assert first.entries()[0].chain_hash == second.entries()[0].chain_hash

    def test_hash_depends_on_predecessor(self) -> None:
        log = MemoryLog()
        a = log.append(0, AgentId.TASK, "x")
        b = log.append(0, AgentId.TASK, "x")
        assert a.chain_hash != b.chain_hash


SOP_DOC = {
    "name": "model-dev",
    "stages": ["idle", "prepare", "train", "evaluate", "deploy", "done"],
    "edges": [
        ["idle", "prepare"],
        ["prepare", "train"],
        ["train", "evaluate"],
        ["evaluate", "train"],
        ["evaluate", "deploy"],
        ["deploy", "done"],
    ],
    "start": "idle",
    "terminals": ["done"],
}


class TestSop:
    def graph(self) -> SopGraph:
        return SopGraph(
            name=SOP_DOC["name"],
            stages=frozenset(SOP_DOC["stages"]),
            edges=frozenset(tuple(e) for e in SOP_DOC["edges"]),
            start="idle",
            terminals=frozenset(["done"]),
        )

    def test_load_from_file(self, tmp_path: Path) -> None:
        path = tmp_path / "sop.json"
        path.write_text(json.dumps(SOP_DOC), encoding="utf-8")
        graph = load_sop(path)
        assert graph.start == "idle"
        assert ("train", "evaluate") in graph.edges

    def test_declared_edge_ok(self) -> None:
        sop_check(self.graph(), "prepare", "train")

    def test_reflexive_always_ok(self) -> None:
        sop_check(self.graph(), "train", "train")

    def test_undeclared_edge_rejected(self) -> None:
        with pytest.raises(SopViolation):
            sop_check(self.graph(), "prepare", "deploy")

    def test_backward_edge_must_be_declared(self) -> None:
        sop_check(self.graph(), "evaluate", "train")  # declared retry loop
        with pytest.raises(SopViolation):
            sop_check(self.graph(), "deploy", "train")

    def test_unknown_stage(self) -> None:
        with pytest.raises(UnknownStage):
            sop_check(self.graph(), "prepare", "ship")

    def test_graph_validation(self) -> None:
        with pytest.raises(KernelError):
            SopGraph("bad", frozenset({"a"}), frozenset(), "missing", frozenset())


def step(step_id: str, owner: AgentId = AgentId.DATA, status: StepStatus = StepStatus.PENDING) -> PlanStep:
    return PlanStep(step_id=step_id, owner=owner, action="work", params={}, status=status)


class TestPlan:
    def test_unique_ids_enforced(self) -> None:
        with pytest.raises(PlanInvariantViolation):
            Plan((step("s1"), step("s1")))

    def test_owner_must_be_spoke(self) -> None:
        with pytest.raises(PlanInvariantViolation):
            Plan((PlanStep("s1", AgentId.TASK, "plan", {}),))
        with pytest.raises(PlanInvariantViolation):
            Plan((PlanStep("s1", AgentId.USER, "ask", {}),))

    def test_status_walk(self) -> None:
        plan = Plan((step("s1"), step("s2")))
        assert plan.next_pending().step_id == "s1"
        plan = plan.with_status("s1", StepStatus.DONE)
        assert plan.next_pending().step_id == "s2"
        plan = plan.with_status("s2", StepStatus.DONE)
        assert plan.next_pending() is None
        assert plan.finished()


class TestRevisePlan:
    def test_revision_increments(self) -> None:
        plan = Plan((step("s1"),))
        revised = revise_plan(plan, [step("s1"), step("s2")])
        assert revised.revision == 1
        assert len(revised.steps) == 2

    def test_done_steps_are_immutable_history(self) -> None:
        plan = Plan((step("s1", status=StepStatus.DONE), step("s2")))
        kept = step("s1", status=StepStatus.DONE)
        revise_plan(plan, [kept, step("s3")])  # identical done step: fine
        with pytest.raises(PlanInvariantViolation):
            revise_plan(plan, [step("s3")])  # dropped
        altered = PlanStep("s1", AgentId.DATA, "work", {"changed": True}, StepStatus.DONE)
        with pytest.raises(PlanInvariantViolation):
            revise_plan(plan, [altered, step("s3")])  # rewritten

    def test_failed_steps_may_be_replaced(self) -> None:
        plan = Plan((step("s1", status=StepStatus.FAILED),))
        revised = revise_plan(plan, [step("s1-retry")])
        assert revised.steps[0].step_id == "s1-retry"

    def test_cap_exhaustion(self) -> None:
        plan = Plan((step("s1"),))
        for _ in range(3):
            plan = revise_plan(plan, list(plan.steps), replan_cap=3)
        assert plan.revision == 3
        with pytest.raises(ReplanBudgetExhausted):
            revise_plan(plan, list(plan.steps), replan_cap=3)


def envelope(
    sender: AgentId,
    recipient: AgentId,
    kind: EnvelopeKind = EnvelopeKind.STATUS,
    marker: str = "",
) -> Envelope:
    return Envelope(
        id=f"env-{marker or sender.value}",
        session="s1",
        sender=sender,
        recipient=recipient,
        kind=kind,
        payload={"marker": marker},
        causality=None,
    )


class TestDispatcher:
    def collector(self, log: list[str], name: str):
        def handler(item):
            if isinstance(item, Directive):
                log.append(f"{name}:directive:{item.name}")
            else:
                log.append(f"{name}:{item.payload['marker']}")
            return []

        return handler

    def test_due_order_then_send_order(self) -> None:
        log: list[str] = []
        latencies = {AgentId.DATA: 5, AgentId.MODEL: 1, AgentId.SERVER: 1}
        dispatcher = Dispatcher(latency=lambda s, r: latencies[r])
        dispatcher.register(AgentId.DATA, self.collector(log, "data"))
        dispatcher.register(AgentId.MODEL, self.collector(log, "model"))
        dispatcher.register(AgentId.SERVER, self.collector(log, "server"))
        dispatcher.send(envelope(AgentId.TASK, AgentId.DATA, EnvelopeKind.INSTRUCTION, "a"))
        dispatcher.send(envelope(AgentId.TASK, AgentId.MODEL, EnvelopeKind.INSTRUCTION, "b"))
        dispatcher.send(envelope(AgentId.TASK, AgentId.SERVER, EnvelopeKind.INSTRUCTION, "c"))
        dispatcher.run()
        assert log == ["model:b", "server:c", "data:a"]
        assert dispatcher.clock == 5
        assert dispatcher.deliveries == 3

    def test_illegal_edge_rejected_at_send(self) -> None:
        dispatcher = Dispatcher()
        with pytest.raises(RoutingViolation):
            dispatcher.send(envelope(AgentId.DATA, AgentId.MODEL, EnvelopeKind.STATUS, "x"))

    def test_directives_bypass_routing(self) -> None:
        log: list[str] = []
        dispatcher = Dispatcher()
        dispatcher.register(AgentId.TASK, self.collector(log, "task"))
        dispatcher.send_directive(Directive(name="finalize", target=AgentId.TASK))
        dispatcher.run()
        assert log == ["task:directive:finalize"]

    def test_handler_outputs_are_scheduled(self) -> None:
        log: list[str] = []

        def task_handler(item):
            log.append("task")
            return [envelope(AgentId.TASK, AgentId.DATA, EnvelopeKind.INSTRUCTION, "go")]

        dispatcher = Dispatcher()
        dispatcher.register(AgentId.TASK, task_handler)
        dispatcher.register(AgentId.DATA, self.collector(log, "data"))
        dispatcher.send(envelope(AgentId.USER, AgentId.TASK, EnvelopeKind.REQUIREMENT, "req"))
        dispatcher.run()
        assert log == ["task", "data:go"]
        assert dispatcher.clock == 2  # one tick per hop

    def test_budget_exhaustion_is_loud(self) -> None:
        def ping(item):
            return [envelope(AgentId.TASK, AgentId.DATA, EnvelopeKind.INSTRUCTION, "p")]

        def pong(item):
            return [envelope(AgentId.DATA, AgentId.TASK, EnvelopeKind.STEP_RESULT, "q")]

        dispatcher = Dispatcher(budget=50)
        dispatcher.register(AgentId.TASK, ping)
        dispatcher.register(AgentId.DATA, pong)
        dispatcher.send(envelope(AgentId.USER, AgentId.TASK, EnvelopeKind.REQUIREMENT, "r"))
        with pytest.raises(LivenessError):
            dispatcher.run()

    def test_clock_never_goes_backwards(self) -> None:
        ticks: list[int] = []
        dispatcher = Dispatcher(latency=lambda s, r: 3 if r is AgentId.DATA else 1)
        dispatcher.on_deliver = lambda tick, item: ticks.append(tick)
        dispatcher.register(AgentId.DATA, lambda item: [])
        dispatcher.register(AgentId.MODEL, lambda item: [])
        dispatcher.send(envelope(AgentId.TASK, AgentId.DATA, EnvelopeKind.INSTRUCTION, "a"))
        dispatcher.send(envelope(AgentId.TASK, AgentId.MODEL, EnvelopeKind.INSTRUCTION, "b"))
        dispatcher.run()
        assert ticks == sorted(ticks)

    def test_same_inputs_same_delivery_sequence(self) -> None:
        def run_once() -> list[str]:
            log: list[str] = []
            dispatcher = Dispatcher()
            dispatcher.register(AgentId.DATA, self.collector(log, "data"))
            dispatcher.register(AgentId.MODEL, self.collector(log, "model"))
            for i in range(10):
                recipient = AgentId.DATA if i % 3 else AgentId.MODEL
                dispatcher.send(
                    envelope(AgentId.TASK, recipient, EnvelopeKind.INSTRUCTION, str(i))
                )
            dispatcher.run()
            return log

        assert run_once() == run_once()

    def test_duplicate_handler_registration(self) -> None:
        dispatcher = Dispatcher()
        dispatcher.register(AgentId.TASK, lambda item: [])
        with pytest.raises(KernelError):
            dispatcher.register(AgentId.TASK, lambda item: [])
