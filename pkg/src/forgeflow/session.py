"""Session engine: one model-development conversation, end to end.

A session owns the dispatcher, the event log, the shared memory chain,
the working dataset, trained artifacts, and the four agent runtimes.
All user-facing behavior goes through the session API (start a
requirement, post a message, upload a dataset, resolve an approval);
everything in between is deterministic dispatch.

Event conventions: `message` events carry a `type` discriminator in the
body (chat, tool_invocation, gateway_call, dataset_upload); chat events
are logged when the sender speaks, not when the envelope lands, so the
terminal event is always the last thing in the log.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .agents import data as data_agent
from .agents import model as model_agent
from .agents import server as server_agent
from .agents import task as task_agent
from .agents.data import Dataset, KnowledgeBaseEntry, SearchFallback, SufficiencyPolicy
from .agents.model import EscalationState, ModelCard, TrainingJob, TrainingMode
from .agents.server import ConversionGraph, DeploymentRecord
from .agents.task import PolicyRule
from .gateway import Backend, LoggedBackend
from .protocol import (
    AgentId,
    Envelope,
    Event,
    EventKind,
    EnvelopeKind,
    TaskSpec,
    canonical_encode,
)
from .runtime import (
    Directive,
    Dispatcher,
    LatencyFn,
    MemoryLog,
    Plan,
    PlanStep,
    Profile,
    ReplanBudgetExhausted,
    SopGraph,
    StepStatus,
    revise_plan,
    sop_check,
)
from .toolbox import FaultingRegistry, ToolKind, ToolRegistry

Registry = ToolRegistry | FaultingRegistry


class SessionError(Exception):
    pass


class InvalidSessionState(SessionError):
    pass


class UnknownApproval(SessionError):
    pass


class SessionState(str, enum.Enum):
    OPEN = "open"
    RUNNING = "running"
    AWAITING_USER = "awaiting_user"
    COMPLETED = "completed"
    REFUSED = "refused"
    CANNOT_FULFILL = "cannot_fulfill"


TERMINAL_OUTCOMES = frozenset({"completed", "refused", "cannot_fulfill"})

_OUTCOME_STATES = {
    "completed": SessionState.COMPLETED,
    "refused": SessionState.REFUSED,
    "cannot_fulfill": SessionState.CANNOT_FULFILL,
}


class EventLog:
    """Dense-sequence, single-terminal event history."""

    def __init__(self) -> None:
        self._events: list[Event] = []
        self._sealed = False

    @property
    def sealed(self) -> bool:
        return self._sealed

    def emit(self, timestamp: int, kind: EventKind, body: dict[str, Any]) -> Event:
        if self._sealed:
            raise SessionError("event log is sealed: terminal already emitted")
        event = Event(seq=len(self._events), timestamp=timestamp, kind=kind, body=body)
        self._events.append(event)
        if kind is EventKind.TERMINAL:
            self._sealed = True
        return event

    def events(self, from_seq: int = 0) -> list[Event]:
        return self._events[from_seq:]

    def of_kind(self, kind: EventKind) -> list[Event]:
        return [e for e in self._events if e.kind is kind]

    def __len__(self) -> int:
        return len(self._events)

    def to_jsonl(self) -> bytes:
        return b"".join(canonical_encode(e.to_doc()) + b"\n" for e in self._events)


@dataclass
class Approval:
    approval_id: str
    ask: str
    context: str
    resolved: bool = False
    approved: bool | None = None


@dataclass
class SessionConfig:
    session_id: str
    backend: Backend
    registry: Registry
    model_cards: Sequence[ModelCard]
    conversion_graph: ConversionGraph
    sufficiency: dict[str, SufficiencyPolicy]
    policy_rules: Sequence[PolicyRule]
    kb: Sequence[KnowledgeBaseEntry]
    data_root: Path = Path(".")
    collect_n: int = 0
    augment_factor: int = 1
    test_size: int = 50
    retune_budget: int = 2
    replan_cap: int = 3
    latency: LatencyFn | None = None
    dispatch_budget: int = 10_000
    trainer_tool: str | None = None
    benchmark_tool: str | None = None
    platform_tool: str | None = None
    sops: dict[str, SopGraph] = field(default_factory=dict)
    profiles: Sequence[Profile] = ()


def _first_of_kind(registry: Registry, kind: ToolKind, override: str | None) -> str | None:
    if override is not None:
        return override
    tools = registry.by_kind(kind)
    return tools[0] if tools else None


class Session:
    def __init__(self, config: SessionConfig) -> None:
        self.config = config
        self.id = config.session_id
        self.events = EventLog()
        self.memory = MemoryLog()
        self.dispatcher = Dispatcher(latency=config.latency, budget=config.dispatch_budget)
        self.backend: Backend = LoggedBackend(config.backend, self._on_gateway_call)
        config.registry.on_invoke = self._on_tool_invoke
        self.registry = config.registry
        self.dataset: Dataset | None = None
        self.artifacts: dict[str, dict[str, Any]] = {}
        self.artifact_order: list[str] = []
        self.deployment: DeploymentRecord | None = None
        self.estimate: server_agent.ResourceEstimate | None = None
        self.approvals: dict[str, Approval] = {}
        self.state = SessionState.OPEN
        self._counters = {"env": 0, "apr": 0, "artifact": 0}
        for profile in config.profiles:
            self.memory.append(0, profile.agent, f"profile: {profile.text}")

        self.task = TaskRuntime(self)
        self.data = DataRuntime(self)
        self.model = ModelRuntime(self)
        self.server = ServerRuntime(self)
        self.dispatcher.register(AgentId.TASK, self.task.handle)
        self.dispatcher.register(AgentId.DATA, self.data.handle)
        self.dispatcher.register(AgentId.MODEL, self.model.handle)
        self.dispatcher.register(AgentId.SERVER, self.server.handle)
        self.dispatcher.register(AgentId.USER, lambda item: [])  # chat logged at send

    # ------------------------------------------------------------- plumbing

    def _next(self, counter: str, prefix: str) -> str:
        self._counters[counter] += 1
        return f"{prefix}-{self._counters[counter]}"

    def emit(self, kind: EventKind, body: dict[str, Any]) -> Event:
        return self.events.emit(self.dispatcher.clock, kind, body)

    def _on_gateway_call(self, tag: str, request_digest: str, reply_digest: str) -> None:
        self.emit(
            EventKind.MESSAGE,
            {
                "type": "gateway_call",
                "tag": tag,
                "request_digest": request_digest,
                "reply_digest": reply_digest,
            },
        )

    def _on_tool_invoke(self, tool_id: str, payload_digest: str, status: str) -> None:
        self.emit(
            EventKind.MESSAGE,
            {
                "type": "tool_invocation",
                "tool_id": tool_id,
                "payload_digest": payload_digest,
                "status": status,
            },
        )

    def send(
        self,
        sender: AgentId,
        recipient: AgentId,
        kind: EnvelopeKind,
        payload: dict[str, Any],
        causality: int | None = None,
    ) -> Envelope:
        self._counters["env"] += 1
        env = Envelope(
            id=self._counters["env"],
            session=self.id,
            sender=sender,
            recipient=recipient,
            kind=kind,
            payload=payload,
            causality=causality,
        )
        if AgentId.USER in (sender, recipient):
            self.emit(
                EventKind.MESSAGE,
                {
                    "type": "chat",
                    "envelope_id": env.id,
                    "from": sender.value,
                    "to": recipient.value,
                    "kind": kind.value,
                    "payload": payload,
                },
            )
        self.dispatcher.send(env)
        return env

    def store_artifact(self, artifact: dict[str, Any]) -> str:
        ref = self._next("artifact", "artifact")
        self.artifacts[ref] = artifact
        self.artifact_order.append(ref)
        return ref

    def latest_artifact(self) -> tuple[str, dict[str, Any]]:
        if not self.artifact_order:
            raise SessionError("no artifact trained yet")
        ref = self.artifact_order[-1]
        return ref, self.artifacts[ref]

    def new_approval(self, ask: str, context: str) -> Approval:
        approval = Approval(self._next("apr", "apr"), ask, context)
        self.approvals[approval.approval_id] = approval
        self.emit(
            EventKind.APPROVAL_REQUESTED,
            {"approval_id": approval.approval_id, "ask": ask, "context": context},
        )
        return approval

    def tool(self, kind: ToolKind, override: str | None = None) -> str | None:
        return _first_of_kind(self.registry, kind, override)

    def kb_tool(self, operation: str) -> str | None:
        modality = self.task.modality()
        found = data_agent.lookup_operation(self.config.kb, modality, operation)
        if isinstance(found, SearchFallback):
            return None
        return found

    # ------------------------------------------------------------- user API

    def start(self, requirement: str) -> None:
        if self.state is not SessionState.OPEN:
            raise InvalidSessionState(f"session is {self.state.value}, not open")
        self.state = SessionState.RUNNING
        self.send(AgentId.USER, AgentId.TASK, EnvelopeKind.REQUIREMENT, {"text": requirement})
        self._drain()

    def post_message(self, text: str) -> None:
        if self.state is SessionState.OPEN:
            self.start(text)
            return
        if self.state in (SessionState.RUNNING, SessionState.AWAITING_USER):
            self.state = SessionState.RUNNING
            self.send(AgentId.USER, AgentId.TASK, EnvelopeKind.RESPONSE, {"text": text})
            self._drain()
            return
        raise InvalidSessionState(f"session is {self.state.value}")

    def upload_dataset(self, name: str, content: str) -> dict[str, Any]:
        """Replace the working dataset with uploaded JSON-lines records."""
        if self.events.sealed:
            raise InvalidSessionState(f"session is {self.state.value}")
        ds = data_agent.load_dataset(
            content.splitlines(), dataset_id=Path(name).stem, modality=self.task.modality()
        )
        self.dataset = ds
        self.emit(
            EventKind.MESSAGE,
            {"type": "dataset_upload", "dataset_id": ds.id, "count": len(ds.records)},
        )
        if self.task.pending_upload is not None and self.state is not SessionState.OPEN:
            self.state = SessionState.RUNNING
            self.task.resume_after_upload()
            self._drain()
        return {"dataset_id": ds.id, "count": len(ds.records)}

    def resolve_approval(self, approval_id: str, approved: bool, by: str = "user") -> None:
        approval = self.approvals.get(approval_id)
        if approval is None:
            raise UnknownApproval(approval_id)
        if approval.resolved:
            raise InvalidSessionState(f"approval {approval_id} already resolved")
        if self.events.sealed:
            raise InvalidSessionState(f"session is {self.state.value}")
        approval.resolved = True
        approval.approved = approved
        self.emit(
            EventKind.APPROVAL_RESOLVED,
            {"approval_id": approval_id, "approved": approved, "by": by},
        )
        self.state = SessionState.RUNNING
        self.task.on_approval(approval, approved)
        self._drain()

    # ------------------------------------------------------------ lifecycle

    def _drain(self) -> None:
        self.dispatcher.run()
        self._settle()

    def _settle(self) -> None:
        if self.events.sealed:
            outcome = self.events.of_kind(EventKind.TERMINAL)[0].body["outcome"]
            self.state = _OUTCOME_STATES[outcome]
        elif self.state is not SessionState.OPEN:
            self.state = SessionState.AWAITING_USER


STEP_OK = "ok"
STEP_FAILED = "failed"
STEP_INSUFFICIENT = "insufficient"


class _SopTracker:
    """Current stage of one agent, checked against its SOP graph on every move."""

    def __init__(self, graph: SopGraph | None, start: str) -> None:
        self._graph = graph
        self.stage = start

    def move(self, stage: str) -> None:
        if self._graph is not None:
            sop_check(self._graph, self.stage, stage)
        self.stage = stage


class _Insufficient(Exception):
    def __init__(self, verdict: data_agent.Sufficiency) -> None:
        super().__init__("insufficient data")
        self.verdict = verdict


class TaskRuntime:
    """Hub logic: intake, screening, planning, step bookkeeping, finalize."""

    STAGES = ("receive", "screen", "assess", "plan", "execute", "finalize", "done")

    def __init__(self, session: Session) -> None:
        self.session = session
        self.spec: TaskSpec | None = None
        self.plan: Plan | None = None
        self.pending_upload: str | None = None  # step_id or "feasibility"
        self.pending_clarification = False
        self.escalation_attempts = 0
        self.retry_attempts: dict[str, int] = {}
        self.sop = _SopTracker(session.config.sops.get("task"), "receive")

    def modality(self) -> str:
        if self.spec is not None and "image" in self.spec.modality:
            return "image"
        return "text"

    def _move(self, stage: str) -> None:
        self.sop.move(stage)

    # ------------------------------------------------------------- handler

    def handle(self, item: Envelope | Directive) -> list[Envelope]:
        if isinstance(item, Directive):
            if item.name == "finalize":
                self._finalize()
            return []
        if item.sender is AgentId.USER:
            if item.kind is EnvelopeKind.REQUIREMENT:
                self._intake(item)
            else:
                self._user_reply(item)
            return []
        self._on_step_result(item)
        return []

    # -------------------------------------------------------------- intake

    def _intake(self, env: Envelope) -> None:
        session = self.session
        session.memory.append(session.dispatcher.clock, AgentId.TASK, "requirement received")
        result, _rounds = task_agent.parse_requirement(env.payload["text"], session.backend)
        if isinstance(result, task_agent.Clarification):
            self.pending_clarification = True
            session.emit(EventKind.CLARIFICATION_REQUESTED, {"question": result.question})
            session.send(
                AgentId.TASK,
                AgentId.USER,
                EnvelopeKind.CLARIFICATION,
                {"question": result.question},
                causality=env.id,
            )
            return
        self.spec = result
        self._move("screen")
        decision = task_agent.screen_policy(result, session.config.policy_rules, session.backend)
        if not decision.allowed:
            session.emit(
                EventKind.REFUSAL_ISSUED,
                {"reason": decision.reason, "rule_id": decision.rule_id, "source": decision.source},
            )
            session.send(
                AgentId.TASK,
                AgentId.USER,
                EnvelopeKind.REFUSAL,
                {"reason": decision.reason},
                causality=env.id,
            )
            session.emit(
                EventKind.TERMINAL, {"outcome": "refused", "reason": decision.reason}
            )
            return
        self._move("assess")
        have_dataset = bool(result.data_refs) or session.dataset is not None
        verdict = task_agent.assess_feasibility(
            result, session.config.model_cards, have_dataset, session.backend
        )
        if verdict.verdict == "infeasible":
            session.send(
                AgentId.TASK,
                AgentId.USER,
                EnvelopeKind.RESPONSE,
                {"text": f"cannot fulfill this request: {verdict.reason}"},
                causality=env.id,
            )
            session.emit(
                EventKind.TERMINAL, {"outcome": "cannot_fulfill", "reason": verdict.reason}
            )
            return
        if verdict.verdict == "needs_intervention":
            approval = session.new_approval(verdict.ask, context="feasibility")
            session.send(
                AgentId.TASK,
                AgentId.USER,
                EnvelopeKind.CLARIFICATION,
                {"approval_id": approval.approval_id, "ask": verdict.ask},
                causality=env.id,
            )
            return
        self._move("plan")
        session.memory.append(
            session.dispatcher.clock, AgentId.TASK, f"task accepted: {result.task_type}"
        )
        self._adopt_plan(task_agent.make_global_plan(result))

    def _user_reply(self, env: Envelope) -> None:
        # a free-form answer resumes a pending clarification by re-parsing
        # the requirement with the new information appended
        if self.pending_clarification:
            self.pending_clarification = False
            self._intake(
                Envelope(
                    id=env.id,
                    session=env.session,
                    sender=env.sender,
                    recipient=env.recipient,
                    kind=EnvelopeKind.REQUIREMENT,
                    payload={"text": env.payload["text"]},
                    causality=env.causality,
                )
            )
            return
        self.session.send(
            AgentId.TASK,
            AgentId.USER,
            EnvelopeKind.STATUS,
            {"text": "working; no input needed right now"},
            causality=env.id,
        )

    # ------------------------------------------------------------ planning

    def _adopt_plan(self, plan: Plan) -> None:
        self.plan = plan
        self._move("execute")
        self.session.emit(EventKind.PLAN_PROPOSED, plan.to_doc())
        self._dispatch_next()

    def _revise(self, new_steps: Sequence[PlanStep]) -> bool:
        """Revise the plan; on budget exhaustion ask the user instead."""
        assert self.plan is not None
        try:
            plan = revise_plan(self.plan, new_steps, self.session.config.replan_cap)
        except ReplanBudgetExhausted:
            approval = self.session.new_approval(
                "replanning budget exhausted; provide guidance or cancel", context="replan"
            )
            self.session.send(
                AgentId.TASK,
                AgentId.USER,
                EnvelopeKind.CLARIFICATION,
                {"approval_id": approval.approval_id, "ask": approval.ask},
            )
            return False
        self.plan = plan
        self.session.emit(EventKind.PLAN_PROPOSED, plan.to_doc())
        return True

    def _dispatch_next(self) -> None:
        assert self.plan is not None
        step = self.plan.next_pending()
        if step is None:
            if self.plan.finished():
                self._move("finalize")
                self.session.dispatcher.send_directive(
                    Directive(name="finalize", target=AgentId.TASK)
                )
            return
        self.plan = self.plan.with_status(step.step_id, StepStatus.RUNNING)
        self.session.emit(
            EventKind.STEP_STARTED,
            {"step_id": step.step_id, "owner": step.owner.value, "action": step.action},
        )
        self.session.send(
            AgentId.TASK,
            step.owner,
            EnvelopeKind.INSTRUCTION,
            {"step_id": step.step_id, "action": step.action, "params": step.params},
        )

    # -------------------------------------------------------- step results

    def _on_step_result(self, env: Envelope) -> None:
        assert self.plan is not None
        payload = env.payload
        step_id = payload["step_id"]
        try:
            step = self.plan.step(step_id)
        except KeyError:
            raise task_agent.UnknownStep(step_id) from None
        status = payload["status"]
        output = payload.get("output", {})
        session = self.session

        if status == STEP_OK:
            self.plan = self.plan.with_status(step_id, StepStatus.DONE)
            session.emit(
                EventKind.STEP_FINISHED, {"step_id": step_id, "status": "done", "output": output}
            )
            session.memory.append(
                session.dispatcher.clock, env.sender, f"step {step_id} done"
            )
            self._dispatch_next()
            return

        self.plan = self.plan.with_status(step_id, StepStatus.FAILED)
        session.emit(
            EventKind.STEP_FINISHED,
            {"step_id": step_id, "status": status, "output": output},
        )
        if status == STEP_INSUFFICIENT:
            self.pending_upload = step_id
            session.send(
                AgentId.TASK,
                AgentId.USER,
                EnvelopeKind.STATUS,
                {
                    "text": (
                        f"the dataset is insufficient: need at least "
                        f"{output['minimum']} trusted labeled records, have {output['labeled']}"
                    ),
                    "recommended_n": output["recommended_n"],
                },
                causality=env.id,
            )
            return
        if step.action == "evaluate" and "next_action" in output:
            self._after_failed_evaluation(step_id, output)
            return
        self._retry_failed_step(step_id)

    def _after_failed_evaluation(self, step_id: str, output: dict[str, Any]) -> None:
        next_action = output["next_action"]
        if next_action["kind"] == "request_intervention":
            approval = self.session.new_approval(
                "training cannot reach the accuracy target with available resources; "
                "provide additional labeled data or relax constraints",
                context="escalation",
            )
            self.session.send(
                AgentId.TASK,
                AgentId.USER,
                EnvelopeKind.CLARIFICATION,
                {"approval_id": approval.approval_id, "ask": approval.ask},
            )
            return
        self.escalation_attempts += 1
        assert self.plan is not None
        steps = task_agent.escalation_steps(self.plan, step_id, self.escalation_attempts)
        if self._revise(steps):
            self._dispatch_next()

    def _retry_failed_step(self, step_id: str) -> None:
        assert self.plan is not None
        attempt = self.retry_attempts.get(step_id, 0) + 1
        self.retry_attempts[step_id] = attempt
        failed = self.plan.step(step_id)
        steps = task_agent.replacement_steps(
            self.plan, step_id, [task_agent.retry_step(failed, attempt)]
        )
        if self._revise(steps):
            self._dispatch_next()

    # ------------------------------------------------------------- resumes

    def resume_after_upload(self) -> None:
        marker = self.pending_upload
        self.pending_upload = None
        if marker is None:
            return
        if marker == "feasibility":
            assert self.spec is not None
            self._move("plan")
            self._adopt_plan(task_agent.make_global_plan(self.spec))
            return
        self._retry_failed_step(marker)

    def on_approval(self, approval: Approval, approved: bool) -> None:
        session = self.session
        if not approved:
            reason = task_agent.CANNOT_FULFILL_REASON
            session.send(
                AgentId.TASK,
                AgentId.USER,
                EnvelopeKind.RESPONSE,
                {"text": f"cannot fulfill this request: {reason}"},
            )
            session.emit(EventKind.TERMINAL, {"outcome": "cannot_fulfill", "reason": reason})
            return
        if approval.context == "feasibility":
            # the user agreed to step in: wait for the data they promised
            self.pending_upload = "feasibility"
            session.send(
                AgentId.TASK,
                AgentId.USER,
                EnvelopeKind.STATUS,
                {"text": "please upload the annotated dataset to continue"},
            )
            return
        session.send(
            AgentId.TASK,
            AgentId.USER,
            EnvelopeKind.STATUS,
            {"text": "acknowledged; continuing with current resources"},
        )

    # ------------------------------------------------------------ finalize

    def _finalize(self) -> None:
        session = self.session
        parts = ["all steps completed"]
        if session.artifact_order:
            _, artifact = session.latest_artifact()
            parts.append(f"model {artifact['model']} ({artifact['param_count']:,} parameters)")
        if session.estimate is not None:
            parts.append(f"{session.estimate.containers} containers provisioned")
        if session.deployment is not None:
            parts.append(f"live at {session.deployment.endpoint}")
        summary = "; ".join(parts)
        session.send(AgentId.TASK, AgentId.USER, EnvelopeKind.RESPONSE, {"text": summary})
        session.memory.append(session.dispatcher.clock, AgentId.TASK, "session completed")
        self._move("done")
        session.emit(EventKind.TERMINAL, {"outcome": "completed", "summary": summary})


class DataRuntime:
    """Prepare pipeline: clean, correct, gate, collect, label, split."""

    def __init__(self, session: Session) -> None:
        self.session = session
        self.sop = _SopTracker(session.config.sops.get("data"), "idle")

    def handle(self, item: Envelope | Directive) -> list[Envelope]:
        assert isinstance(item, Envelope)
        payload = item.payload
        step_id = payload["step_id"]
        self.sop.move("working")
        try:
            output = self._prepare()
            status = STEP_OK
        except _Insufficient as marker:
            verdict = marker.verdict
            status = STEP_INSUFFICIENT
            output = {
                "labeled": verdict.labeled,
                "effective": verdict.effective,
                "minimum": verdict.minimum,
                "recommended_n": verdict.recommended_n,
            }
        except data_agent.DataAgentError as exc:
            status = STEP_FAILED
            output = {"reason": str(exc)}
        finally:
            self.sop.move("idle")
        self.session.send(
            AgentId.DATA,
            AgentId.TASK,
            EnvelopeKind.STEP_RESULT,
            {"step_id": step_id, "status": status, "output": output},
            causality=item.id,
        )
        return []

    def _load_initial(self) -> Dataset:
        session = self.session
        if session.dataset is not None:
            return session.dataset
        spec = session.task.spec
        assert spec is not None
        if not spec.data_refs:
            raise data_agent.DataAgentError("no dataset uploaded and no data references")
        ref = spec.data_refs[0]
        return data_agent.load_dataset(
            session.config.data_root / ref,
            dataset_id=Path(ref).stem,
            modality=session.task.modality(),
        )

    def _prepare(self) -> dict[str, Any]:
        session = self.session
        config = session.config
        spec = session.task.spec
        assert spec is not None
        ds = self._load_initial()

        cleaner = session.kb_tool("clean")
        total_removed = 0
        if cleaner is not None:
            ds, report = data_agent.clean_via_tool(ds, session.registry.invoke, cleaner)
            total_removed = report.total_removed

        corrected: list[int] = []
        corrector = session.tool(ToolKind.CORRECTOR)
        if corrector is not None:
            ds, corrected = data_agent.correct_labels(ds, session.registry.invoke, corrector)

        verdict = data_agent.assess_sufficiency(ds, spec, config.sufficiency)
        if not verdict.sufficient:
            session.dataset = ds
            raise _Insufficient(verdict)

        collected = 0
        if config.collect_n > 0:
            collector = session.kb_tool("collect")
            if collector is not None:
                ds, added = data_agent.collect(
                    ds, session.registry.invoke, collector, config.collect_n
                )
                collected = len(added)
        annotator = session.kb_tool("label")
        if annotator is not None:
            ds = data_agent.auto_label(ds, session.registry.invoke, annotator)

        if config.augment_factor > 1:
            augmenter = session.kb_tool("augment")
            if augmenter is not None:
                ds = data_agent.augment(
                    ds, session.registry.invoke, augmenter, config.augment_factor
                )

        ds = data_agent.make_splits(ds, config.test_size)
        summary, stats = data_agent.summarize(ds)
        session.dataset = ds
        return {
            "dataset_id": ds.id,
            "count": stats.count,
            "labeled": stats.labeled,
            "trusted_labeled": ds.trusted_labeled_count(),
            "corrected_indices": corrected,
            "collected": collected,
            "stopwords_removed": total_removed,
            "train_size": len(ds.splits.train),
            "test_size": len(ds.splits.test),
            "label_domain": ds.label_domain(),
            "summary": summary,
        }


class ModelRuntime:
    """Training and evaluation, with the escalation ladder in between."""

    def __init__(self, session: Session) -> None:
        self.session = session
        self.state = EscalationState()
        self.student: ModelCard | None = None
        self.last_mode: TrainingMode | None = None
        self.last_hyperparams: dict[str, Any] | None = None
        self.pending_action: model_agent.NextAction | None = None
        self.sop = _SopTracker(session.config.sops.get("model"), "idle")

    def handle(self, item: Envelope | Directive) -> list[Envelope]:
        assert isinstance(item, Envelope)
        payload = item.payload
        step_id, action = payload["step_id"], payload["action"]
        self.sop.move("working")
        try:
            if action == "train":
                status, output = self._train(payload["params"])
            elif action == "evaluate":
                status, output = self._evaluate()
            else:
                status, output = STEP_FAILED, {"reason": f"unknown action {action!r}"}
        except model_agent.ModelAgentError as exc:
            status, output = STEP_FAILED, {"reason": str(exc)}
        finally:
            self.sop.move("idle")
        self.session.send(
            AgentId.MODEL,
            AgentId.TASK,
            EnvelopeKind.STEP_RESULT,
            {"step_id": step_id, "status": status, "output": output},
            causality=item.id,
        )
        return []

    def _train(self, params: dict[str, Any]) -> tuple[str, dict[str, Any]]:
        session = self.session
        spec = session.task.spec
        assert spec is not None
        ds = session.dataset
        if ds is None or ds.splits is None:
            return STEP_FAILED, {"reason": "no prepared dataset with splits"}

        if self.student is None:
            self.student = model_agent.select_model(session.config.model_cards, spec)

        mode = TrainingMode.DIRECT
        teacher = None
        hyperparams: dict[str, Any] = dict(model_agent.DEFAULT_HYPERPARAMS)
        if params.get("escalation"):
            action = self.pending_action
            if action is None:
                return STEP_FAILED, {"reason": "escalation requested with no pending action"}
            if action.kind is model_agent.ActionKind.HIERARCHICAL:
                mode, teacher = TrainingMode.HIERARCHICAL, action.teacher
            elif action.kind is model_agent.ActionKind.TUNE_HYPERPARAMS:
                assert action.hyperparams is not None
                hyperparams = dict(action.hyperparams)
            else:
                return STEP_FAILED, {"reason": f"cannot train under action {action.kind.value}"}
            self.pending_action = None

        trainer = session.tool(ToolKind.TRAINER, session.config.trainer_tool)
        if trainer is None:
            return STEP_FAILED, {"reason": "no trainer tool registered"}
        job = TrainingJob(
            student=self.student,
            dataset_ref=ds.id,
            hyperparams=hyperparams,
            mode=mode,
            teacher=teacher,
        )
        artifact, metrics = model_agent.run_training(job, ds, session.registry.invoke, trainer)
        ref = session.store_artifact(artifact)
        self.last_mode = mode
        self.last_hyperparams = hyperparams
        return STEP_OK, {
            "artifact_ref": ref,
            "model": artifact["model"],
            "mode": mode.value,
            "train_metrics": metrics,
        }

    def _evaluate(self) -> tuple[str, dict[str, Any]]:
        session = self.session
        spec = session.task.spec
        assert spec is not None
        ds = session.dataset
        if ds is None or ds.splits is None:
            return STEP_FAILED, {"reason": "no prepared dataset with splits"}
        if self.last_mode is None or self.last_hyperparams is None:
            return STEP_FAILED, {"reason": "nothing trained yet"}
        ref, artifact = session.latest_artifact()
        truth = [ds.by_index(i).label for i in ds.splits.test]
        accuracy = model_agent.evaluate(artifact["predictions"], truth)
        report = model_agent.make_eval_report(
            spec,
            {"accuracy": accuracy, "param_count": artifact["param_count"]},
            testset_ref=f"{ds.id}#test",
            artifact_ref=ref,
        )
        self.state.record(self.last_mode, self.last_hyperparams, report)
        if report.passed:
            return STEP_OK, {"report": report.to_doc()}
        assert self.student is not None
        action = model_agent.plan_escalation(
            self.state,
            report,
            spec,
            session.config.model_cards,
            self.student,
            retune_budget=session.config.retune_budget,
            have_compressor=session.tool(ToolKind.COMPRESSOR) is not None,
            trained_artifacts=len(session.artifact_order),
        )
        self.pending_action = action
        next_doc: dict[str, Any] = {"kind": action.kind.value, "reason": action.reason}
        if action.teacher is not None:
            next_doc["teacher"] = action.teacher.name
        if action.hyperparams is not None:
            next_doc["hyperparams"] = action.hyperparams
        return STEP_FAILED, {"report": report.to_doc(), "next_action": next_doc}


class ServerRuntime:
    """Conversion, capacity, deployment, and the service interface doc."""

    def __init__(self, session: Session) -> None:
        self.session = session
        self.sop = _SopTracker(session.config.sops.get("server"), "idle")

    def handle(self, item: Envelope | Directive) -> list[Envelope]:
        assert isinstance(item, Envelope)
        payload = item.payload
        step_id, action = payload["step_id"], payload["action"]
        self.sop.move("working")
        try:
            if action == "convert":
                status, output = self._convert(payload["params"])
            elif action == "estimate":
                status, output = self._estimate()
            elif action == "deploy":
                status, output = self._deploy()
            elif action == "document":
                status, output = self._document()
            else:
                status, output = STEP_FAILED, {"reason": f"unknown action {action!r}"}
        except server_agent.ServerAgentError as exc:
            status, output = STEP_FAILED, {"reason": str(exc)}
        finally:
            self.sop.move("idle")
        self.session.send(
            AgentId.SERVER,
            AgentId.TASK,
            EnvelopeKind.STEP_RESULT,
            {"step_id": step_id, "status": status, "output": output},
            causality=item.id,
        )
        return []

    def _convert(self, params: dict[str, Any]) -> tuple[str, dict[str, Any]]:
        session = self.session
        ref, artifact = session.latest_artifact()
        target = params.get("target_format", artifact["format"])
        path = server_agent.find_conversion_path(
            session.config.conversion_graph, artifact["format"], target
        )
        if not path:
            return STEP_OK, {"artifact_ref": ref, "format": artifact["format"], "hops": []}
        converted = server_agent.convert(artifact, path, session.registry.invoke)
        new_ref = session.store_artifact(converted)
        return STEP_OK, {
            "artifact_ref": new_ref,
            "format": converted["format"],
            "hops": [hop.tool_id for hop in path],
        }

    def _estimate(self) -> tuple[str, dict[str, Any]]:
        session = self.session
        spec = session.task.spec
        assert spec is not None
        deployment = spec.deployment
        if deployment is None:
            return STEP_OK, {"skipped": "no deployment requested"}
        benchmark = session.tool(ToolKind.BENCHMARK, session.config.benchmark_tool)
        if benchmark is None:
            return STEP_FAILED, {"reason": "no benchmark tool registered"}
        _, artifact = session.latest_artifact()
        result = session.registry.invoke(benchmark, {"artifact": artifact})
        if not result.ok or result.payload is None:
            return STEP_FAILED, {"reason": f"benchmark failed: {result.log_excerpt}"}
        per_container_qps = result.payload["per_container_qps"]
        estimate = server_agent.estimate_resources(
            artifact["footprint_bytes"],
            deployment.qps_min,
            per_container_qps,
            container_mem_bytes=deployment.container_mem_bytes,
        )
        session.estimate = estimate
        return STEP_OK, estimate.to_doc()

    def _deploy(self) -> tuple[str, dict[str, Any]]:
        session = self.session
        spec = session.task.spec
        assert spec is not None
        deployment = spec.deployment
        if deployment is None:
            return STEP_OK, {"skipped": "no deployment requested"}
        if session.estimate is None:
            return STEP_FAILED, {"reason": "capacity was never estimated"}
        platform = session.tool(ToolKind.PLATFORM, session.config.platform_tool)
        if platform is None:
            return STEP_FAILED, {"reason": "no platform tool registered"}
        _, artifact = session.latest_artifact()
        try:
            record = server_agent.deploy(
                artifact, session.estimate, deployment, session.registry.invoke, platform
            )
        except (server_agent.MemoryExceeded, server_agent.PlatformRejected) as exc:
            return STEP_FAILED, {"reason": str(exc)}
        session.deployment = record
        for status in record.statuses:
            session.emit(
                EventKind.DEPLOYMENT_STATUS, {"status": status, "endpoint": record.endpoint}
            )
        return STEP_OK, record.to_doc()

    def _document(self) -> tuple[str, dict[str, Any]]:
        session = self.session
        spec = session.task.spec
        assert spec is not None
        if session.deployment is None:
            return STEP_FAILED, {"reason": "nothing deployed to document"}
        ds = session.dataset
        if ds is None:
            return STEP_FAILED, {"reason": "no dataset to derive the label domain from"}
        _, artifact = session.latest_artifact()
        doc = server_agent.render_interface_doc(
            spec, session.deployment.endpoint, ds.label_domain(), artifact["model"]
        )
        return STEP_OK, {"interface_doc": doc.text, "endpoint": doc.endpoint}
