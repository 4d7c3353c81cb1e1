"""Shared agent machinery: context windows, SOPs, plans, memory, dispatch.

Everything here is deterministic on purpose. The dispatcher orders work
by (due tick, send sequence), latencies are logical ticks, and the
memory log is a hash chain, so two runs with the same inputs produce
byte-identical traces.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence, Union

from .protocol import AgentId, Envelope, canonical_encode, validate_envelope


class KernelError(Exception):
    """Base class for runtime-level failures."""


class BudgetTooSmall(KernelError):
    pass


class UnknownStage(KernelError):
    pass


class SopViolation(KernelError):
    pass


class ReplanBudgetExhausted(KernelError):
    pass


class PlanInvariantViolation(KernelError):
    pass


class LivenessError(KernelError):
    pass


class ChainTampered(KernelError):
    pass


# ---------------------------------------------------------------- profiles


@dataclass(frozen=True)
class Profile:
    agent: AgentId
    text: str


def load_profile(path: str | Path, agent: AgentId) -> Profile:
    text = Path(path).read_text(encoding="utf-8").strip()
    if not text:
        raise KernelError(f"profile file {path} is empty")
    return Profile(agent=agent, text=text)


# ---------------------------------------------------------- context window


def token_cost(text: str) -> int:
    # four characters per token is a proxy, but a stable one
    return (len(text) + 3) // 4


def build_context(
    system: str, incoming: str, memory: Sequence[str], budget: int
) -> list[str]:
    """Pack memory entries newest-first under a token budget.

    The system text and the incoming message are never dropped; if they
    alone exceed the budget that is a configuration error, not a reason
    to truncate silently. Returned order is chronological.
    """
    base = token_cost(system) + token_cost(incoming)
    if base > budget:
        raise BudgetTooSmall(f"system + incoming cost {base} tokens, budget {budget}")
    remaining = budget - base
    kept: list[str] = []
    for entry in reversed(memory):
        cost = token_cost(entry)
        if cost <= remaining:
            kept.append(entry)
            remaining -= cost
    kept.reverse()
    return [system, *kept, incoming]


# ------------------------------------------------------------- memory log

CHAIN_GENESIS = "0" * 64


@dataclass(frozen=True)
class MemoryEntry:
    tick: int
    author: AgentId
    entry: str
    chain_hash: str

    def to_doc(self) -> dict[str, Any]:
        return {
            "tick": self.tick,
            "author": self.author.value,
            "entry": self.entry,
            "chain_hash": self.chain_hash,
        }


def _chain_hash(prev: str, tick: int, author: AgentId, entry: str) -> str:
    body = canonical_encode({"tick": tick, "author": author.value, "entry": entry})
    return hashlib.sha256(prev.encode("ascii") + body).hexdigest()


class MemoryLog:
    """Append-only shared memory; every entry extends a hash chain."""

    def __init__(self) -> None:
        self._entries: list[MemoryEntry] = []

    def append(self, tick: int, author: AgentId, entry: str) -> MemoryEntry:
        prev = self._entries[-1].chain_hash if self._entries else CHAIN_GENESIS
        item = MemoryEntry(tick, author, entry, _chain_hash(prev, tick, author, entry))
        self._entries.append(item)
        return item

    def entries(self) -> list[MemoryEntry]:
        return list(self._entries)

    def texts(self) -> list[str]:
        return [e.entry for e in self._entries]

    def __len__(self) -> int:
        return len(self._entries)

    def verify(self) -> None:
        prev = CHAIN_GENESIS
        for position, item in enumerate(self._entries):
            expected = _chain_hash(prev, item.tick, item.author, item.entry)
            if item.chain_hash != expected:
                raise ChainTampered(f"memory entry {position} breaks the chain")
            prev = item.chain_hash


# ------------------------------------------------------------------- SOPs


@dataclass(frozen=True)
class SopGraph:
    name: str
    stages: frozenset[str]
    edges: frozenset[tuple[str, str]]
    start: str
    terminals: frozenset[str]

    def __post_init__(self) -> None:
        if self.start not in self.stages:
            raise KernelError(f"SOP {self.name}: start stage {self.start!r} unknown")
        missing = self.terminals - self.stages
        if missing:
            raise KernelError(f"SOP {self.name}: unknown terminal stages {sorted(missing)}")
        for src, dst in self.edges:
            if src not in self.stages or dst not in self.stages:
                raise KernelError(f"SOP {self.name}: edge {src}->{dst} leaves the stage set")


def load_sop(path: str | Path) -> SopGraph:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return SopGraph(
        name=doc.get("name", Path(path).stem),
        stages=frozenset(doc["stages"]),
        edges=frozenset((src, dst) for src, dst in doc["edges"]),
        start=doc["start"],
        terminals=frozenset(doc["terminals"]),
    )


def sop_check(graph: SopGraph, current: str, proposed: str) -> None:
    """Allow staying put or following a declared edge; reject the rest."""
    for stage in (current, proposed):
        if stage not in graph.stages:
            raise UnknownStage(f"SOP {graph.name}: stage {stage!r} unknown")
    if current == proposed:
        return
    if (current, proposed) not in graph.edges:
        raise SopViolation(f"SOP {graph.name}: {current} -> {proposed} is not a declared edge")


# ------------------------------------------------------------------ plans

SPOKE_AGENTS = frozenset({AgentId.DATA, AgentId.MODEL, AgentId.SERVER})


class StepStatus(str, enum.Enum):
    PENDING = "pending"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"


@dataclass(frozen=True)
class PlanStep:
    step_id: str
    owner: AgentId
    action: str
    params: dict[str, Any] = field(default_factory=dict)
    status: StepStatus = StepStatus.PENDING

    def to_doc(self) -> dict[str, Any]:
        return {
            "step_id": self.step_id,
            "owner": self.owner.value,
            "action": self.action,
            "params": self.params,
            "status": self.status.value,
        }


@dataclass(frozen=True)
class Plan:
    steps: tuple[PlanStep, ...]
    revision: int = 0

    def __post_init__(self) -> None:
        ids = [s.step_id for s in self.steps]
        if len(set(ids)) != len(ids):
            raise PlanInvariantViolation("duplicate step ids in plan")
        for step in self.steps:
            if step.owner not in SPOKE_AGENTS:
                raise PlanInvariantViolation(
                    f"step {step.step_id}: owner {step.owner.value} is not a spoke agent"
                )

    def step(self, step_id: str) -> PlanStep:
        for step in self.steps:
            if step.step_id == step_id:
                return step
        raise KeyError(step_id)

    def with_status(self, step_id: str, status: StepStatus) -> "Plan":
        found = False
        steps = []
        for step in self.steps:
            if step.step_id == step_id:
                steps.append(PlanStep(step.step_id, step.owner, step.action, step.params, status))
                found = True
            else:
                steps.append(step)
        if not found:
            raise KeyError(step_id)
        return Plan(tuple(steps), self.revision)

    def next_pending(self) -> PlanStep | None:
        for step in self.steps:
            if step.status is StepStatus.PENDING:
                return step
        return None

    def finished(self) -> bool:
        return all(s.status is StepStatus.DONE for s in self.steps)

    def to_doc(self) -> dict[str, Any]:
        return {"revision": self.revision, "steps": [s.to_doc() for s in self.steps]}


def revise_plan(plan: Plan, new_steps: Sequence[PlanStep], replan_cap: int = 3) -> Plan:
    """Replace the remaining plan; completed work is immutable history.

    Every step already done must reappear byte-identically. The revision
    counter is shared by repairs and extensions alike, and the cap is on
    revisions performed, so revision == cap means the budget is gone.
    """
    if plan.revision >= replan_cap:
        raise ReplanBudgetExhausted(f"plan already revised {plan.revision} times, cap {replan_cap}")
    revised = Plan(tuple(new_steps), plan.revision + 1)
    by_id = {s.step_id: s for s in revised.steps}
    for step in plan.steps:
        if step.status is not StepStatus.DONE:
            continue
        successor = by_id.get(step.step_id)
        if successor is None:
            raise PlanInvariantViolation(f"revision drops completed step {step.step_id}")
        if canonical_encode(successor.to_doc()) != canonical_encode(step.to_doc()):
            raise PlanInvariantViolation(f"revision rewrites completed step {step.step_id}")
    return revised


# -------------------------------------------------------------- dispatcher


@dataclass(frozen=True)
class Directive:
    """Internal control message; not an envelope, so no routing rules."""

    name: str
    target: AgentId
    payload: dict[str, Any] = field(default_factory=dict)


Item = Union[Envelope, Directive]
Handler = Callable[[Item], Sequence[Item]]
LatencyFn = Callable[[AgentId, AgentId], int]

DEFAULT_DISPATCH_BUDGET = 10_000


class Dispatcher:
    """Single-threaded logical-time scheduler.

    Deliveries happen in (due tick, send order) order; the clock never
    goes backwards. A bounded delivery budget turns livelock into a
    loud LivenessError instead of a hang.
    """

    def __init__(
        self, latency: LatencyFn | None = None, budget: int = DEFAULT_DISPATCH_BUDGET
    ) -> None:
        self.clock = 0
        self.deliveries = 0
        self.budget = budget
        self.on_deliver: Callable[[int, Item], None] | None = None
        self._latency: LatencyFn = latency or (lambda sender, recipient: 1)
        self._handlers: dict[AgentId, Handler] = {}
        self._heap: list[tuple[int, int, Item]] = []
        self._seq = 0

    def register(self, agent: AgentId, handler: Handler) -> None:
        if agent in self._handlers:
            raise KernelError(f"handler for {agent.value} already registered")
        self._handlers[agent] = handler

    def _push(self, due: int, item: Item) -> None:
        # seq breaks ties, so heap entries never compare items themselves
        heapq.heappush(self._heap, (due, self._seq, item))
        self._seq += 1

    def send(self, env: Envelope) -> None:
        validate_envelope(env)
        delay = max(0, self._latency(env.sender, env.recipient))
        self._push(self.clock + delay, env)

    def send_directive(self, directive: Directive, delay: int = 0) -> None:
        self._push(self.clock + max(0, delay), directive)

    def pending(self) -> int:
        return len(self._heap)

    def step(self) -> Item:
        if not self._heap:
            raise KernelError("nothing to dispatch")
        due, _, item = heapq.heappop(self._heap)
        self.clock = max(self.clock, due)
        self.deliveries += 1
        recipient = item.recipient if isinstance(item, Envelope) else item.target
        handler = self._handlers.get(recipient)
        if handler is None:
            raise KernelError(f"no handler registered for {recipient.value}")
        if self.on_deliver is not None:
            self.on_deliver(self.clock, item)
        for out in handler(item):
            if isinstance(out, Directive):
                self.send_directive(out)
            else:
                self.send(out)
        return item

    def run(self) -> int:
        """Dispatch until quiescent; returns total deliveries so far."""
        while self._heap:
            if self.deliveries >= self.budget:
                raise LivenessError(
                    f"dispatch budget {self.budget} spent with {len(self._heap)} items pending"
                )
            self.step()
        return self.deliveries
