"""Shared wire types for the agent kernel.

Everything that crosses an agent boundary is one of three documents: an
Envelope (a routed message), an Event (an audit record), or a TaskSpec
(the structured form of a user requirement). All three serialize to
canonical JSON, so logs and transcripts are byte-comparable across runs.

Routing obeys a hub rule: the task agent mediates everything. The user
talks only to the task agent, and the data, model, and server agents
talk only to the task agent. That leaves eight legal ordered edges out
of the twenty-five possible sender/recipient pairs; `validate_envelope`
rejects the other seventeen.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence


class AgentId(str, enum.Enum):
    """The five participant identities. No others exist."""

    USER = "user"
    TASK = "task"
    DATA = "data"
    MODEL = "model"
    SERVER = "server"


class EnvelopeKind(str, enum.Enum):
    """What a routed message is for."""

    REQUIREMENT = "requirement"
    INSTRUCTION = "instruction"
    STEP_RESULT = "step_result"
    CLARIFICATION = "clarification"
    STATUS = "status"
    RESPONSE = "response"
    REFUSAL = "refusal"


class EventKind(str, enum.Enum):
    """Audit-log record kinds. The set is closed; richer payloads go in the body."""

    MESSAGE = "message"
    PLAN_PROPOSED = "plan_proposed"
    STEP_STARTED = "step_started"
    STEP_FINISHED = "step_finished"
    APPROVAL_REQUESTED = "approval_requested"
    APPROVAL_RESOLVED = "approval_resolved"
    REFUSAL_ISSUED = "refusal_issued"
    CLARIFICATION_REQUESTED = "clarification_requested"
    DEPLOYMENT_STATUS = "deployment_status"
    TERMINAL = "terminal"


class Metric(str, enum.Enum):
    """Constraint vocabulary. Units are fixed per metric."""

    ACCURACY_MIN = "accuracy_min"  # fraction in (0, 1]
    PARAM_COUNT_MAX = "param_count_max"  # whole count
    QPS_MIN = "qps_min"  # requests per second, fractional allowed
    LATENCY_MAX_MS = "latency_max_ms"  # milliseconds
    CONTAINER_MEM_BYTES = "container_mem_bytes"  # whole bytes


# Counts and byte sizes must be whole numbers on the wire.
INTEGER_METRICS = frozenset({Metric.PARAM_COUNT_MAX, Metric.CONTAINER_MEM_BYTES})

MODALITIES = frozenset({"text", "image", "audio", "video", "tabular"})

# Every legal edge touches the task hub; the user reaches only the hub.
LEGAL_EDGES: frozenset[tuple[AgentId, AgentId]] = frozenset(
    {
        (AgentId.USER, AgentId.TASK),
        (AgentId.TASK, AgentId.USER),
        (AgentId.TASK, AgentId.DATA),
        (AgentId.DATA, AgentId.TASK),
        (AgentId.TASK, AgentId.MODEL),
        (AgentId.MODEL, AgentId.TASK),
        (AgentId.TASK, AgentId.SERVER),
        (AgentId.SERVER, AgentId.TASK),
    }
)


class ProtocolError(Exception):
    """Base class for wire-level failures."""


class RoutingViolation(ProtocolError):
    """An envelope tried to use an edge outside the hub topology."""

    def __init__(self, sender: AgentId, recipient: AgentId) -> None:
        super().__init__(f"illegal edge {sender.value}->{recipient.value}")
        self.sender = sender
        self.recipient = recipient


@dataclass(frozen=True)
class SchemaError:
    """One schema violation: where it is and what is wrong."""

    path: str
    reason: str


class SchemaErrors(ProtocolError):
    """Carries every violation found in a document, not just the first."""

    def __init__(self, errors: Sequence[SchemaError]) -> None:
        super().__init__("; ".join(f"{e.path or '$'}: {e.reason}" for e in errors))
        self.errors = list(errors)


class DecodeError(ProtocolError):
    """Input bytes do not parse into a known document shape."""

    def __init__(self, offset: int, reason: str) -> None:
        super().__init__(f"decode failed at byte {offset}: {reason}")
        self.offset = offset
        self.reason = reason


def canonical_encode(doc: Any) -> bytes:
    """Encode a document tree as canonical JSON bytes.

    Canonical form sorts keys, drops insignificant whitespace, and keeps
    non-ASCII text unescaped in UTF-8. Structurally equal trees therefore
    encode to identical bytes.
    """
    text = json.dumps(
        doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    )
    return text.encode("utf-8")


def canonical_decode(data: bytes) -> Any:
    """Parse JSON bytes back into a document tree."""
    try:
        return json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise DecodeError(exc.start, "invalid UTF-8") from exc
    except json.JSONDecodeError as exc:
        raise DecodeError(exc.pos, exc.msg) from exc


def _expect_keys(doc: Any, keys: frozenset[str], what: str) -> None:
    if not isinstance(doc, dict):
        raise ValueError(f"{what} must be an object")
    if set(doc) != keys:
        parts = []
        missing = sorted(keys - set(doc))
        unknown = sorted(set(doc) - keys)
        if missing:
            parts.append("missing " + ", ".join(missing))
        if unknown:
            parts.append("unknown " + ", ".join(unknown))
        raise ValueError(f"{what}: " + "; ".join(parts))


def _require_count(value: Any, what: str) -> int:
    # bool is an int subclass; it is never a valid count on the wire
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ValueError(f"{what} must be a non-negative integer")
    return value


_ENVELOPE_KEYS = frozenset({"id", "session", "from", "to", "kind", "payload", "causality"})
_EVENT_KEYS = frozenset({"seq", "timestamp", "kind", "body"})


@dataclass(frozen=True)
class Envelope:
    """A routed message. `sender` and `recipient` appear as "from" and "to" on the wire."""

    id: int
    session: str
    sender: AgentId
    recipient: AgentId
    kind: EnvelopeKind
    payload: dict[str, Any] = field(default_factory=dict)
    causality: int | None = None

    def to_doc(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "session": self.session,
            "from": self.sender.value,
            "to": self.recipient.value,
            "kind": self.kind.value,
            "payload": self.payload,
            "causality": self.causality,
        }

    @classmethod
    def from_doc(cls, doc: Any) -> "Envelope":
        _expect_keys(doc, _ENVELOPE_KEYS, "envelope")
        if not isinstance(doc["session"], str) or not doc["session"]:
            raise ValueError("envelope session must be a non-empty string")
        if not isinstance(doc["payload"], dict):
            raise ValueError("envelope payload must be an object")
        causality = doc["causality"]
        if causality is not None:
            causality = _require_count(causality, "envelope causality")
        return cls(
            id=_require_count(doc["id"], "envelope id"),
            session=doc["session"],
            sender=AgentId(doc["from"]),
            recipient=AgentId(doc["to"]),
            kind=EnvelopeKind(doc["kind"]),
            payload=doc["payload"],
            causality=causality,
        )


@dataclass(frozen=True)
class Event:
    """One audit-log record. Timestamps are logical ticks, never wall clock."""

    seq: int
    timestamp: int
    kind: EventKind
    body: dict[str, Any] = field(default_factory=dict)

    def to_doc(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "timestamp": self.timestamp,
            "kind": self.kind.value,
            "body": self.body,
        }

    @classmethod
    def from_doc(cls, doc: Any) -> "Event":
        _expect_keys(doc, _EVENT_KEYS, "event")
        if not isinstance(doc["body"], dict):
            raise ValueError("event body must be an object")
        return cls(
            seq=_require_count(doc["seq"], "event seq"),
            timestamp=_require_count(doc["timestamp"], "event timestamp"),
            kind=EventKind(doc["kind"]),
            body=doc["body"],
        )


@dataclass(frozen=True)
class Constraint:
    """A single measurable requirement, e.g. accuracy_min 0.90."""

    metric: Metric
    value: int | float

    def to_doc(self) -> dict[str, Any]:
        return {"metric": self.metric.value, "value": self.value}


@dataclass(frozen=True)
class DeploymentSpec:
    """Where and how the finished model must be served."""

    platform: str
    qps_min: int | float
    container_mem_bytes: int
    target_format: str

    def to_doc(self) -> dict[str, Any]:
        return {
            "platform": self.platform,
            "qps_min": self.qps_min,
            "container_mem_bytes": self.container_mem_bytes,
            "target_format": self.target_format,
        }


@dataclass(frozen=True)
class TaskSpec:
    """Structured form of a user requirement.

    Only `task_type` is required on its own; a spec must also carry an
    objective or at least one constraint, otherwise there is nothing to
    build toward.
    """

    task_type: str
    modality: tuple[str, ...] = ()
    objective: str = ""
    constraints: tuple[Constraint, ...] = ()
    data_refs: tuple[str, ...] = ()
    deployment: DeploymentSpec | None = None
    raw_request: str = ""

    def to_doc(self) -> dict[str, Any]:
        return {
            "task_type": self.task_type,
            "modality": sorted(self.modality),
            "objective": self.objective,
            "constraints": [c.to_doc() for c in self.constraints],
            "data_refs": list(self.data_refs),
            "deployment": None if self.deployment is None else self.deployment.to_doc(),
            "raw_request": self.raw_request,
        }

    def constraint_value(self, metric: Metric) -> int | float | None:
        for c in self.constraints:
            if c.metric is metric:
                return c.value
        return None

    @classmethod
    def from_doc(cls, doc: Any) -> "TaskSpec":
        return validate_task_spec(doc)


def validate_envelope(env: Envelope) -> None:
    """Enforce the hub rule. Raises RoutingViolation naming the illegal edge."""
    if (env.sender, env.recipient) not in LEGAL_EDGES:
        raise RoutingViolation(env.sender, env.recipient)


_TASK_SPEC_KEYS = frozenset(
    {"task_type", "modality", "objective", "constraints", "data_refs", "deployment", "raw_request"}
)
_DEPLOYMENT_KEYS = frozenset({"platform", "qps_min", "container_mem_bytes", "target_format"})
_METRIC_NAMES = frozenset(m.value for m in Metric)


def _check_number(value: Any) -> str | None:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return "must be a number"
    if isinstance(value, float) and not math.isfinite(value):
        return "must be finite"
    return None


def _validate_constraint(item: Any, path: str, errors: list[SchemaError]) -> Constraint | None:
    if not isinstance(item, dict):
        errors.append(SchemaError(path, "must be an object"))
        return None
    # Accept both spellings: {"metric": m, "value": v} and the {m: v} shorthand.
    if set(item) == {"metric", "value"}:
        metric_name, value = item["metric"], item["value"]
    elif len(item) == 1 and next(iter(item)) in _METRIC_NAMES:
        metric_name, value = next(iter(item.items()))
    else:
        errors.append(SchemaError(path, "must be {metric, value} or a single metric:value pair"))
        return None
    if metric_name not in _METRIC_NAMES:
        errors.append(SchemaError(f"{path}.metric", f"unknown metric {metric_name!r}"))
        return None
    metric = Metric(metric_name)
    problem = _check_number(value)
    if problem:
        errors.append(SchemaError(f"{path}.value", problem))
        return None
    if value <= 0:
        errors.append(SchemaError(f"{path}.value", "must be > 0"))
        return None
    if metric is Metric.ACCURACY_MIN and value > 1:
        errors.append(SchemaError(f"{path}.value", "accuracy_min must be in (0, 1]"))
        return None
    if metric in INTEGER_METRICS and not isinstance(value, int):
        errors.append(SchemaError(f"{path}.value", f"{metric.value} must be a whole number"))
        return None
    return Constraint(metric=metric, value=value)


def _validate_deployment(doc: Any, errors: list[SchemaError]) -> DeploymentSpec | None:
    if not isinstance(doc, dict):
        errors.append(SchemaError("deployment", "must be an object or null"))
        return None
    ok = True
    for key in sorted(set(doc) - _DEPLOYMENT_KEYS):
        errors.append(SchemaError(f"deployment.{key}", "unknown field"))
        ok = False
    for key in sorted(_DEPLOYMENT_KEYS - set(doc)):
        errors.append(SchemaError(f"deployment.{key}", "required field is missing"))
        ok = False
    if not ok:
        return None
    platform, target_format = doc["platform"], doc["target_format"]
    qps_min, mem = doc["qps_min"], doc["container_mem_bytes"]
    if not isinstance(platform, str) or not platform:
        errors.append(SchemaError("deployment.platform", "must be a non-empty string"))
        ok = False
    if not isinstance(target_format, str) or not target_format:
        errors.append(SchemaError("deployment.target_format", "must be a non-empty string"))
        ok = False
    problem = _check_number(qps_min)
    if problem:
        errors.append(SchemaError("deployment.qps_min", problem))
        ok = False
    elif qps_min < 0:
        errors.append(SchemaError("deployment.qps_min", "must be >= 0"))
        ok = False
    if isinstance(mem, bool) or not isinstance(mem, int) or mem <= 0:
        errors.append(SchemaError("deployment.container_mem_bytes", "must be a positive whole number"))
        ok = False
    if not ok:
        return None
    return DeploymentSpec(
        platform=platform, qps_min=qps_min, container_mem_bytes=mem, target_format=target_format
    )


def validate_task_spec(doc: Any) -> TaskSpec:
    """Validate a document tree into a TaskSpec.

    Collects every violation before failing, so a repair loop can fix a
    malformed document in one round instead of rediscovering errors one
    at a time. Raises SchemaErrors; the list order follows document
    reading order with cross-field checks last.
    """
    if not isinstance(doc, dict):
        raise SchemaErrors([SchemaError("", "document must be an object")])
    errors: list[SchemaError] = []
    for key in sorted(set(doc) - _TASK_SPEC_KEYS):
        errors.append(SchemaError(key, "unknown field"))

    task_type = doc.get("task_type")
    if task_type is None:
        errors.append(SchemaError("task_type", "required field is missing"))
        task_type = ""
    elif not isinstance(task_type, str) or not task_type:
        errors.append(SchemaError("task_type", "must be a non-empty string"))
        task_type = ""

    modality: list[str] = []
    raw_modality = doc.get("modality", [])
    if not isinstance(raw_modality, list):
        errors.append(SchemaError("modality", "must be an array"))
    else:
        for i, item in enumerate(raw_modality):
            if item not in MODALITIES:
                errors.append(SchemaError(f"modality[{i}]", f"unknown modality {item!r}"))
            elif item in modality:
                errors.append(SchemaError(f"modality[{i}]", f"duplicate modality {item!r}"))
            else:
                modality.append(item)

    objective = doc.get("objective", "")
    if not isinstance(objective, str):
        errors.append(SchemaError("objective", "must be a string"))
        objective = ""
    raw_request = doc.get("raw_request", "")
    if not isinstance(raw_request, str):
        errors.append(SchemaError("raw_request", "must be a string"))
        raw_request = ""

    constraints: list[Constraint] = []
    raw_constraints = doc.get("constraints", [])
    if not isinstance(raw_constraints, list):
        errors.append(SchemaError("constraints", "must be an array"))
        raw_constraints = []
    else:
        for i, item in enumerate(raw_constraints):
            parsed = _validate_constraint(item, f"constraints[{i}]", errors)
            if parsed is not None:
                constraints.append(parsed)
    seen: set[Metric] = set()
    for i, c in enumerate(constraints):
        if c.metric in seen:
            errors.append(SchemaError(f"constraints[{i}]", f"duplicate metric {c.metric.value}"))
        seen.add(c.metric)

    data_refs: list[str] = []
    raw_refs = doc.get("data_refs", [])
    if not isinstance(raw_refs, list):
        errors.append(SchemaError("data_refs", "must be an array"))
    else:
        for i, ref in enumerate(raw_refs):
            if not isinstance(ref, str) or not ref:
                errors.append(SchemaError(f"data_refs[{i}]", "must be a non-empty string"))
            else:
                data_refs.append(ref)

    deployment = None
    raw_dep = doc.get("deployment")
    if raw_dep is not None:
        deployment = _validate_deployment(raw_dep, errors)

    if not objective and not raw_constraints:
        errors.append(SchemaError("", "at least one of objective or constraints must be non-empty"))

    if errors:
        raise SchemaErrors(errors)
    return TaskSpec(
        task_type=task_type,
        modality=tuple(sorted(modality)),
        objective=objective,
        constraints=tuple(constraints),
        data_refs=tuple(data_refs),
        deployment=deployment,
        raw_request=raw_request,
    )


def encode(obj: Envelope | Event) -> bytes:
    """Serialize an Envelope or Event to canonical bytes."""
    return canonical_encode(obj.to_doc())


def decode(data: bytes) -> Envelope | Event:
    """Parse canonical bytes into an Envelope or Event.

    The two shapes are disjoint: events carry `seq`, envelopes carry
    `from`. Raises DecodeError for anything else.
    """
    doc = canonical_decode(data)
    if not isinstance(doc, dict):
        raise DecodeError(0, "top-level document must be an object")
    try:
        if "seq" in doc:
            return Event.from_doc(doc)
        return Envelope.from_doc(doc)
    except ValueError as exc:
        raise DecodeError(0, str(exc)) from exc
