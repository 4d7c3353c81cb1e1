"""Task agent: requirement intake, policy screening, feasibility, planning.

The task agent is the hub. It turns free-form user text into a typed
task specification (with a bounded repair loop when the language model
returns a malformed document), refuses disallowed work before any other
agent or tool is touched, judges feasibility against the model registry
and available data, and lays out the global step plan the spokes run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from ..gateway import Backend, ChatTurn, CompletionRequest, GatewayError, Role, complete
from ..protocol import AgentId, SchemaErrors, TaskSpec, validate_task_spec
from ..runtime import Plan, PlanStep, StepStatus
from .model import ModelCard, NoCandidate, select_model

MAX_PARSE_ROUNDS = 3

# what the task agent asks the user to do when resources run out, and the
# reason it reports if they decline
INTERVENTION_ASK = "manually annotate data"
CANNOT_FULFILL_REASON = "lack of available resources and training data"
POLICY_UNAVAILABLE_REASON = "policy check unavailable"

PARSE_SYSTEM_PROMPT = (
    "You turn model-development requests into task specifications. "
    "Reply with a single JSON object holding task_type, modality, objective, "
    "constraints, data_refs, deployment, and raw_request. If the request is "
    "coherent but missing information you need, reply with a JSON object "
    'holding a single "clarification" key instead. No prose.'
)

POLICY_SYSTEM_PROMPT = (
    "You review model-development requests for safety and compliance. "
    'Reply exactly "allow" to approve, or "refuse: <reason>" to reject. No prose.'
)

FEASIBILITY_SYSTEM_PROMPT = (
    "You judge whether a model-development request is feasible with the stated "
    'resources. Reply exactly "feasible", "infeasible: <reason>", or '
    '"intervene: <what the user must provide>". No prose.'
)


class TaskAgentError(Exception):
    pass


class EmptyRequirement(TaskAgentError):
    pass


class RepairExhausted(TaskAgentError):
    """The language model never produced a valid specification."""

    def __init__(self, rounds: int, last_errors: list[str]) -> None:
        super().__init__(f"gave up after {rounds} rounds: {'; '.join(last_errors)}")
        self.rounds = rounds
        self.last_errors = last_errors


class UnknownStep(TaskAgentError):
    pass


@dataclass(frozen=True)
class Clarification:
    question: str


def _repair_message(errors: SchemaErrors) -> str:
    listed = "; ".join(f"{e.path or '(root)'}: {e.reason}" for e in errors.errors)
    return f"That specification was invalid: {listed}. Reply with the corrected JSON only."


def parse_requirement(
    raw: str, backend: Backend, max_rounds: int = MAX_PARSE_ROUNDS
) -> tuple[TaskSpec | Clarification, int]:
    """Turn user text into a TaskSpec, repairing malformed model output.

    Bad user input and bad model output are different problems: a coherent
    but underspecified request comes back as a Clarification for the user,
    while an invalid document from the model triggers a repair round with
    the validation errors quoted. Returns the result and rounds spent.
    """
    if not raw.strip():
        raise EmptyRequirement("requirement text is empty")
    turns = [
        ChatTurn(Role.SYSTEM, PARSE_SYSTEM_PROMPT),
        ChatTurn(Role.USER, raw),
    ]
    last_errors = ["model reply was not JSON"]
    for round_number in range(1, max_rounds + 1):
        reply = complete(backend, CompletionRequest(turns=tuple(turns), tag="parse"))
        problem: str | None = None
        try:
            doc = json.loads(reply)
        except json.JSONDecodeError as exc:
            problem = f"reply was not JSON: {exc.msg}"
            last_errors = [problem]
        else:
            if isinstance(doc, dict) and set(doc) == {"clarification"}:
                return Clarification(str(doc["clarification"])), round_number
            try:
                return validate_task_spec(doc), round_number
            except SchemaErrors as exc:
                problem = _repair_message(exc)
                last_errors = [f"{e.path or '(root)'}: {e.reason}" for e in exc.errors]
        turns.append(ChatTurn(Role.ASSISTANT, reply))
        turns.append(
            ChatTurn(
                Role.USER,
                problem
                if problem.startswith("That specification")
                else f"That reply was invalid: {problem}. Reply with JSON only.",
            )
        )
    raise RepairExhausted(max_rounds, last_errors)


@dataclass(frozen=True)
class PolicyRule:
    rule_id: str
    pattern: str
    reason: str


def load_policy_rules(path: str | Path) -> list[PolicyRule]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    rules = [
        PolicyRule(rule_id=item["id"], pattern=item["pattern"], reason=item["reason"])
        for item in doc["rules"]
    ]
    return sorted(rules, key=lambda r: r.rule_id)


@dataclass(frozen=True)
class PolicyDecision:
    allowed: bool
    reason: str = ""
    rule_id: str | None = None
    source: str = "deny_list"  # deny_list | gateway | unavailable


def screen_policy(
    spec: TaskSpec, rules: Sequence[PolicyRule], backend: Backend
) -> PolicyDecision:
    """Deny-list first, then a model judgment; fail closed if that breaks.

    The deny list runs in rule-id order before any gateway traffic, so a
    refused request provably never reached the language model.
    """
    haystack = f"{spec.raw_request}\n{spec.objective}".lower()
    for rule in sorted(rules, key=lambda r: r.rule_id):
        if rule.pattern.lower() in haystack:
            return PolicyDecision(False, rule.reason, rule.rule_id, "deny_list")
    try:
        reply = complete(
            backend,
            CompletionRequest(
                turns=(
                    ChatTurn(Role.SYSTEM, POLICY_SYSTEM_PROMPT),
                    ChatTurn(Role.USER, spec.raw_request or spec.objective),
                ),
                tag="policy",
            ),
        ).strip()
    except GatewayError:
        return PolicyDecision(False, POLICY_UNAVAILABLE_REASON, None, "unavailable")
    if reply.lower() == "allow":
        return PolicyDecision(True, source="gateway")
    if reply.lower().startswith("refuse"):
        _, _, reason = reply.partition(":")
        return PolicyDecision(False, reason.strip() or "refused by policy model", None, "gateway")
    return PolicyDecision(False, POLICY_UNAVAILABLE_REASON, None, "unavailable")


@dataclass(frozen=True)
class Feasibility:
    verdict: str  # feasible | needs_intervention | infeasible
    ask: str = ""
    reason: str = ""
    model_available: bool = True
    data_available: bool = True


def assess_feasibility(
    spec: TaskSpec,
    cards: Sequence[ModelCard],
    have_dataset: bool,
    backend: Backend | None = None,
) -> Feasibility:
    """Rule ladder: model inventory, then data, then a model judgment.

    Clear-cut cases never touch the gateway: both resources present is
    feasible, both absent needs the user to step in. Only the mixed cases
    ask the language model, and an unusable judgment degrades to asking
    the user rather than guessing.
    """
    try:
        select_model(cards, spec)
        model_ok = True
    except NoCandidate:
        model_ok = False
    if model_ok and have_dataset:
        return Feasibility("feasible")
    if not model_ok and not have_dataset:
        return Feasibility(
            "needs_intervention",
            ask=INTERVENTION_ASK,
            model_available=False,
            data_available=False,
        )
    if backend is None:
        return Feasibility(
            "needs_intervention",
            ask=INTERVENTION_ASK,
            model_available=model_ok,
            data_available=have_dataset,
        )
    try:
        reply = complete(
            backend,
            CompletionRequest(
                turns=(
                    ChatTurn(Role.SYSTEM, FEASIBILITY_SYSTEM_PROMPT),
                    ChatTurn(
                        Role.USER,
                        json.dumps(
                            {
                                "task_type": spec.task_type,
                                "model_available": model_ok,
                                "data_available": have_dataset,
                            },
                            sort_keys=True,
                        ),
                    ),
                ),
                tag="feasibility",
            ),
        ).strip()
    except GatewayError:
        reply = ""
    lowered = reply.lower()
    if lowered == "feasible":
        return Feasibility("feasible", model_available=model_ok, data_available=have_dataset)
    if lowered.startswith("infeasible"):
        _, _, reason = reply.partition(":")
        return Feasibility(
            "infeasible",
            reason=reason.strip() or CANNOT_FULFILL_REASON,
            model_available=model_ok,
            data_available=have_dataset,
        )
    if lowered.startswith("intervene"):
        _, _, ask = reply.partition(":")
        return Feasibility(
            "needs_intervention",
            ask=ask.strip() or INTERVENTION_ASK,
            model_available=model_ok,
            data_available=have_dataset,
        )
    return Feasibility(
        "needs_intervention",
        ask=INTERVENTION_ASK,
        model_available=model_ok,
        data_available=have_dataset,
    )


GLOBAL_PLAN_LAYOUT: tuple[tuple[str, AgentId, str], ...] = (
    ("prepare-data", AgentId.DATA, "prepare"),
    ("train-model", AgentId.MODEL, "train"),
    ("evaluate-model", AgentId.MODEL, "evaluate"),
    ("convert-format", AgentId.SERVER, "convert"),
    ("estimate-capacity", AgentId.SERVER, "estimate"),
    ("deploy-service", AgentId.SERVER, "deploy"),
    ("document-interface", AgentId.SERVER, "document"),
)


def make_global_plan(spec: TaskSpec) -> Plan:
    """The standard prepare/train/evaluate/serve pipeline, data to docs."""
    steps = []
    for step_id, owner, action in GLOBAL_PLAN_LAYOUT:
        params: dict[str, Any] = {}
        if action == "convert" and spec.deployment is not None:
            params["target_format"] = spec.deployment.target_format
        steps.append(PlanStep(step_id=step_id, owner=owner, action=action, params=params))
    return Plan(tuple(steps))


def replacement_steps(
    plan: Plan, failed_step_id: str, replacements: Sequence[PlanStep]
) -> list[PlanStep]:
    """New step list with one failed step swapped for its replacements.

    Completed steps ride along untouched (revise_plan enforces that they
    stay byte-identical); steps after the failure keep their place.
    """
    found = False
    steps: list[PlanStep] = []
    for step in plan.steps:
        if step.step_id == failed_step_id:
            if step.status is not StepStatus.FAILED:
                raise TaskAgentError(f"step {failed_step_id} is {step.status.value}, not failed")
            steps.extend(replacements)
            found = True
        else:
            steps.append(step)
    if not found:
        raise UnknownStep(failed_step_id)
    return steps


def retry_step(step: PlanStep, attempt: int, extra_params: dict[str, Any] | None = None) -> PlanStep:
    params = dict(step.params)
    if extra_params:
        params.update(extra_params)
    return PlanStep(
        step_id=f"{step.step_id}-r{attempt}",
        owner=step.owner,
        action=step.action,
        params=params,
    )


def escalation_steps(plan: Plan, failed_eval_id: str, attempt: int) -> list[PlanStep]:
    """After a failed evaluation: retrain escalated, then re-evaluate.

    A plain retry may already have claimed train-model-r1, so the attempt
    number is bumped past any step id the plan is using.
    """
    failed = plan.step(failed_eval_id)
    taken = {s.step_id for s in plan.steps}
    while f"train-model-r{attempt}" in taken or f"{failed_eval_id}-r{attempt}" in taken:
        attempt += 1
    train_retry = PlanStep(
        step_id=f"train-model-r{attempt}",
        owner=AgentId.MODEL,
        action="train",
        params={"escalation": True},
    )
    eval_retry = retry_step(failed, attempt)
    return replacement_steps(plan, failed_eval_id, [train_retry, eval_retry])
