"""Scenario files: a session in a box.

A scenario YAML names the requirement, the tool packs and registries to
load, the scripted gateway replies, and the user interactions to play
when the session parks itself waiting for input. Running one is fully
deterministic, which is what makes byte-identical replays a meaningful
check rather than a lucky one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .agents.data import load_kb, load_sufficiency_policy
from .agents.model import load_model_registry
from .agents.server import load_conversion_graph
from .agents.task import load_policy_rules
from .gateway import (
    Backend,
    CompletionRequest,
    FixtureError,
    RecordingBackend,
    Script,
    ScriptedBackend,
)
from .protocol import AgentId, EventKind
from .runtime import LatencyFn, load_profile, load_sop
from .session import Session, SessionConfig, SessionState
from .toolbox import FaultingRegistry, ToolRegistry, load_fixture_pack


class ScenarioError(Exception):
    pass


@dataclass(frozen=True)
class Interaction:
    when: str  # insufficient | approval | clarification
    action: str  # upload | approve | reject | reply
    file: str | None = None
    text: str | None = None


@dataclass(frozen=True)
class FaultSpec:
    tool_id: str
    failures: int


@dataclass(frozen=True)
class Scenario:
    name: str
    requirement: str
    gateway: dict[str, Any]
    script: str | None
    config: dict[str, Any]
    interactions: tuple[Interaction, ...] = ()
    expect: dict[str, Any] = field(default_factory=dict)


def load_scenario(path: str | Path) -> Scenario:
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path}: scenario must be a mapping")
    for key in ("name", "requirement", "config"):
        if key not in doc:
            raise ScenarioError(f"{path}: missing {key!r}")
    interactions = tuple(
        Interaction(
            when=item["when"],
            action=item["action"],
            file=item.get("file"),
            text=item.get("text"),
        )
        for item in doc.get("interactions", [])
    )
    return Scenario(
        name=doc["name"],
        requirement=doc["requirement"].strip(),
        gateway=doc.get("gateway", {}),
        script=doc.get("script"),
        config=doc["config"],
        interactions=interactions,
        expect=doc.get("expect", {}),
    )


class OracleBackend:
    """Tag-keyed canned replies, used to record scenario scripts.

    The parse reply echoes the scenario requirement as raw_request, the
    way a faithful extraction would.
    """

    def __init__(self, scenario: Scenario) -> None:
        self._scenario = scenario

    def complete(self, req: CompletionRequest) -> str:
        gateway = self._scenario.gateway
        if req.tag == "parse":
            spec_doc = dict(gateway.get("parse", {}))
            if not spec_doc:
                raise FixtureError(f"scenario {self._scenario.name} has no parse reply")
            spec_doc["raw_request"] = self._scenario.requirement
            return json.dumps(spec_doc, sort_keys=True, ensure_ascii=False)
        if req.tag in gateway:
            return str(gateway[req.tag])
        raise FixtureError(f"scenario {self._scenario.name}: no reply for tag {req.tag!r}")


_AGENT_FILES = ("task", "data", "model", "server")


def build_config(
    scenario: Scenario,
    root: Path,
    *,
    session_id: str | None = None,
    latency: LatencyFn | None = None,
    fault: FaultSpec | None = None,
    dispatch_budget: int | None = None,
) -> SessionConfig:
    """Load everything a scenario references, except the gateway backend
    (the caller picks scripted, oracle, recording, or live)."""
    cfg = scenario.config
    registry: ToolRegistry | FaultingRegistry = ToolRegistry()
    for pack in cfg.get("packs", []):
        load_fixture_pack(root / pack, registry)
    if fault is not None:
        registry = FaultingRegistry(registry, fault.tool_id, fault.failures)

    sops = {}
    sops_dir = cfg.get("sops_dir")
    if sops_dir:
        for name in _AGENT_FILES:
            path = root / sops_dir / f"{name}.json"
            if path.exists():
                sops[name] = load_sop(path)
    profiles = []
    profiles_dir = cfg.get("profiles_dir")
    if profiles_dir:
        for name in _AGENT_FILES:
            path = root / profiles_dir / f"{name}.txt"
            if path.exists():
                profiles.append(load_profile(path, AgentId(name)))

    config = SessionConfig(
        session_id=session_id or f"sess-{scenario.name}",
        backend=None,  # type: ignore[arg-type]  # set by the caller before Session()
        registry=registry,
        model_cards=load_model_registry(root / cfg["models"]),
        conversion_graph=load_conversion_graph(root / cfg["converters"]),
        sufficiency=load_sufficiency_policy(root / cfg["sufficiency"]),
        policy_rules=load_policy_rules(root / cfg["rules"]),
        kb=load_kb(root / cfg["kb"]),
        data_root=root,
        collect_n=cfg.get("collect_n", 0),
        augment_factor=cfg.get("augment_factor", 1),
        test_size=cfg.get("test_size", 50),
        retune_budget=cfg.get("retune_budget", 2),
        replan_cap=cfg.get("replan_cap", 3),
        latency=latency,
        dispatch_budget=dispatch_budget or cfg.get("dispatch_budget", 10_000),
        sops=sops,
        profiles=tuple(profiles),
    )
    return config


def _pending_kind(session: Session) -> str:
    if session.task.pending_clarification:
        return "clarification"
    if any(not a.resolved for a in session.approvals.values()):
        return "approval"
    if session.task.pending_upload is not None:
        return "insufficient"
    return "nothing"


def _apply_interaction(session: Session, item: Interaction, root: Path) -> None:
    if item.action == "upload":
        if not item.file:
            raise ScenarioError("upload interaction needs a file")
        path = root / item.file
        session.upload_dataset(path.name, path.read_text(encoding="utf-8"))
        return
    if item.action in ("approve", "reject"):
        unresolved = [a for a in session.approvals.values() if not a.resolved]
        if not unresolved:
            raise ScenarioError("no unresolved approval to act on")
        session.resolve_approval(unresolved[0].approval_id, item.action == "approve")
        return
    if item.action == "reply":
        if item.text is None:
            raise ScenarioError("reply interaction needs text")
        session.post_message(item.text)
        return
    raise ScenarioError(f"unknown interaction action {item.action!r}")


def run_scenario(
    scenario: Scenario,
    root: Path,
    *,
    backend: Backend | None = None,
    record_to: Path | None = None,
    session_id: str | None = None,
    latency: LatencyFn | None = None,
    fault: FaultSpec | None = None,
    dispatch_budget: int | None = None,
) -> Session:
    """Run a scenario to quiescence, playing interactions as they come due."""
    config = build_config(
        scenario,
        root,
        session_id=session_id,
        latency=latency,
        fault=fault,
        dispatch_budget=dispatch_budget,
    )
    chosen = backend
    if chosen is None:
        if not scenario.script:
            raise ScenarioError(f"scenario {scenario.name} has no script and no backend was given")
        chosen = ScriptedBackend(Script.load(root / scenario.script))
    if record_to is not None:
        record_to.parent.mkdir(parents=True, exist_ok=True)
        if record_to.exists():
            record_to.unlink()
        chosen = RecordingBackend(chosen, record_to)
    config.backend = chosen
    session = Session(config)
    session.start(scenario.requirement)

    queue = list(scenario.interactions)
    rounds = 0
    while session.state is SessionState.AWAITING_USER and queue:
        rounds += 1
        if rounds > 50:
            raise ScenarioError(f"scenario {scenario.name}: interaction loop did not converge")
        need = _pending_kind(session)
        item = queue.pop(0)
        if item.when != need:
            raise ScenarioError(
                f"scenario {scenario.name}: session waits on {need!r}, "
                f"next interaction answers {item.when!r}"
            )
        _apply_interaction(session, item, root)
    return session


def record_script(scenario: Scenario, root: Path) -> Path:
    """Record the scenario's gateway transcript from its oracle replies."""
    if not scenario.script:
        raise ScenarioError(f"scenario {scenario.name} names no script path")
    out = root / scenario.script
    run_scenario(scenario, root, backend=OracleBackend(scenario), record_to=out)
    return out


def check_expectations(session: Session, expect: dict[str, Any]) -> list[str]:
    """Compare a finished session against a scenario's expect block."""
    problems = []
    if "outcome" in expect:
        terminals = session.events.of_kind(EventKind.TERMINAL)
        if not terminals:
            problems.append("no terminal event was emitted")
        elif terminals[0].body["outcome"] != expect["outcome"]:
            problems.append(
                f"outcome {terminals[0].body['outcome']!r}, expected {expect['outcome']!r}"
            )
    finished = {
        e.body["step_id"]: e.body
        for e in session.events.of_kind(EventKind.STEP_FINISHED)
        if e.body["status"] == "done"
    }
    if "containers" in expect:
        estimates = [b for sid, b in finished.items() if sid.startswith("estimate")]
        if not estimates:
            problems.append("no finished estimate step")
        elif estimates[-1]["output"]["containers"] != expect["containers"]:
            problems.append(
                f"containers {estimates[-1]['output']['containers']}, "
                f"expected {expect['containers']}"
            )
    if "accuracy" in expect:
        evals = [b for sid, b in finished.items() if sid.startswith("evaluate")]
        if not evals:
            problems.append("no finished evaluate step")
        else:
            got = evals[-1]["output"]["report"]["metrics"]["accuracy"]
            if got != expect["accuracy"]:
                problems.append(f"accuracy {got}, expected {expect['accuracy']}")
    if "dataset_count" in expect:
        prepares = [b for sid, b in finished.items() if sid.startswith("prepare")]
        if not prepares:
            problems.append("no finished prepare step")
        elif prepares[-1]["output"]["count"] != expect["dataset_count"]:
            problems.append(
                f"dataset count {prepares[-1]['output']['count']}, "
                f"expected {expect['dataset_count']}"
            )
    return problems


def replay_verify(
    scenario: Scenario, root: Path, runs: int = 2
) -> tuple[bool, list[bytes]]:
    """Run the scenario `runs` times; True when every event log is identical."""
    logs = []
    for _ in range(max(2, runs)):
        session = run_scenario(scenario, root)
        logs.append(session.events.to_jsonl())
    return all(log == logs[0] for log in logs[1:]), logs
