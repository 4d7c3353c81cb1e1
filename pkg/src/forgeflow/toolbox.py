"""Uniform contract for every external capability.

A tool is either an in-process fixture (a named behavior parameterized
by pack config) or a subprocess. Subprocess tools receive canonical
JSON on stdin and must emit canonical JSON on stdout with exit code 0;
nonzero exit, invalid JSON, or output violating the declared schema all
surface as status=error, never as a crash. Wall-clock timeouts apply to
subprocess tools; fixtures run in-process and are trusted to be fast.

Tool packs are JSON files shaped {"tools": [descriptor, ...]}; schema
refs inside a pack resolve relative to the pack file's directory.
"""

from __future__ import annotations

import enum
import hashlib
import json
import subprocess
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import jsonschema

from .protocol import canonical_encode

LOG_EXCERPT_BYTES = 4096


class ToolKind(str, enum.Enum):
    COLLECTOR = "collector"
    CLEANER = "cleaner"
    CORRECTOR = "corrector"
    ANNOTATOR = "annotator"
    AUGMENTER = "augmenter"
    TRAINER = "trainer"
    COMPRESSOR = "compressor"
    CONVERTER = "converter"
    PLATFORM = "platform"
    SEARCH = "search"
    BENCHMARK = "benchmark"


class ToolStatus(str, enum.Enum):
    OK = "ok"
    ERROR = "error"
    TIMEOUT = "timeout"


class ToolboxError(Exception):
    """Base class for registry-level failures."""


class UnknownTool(ToolboxError):
    pass


class InputSchemaViolation(ToolboxError):
    pass


class DuplicateId(ToolboxError):
    pass


class SchemaMissing(ToolboxError):
    pass


class PackError(ToolboxError):
    """A tool pack file is malformed."""


class ToolFault(Exception):
    """Raised inside fixture behaviors to signal a tool-level failure."""


@dataclass(frozen=True)
class Runner:
    """How a tool executes: exactly one of fixture or command is set."""

    fixture: str | None = None
    config: dict[str, Any] = field(default_factory=dict)
    command: tuple[str, ...] | None = None

    @classmethod
    def from_doc(cls, doc: Any) -> "Runner":
        if not isinstance(doc, dict):
            raise PackError("exec must be an object")
        if "fixture" in doc and "command" not in doc:
            return cls(fixture=doc["fixture"], config=doc.get("config", {}))
        if "command" in doc and "fixture" not in doc:
            command = doc["command"]
            if not isinstance(command, list) or not command:
                raise PackError("exec.command must be a non-empty list")
            return cls(command=tuple(command))
        raise PackError("exec needs exactly one of fixture/command")


@dataclass(frozen=True)
class ToolDescriptor:
    tool_id: str
    kind: ToolKind
    runner: Runner
    timeout_ms: int
    input_schema: str
    output_schema: str

    @classmethod
    def from_doc(cls, doc: Any) -> "ToolDescriptor":
        if not isinstance(doc, dict):
            raise PackError("tool descriptor must be an object")
        try:
            desc = cls(
                tool_id=doc["tool_id"],
                kind=ToolKind(doc["kind"]),
                runner=Runner.from_doc(doc["exec"]),
                timeout_ms=doc["timeout_ms"],
                input_schema=doc["input_schema"],
                output_schema=doc["output_schema"],
            )
        except KeyError as exc:
            raise PackError(f"tool descriptor missing field {exc.args[0]}") from exc
        except ValueError as exc:
            raise PackError(str(exc)) from exc
        if not isinstance(desc.timeout_ms, int) or desc.timeout_ms <= 0:
            raise PackError(f"{desc.tool_id}: timeout_ms must be a positive integer")
        return desc


@dataclass(frozen=True)
class ToolResult:
    status: ToolStatus
    payload: dict[str, Any] | None
    log_excerpt: str = ""

    @property
    def ok(self) -> bool:
        return self.status is ToolStatus.OK


@dataclass(frozen=True)
class FixtureContext:
    """What a fixture behavior sees: its pack config plus the pack directory."""

    config: dict[str, Any]
    base_dir: Path

    def load_json(self, ref: str) -> Any:
        return json.loads((self.base_dir / ref).read_text(encoding="utf-8"))


def payload_digest(payload: Any) -> str:
    return hashlib.sha256(canonical_encode(payload)).hexdigest()[:16]


def _excerpt(text: str) -> str:
    data = text.encode("utf-8", errors="replace")[-LOG_EXCERPT_BYTES:]
    return data.decode("utf-8", errors="replace")


@dataclass
class _Registered:
    descriptor: ToolDescriptor
    base_dir: Path
    input_schema: dict[str, Any]
    output_schema: dict[str, Any]


# invocation observer: (tool_id, payload digest, status value)
InvokeObserver = Callable[[str, str, str], None]


class ToolRegistry:
    """Holds registered tools and runs them under the uniform contract."""

    def __init__(self) -> None:
        self._tools: dict[str, _Registered] = {}
        self.on_invoke: InvokeObserver | None = None

    def __contains__(self, tool_id: str) -> bool:
        return tool_id in self._tools

    def ids(self) -> list[str]:
        return sorted(self._tools)

    def descriptor(self, tool_id: str) -> ToolDescriptor:
        entry = self._tools.get(tool_id)
        if entry is None:
            raise UnknownTool(tool_id)
        return entry.descriptor

    def by_kind(self, kind: ToolKind) -> list[str]:
        return sorted(t for t, e in self._tools.items() if e.descriptor.kind is kind)

    def register(self, descriptor: ToolDescriptor, base_dir: str | Path = ".") -> None:
        if descriptor.tool_id in self._tools:
            raise DuplicateId(descriptor.tool_id)
        base = Path(base_dir)
        schemas = []
        for ref in (descriptor.input_schema, descriptor.output_schema):
            path = base / ref
            if not path.is_file():
                raise SchemaMissing(f"{descriptor.tool_id}: schema file {path} not found")
            schema = json.loads(path.read_text(encoding="utf-8"))
            jsonschema.Draft202012Validator.check_schema(schema)
            schemas.append(schema)
        if descriptor.runner.fixture is not None and descriptor.runner.fixture not in FIXTURES:
            raise PackError(f"{descriptor.tool_id}: unknown fixture {descriptor.runner.fixture!r}")
        self._tools[descriptor.tool_id] = _Registered(
            descriptor=descriptor,
            base_dir=base,
            input_schema=schemas[0],
            output_schema=schemas[1],
        )

    def invoke(
        self, tool_id: str, payload: dict[str, Any], timeout_ms: int | None = None
    ) -> ToolResult:
        entry = self._tools.get(tool_id)
        if entry is None:
            raise UnknownTool(tool_id)
        try:
            jsonschema.validate(payload, entry.input_schema)
        except jsonschema.ValidationError as exc:
            raise InputSchemaViolation(f"{tool_id}: {exc.message}") from exc

        if entry.descriptor.runner.fixture is not None:
            result = self._run_fixture(entry, payload)
        else:
            result = self._run_subprocess(entry, payload, timeout_ms)

        if result.status is ToolStatus.OK:
            validator = jsonschema.Draft202012Validator(entry.output_schema)
            problems = sorted(validator.iter_errors(result.payload), key=lambda e: list(e.path))
            if problems:
                reasons = "; ".join(e.message for e in problems)
                result = ToolResult(ToolStatus.ERROR, None, _excerpt(f"output schema: {reasons}"))
        if self.on_invoke is not None:
            self.on_invoke(tool_id, payload_digest(payload), result.status.value)
        return result

    def _run_fixture(self, entry: _Registered, payload: dict[str, Any]) -> ToolResult:
        behavior = FIXTURES[entry.descriptor.runner.fixture]
        ctx = FixtureContext(config=entry.descriptor.runner.config, base_dir=entry.base_dir)
        try:
            return ToolResult(ToolStatus.OK, behavior(ctx, payload))
        except ToolFault as exc:
            return ToolResult(ToolStatus.ERROR, None, _excerpt(str(exc)))
        except Exception:
            return ToolResult(ToolStatus.ERROR, None, _excerpt(traceback.format_exc()))

    def _run_subprocess(
        self, entry: _Registered, payload: dict[str, Any], timeout_ms: int | None
    ) -> ToolResult:
        limit = (timeout_ms or entry.descriptor.timeout_ms) / 1000.0
        try:
            proc = subprocess.run(
                list(entry.descriptor.runner.command),
                input=canonical_encode(payload),
                capture_output=True,
                timeout=limit,
            )
        except subprocess.TimeoutExpired as exc:
            stderr = exc.stderr.decode("utf-8", errors="replace") if exc.stderr else ""
            return ToolResult(ToolStatus.TIMEOUT, None, _excerpt(stderr))
        except OSError as exc:
            return ToolResult(ToolStatus.ERROR, None, _excerpt(str(exc)))
        stderr = proc.stderr.decode("utf-8", errors="replace")
        if proc.returncode != 0:
            return ToolResult(
                ToolStatus.ERROR, None, _excerpt(stderr or f"exit code {proc.returncode}")
            )
        try:
            out = json.loads(proc.stdout.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            return ToolResult(ToolStatus.ERROR, None, _excerpt(f"stdout not JSON: {exc}\n{stderr}"))
        if not isinstance(out, dict):
            return ToolResult(ToolStatus.ERROR, None, _excerpt("stdout must be a JSON object"))
        return ToolResult(ToolStatus.OK, out, _excerpt(stderr))


def load_fixture_pack(path: str | Path, registry: ToolRegistry | None = None) -> ToolRegistry:
    """Load one pack file into a registry (a fresh one unless given)."""
    registry = registry or ToolRegistry()
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise PackError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("tools"), list):
        raise PackError(f"{path}: pack must be an object with a tools list")
    for item in doc["tools"]:
        registry.register(ToolDescriptor.from_doc(item), base_dir=path.parent)
    return registry


class FaultingRegistry:
    """Registry wrapper that fails the first N invocations of one tool.

    Exists for liveness tests: a step owning the faulted tool fails,
    the planner revises, and the retry goes through once the budget of
    injected failures is spent.
    """

    def __init__(self, inner: ToolRegistry, tool_id: str, failures: int) -> None:
        self._inner = inner
        self._tool_id = tool_id
        self._remaining = failures

    @property
    def on_invoke(self) -> InvokeObserver | None:
        return self._inner.on_invoke

    @on_invoke.setter
    def on_invoke(self, observer: InvokeObserver | None) -> None:
        self._inner.on_invoke = observer

    def __contains__(self, tool_id: str) -> bool:
        return tool_id in self._inner

    def ids(self) -> list[str]:
        return self._inner.ids()

    def descriptor(self, tool_id: str) -> ToolDescriptor:
        return self._inner.descriptor(tool_id)

    def by_kind(self, kind: ToolKind) -> list[str]:
        return self._inner.by_kind(kind)

    def invoke(
        self, tool_id: str, payload: dict[str, Any], timeout_ms: int | None = None
    ) -> ToolResult:
        if tool_id == self._tool_id and self._remaining > 0:
            self._remaining -= 1
            result = ToolResult(ToolStatus.ERROR, None, "injected fault")
            if self._inner.on_invoke is not None:
                self._inner.on_invoke(tool_id, payload_digest(payload), result.status.value)
            return result
        return self._inner.invoke(tool_id, payload, timeout_ms)


def _fx_echo(ctx: FixtureContext, payload: dict[str, Any]) -> dict[str, Any]:
    return payload


def _fx_stopword_cleaner(ctx: FixtureContext, payload: dict[str, Any]) -> dict[str, Any]:
    from .agents.data import remove_stopwords  # late import: agents.data imports toolbox

    stopwords = ctx.config["stopwords"]
    cleaned = []
    for rec in payload["records"]:
        text, removed = remove_stopwords(rec["input"], stopwords)
        cleaned.append({"index": rec["index"], "input": text, "removed": removed})
    return {"cleaned": cleaned}


def _fx_label_corrector(ctx: FixtureContext, payload: dict[str, Any]) -> dict[str, Any]:
    fixes = {int(k): v for k, v in ctx.config["corrections"].items()}
    corrections = []
    for rec in payload["records"]:
        fix = fixes.get(rec["index"])
        if fix is not None and rec.get("label") != fix:
            corrections.append({"index": rec["index"], "label": fix})
    return {"corrections": corrections}


def _fx_source_collector(ctx: FixtureContext, payload: dict[str, Any]) -> dict[str, Any]:
    items = ctx.config.get("items")
    if items is None:
        items = ctx.load_json(ctx.config["items_ref"])
    n = payload["n"]
    return {"items": list(items[:n]), "source": ctx.config.get("source", "fixture")}


def _fx_keyword_annotator(ctx: FixtureContext, payload: dict[str, Any]) -> dict[str, Any]:
    labels = []
    for rec in payload["records"]:
        if rec.get("label") is not None:
            continue
        text = rec["input"].lower()
        label = ctx.config["default"]
        for rule in ctx.config["rules"]:
            if rule["contains"] in text:
                label = rule["label"]
                break
        labels.append({"index": rec["index"], "label": label})
    return {"labels": labels}


def _fx_record_augmenter(ctx: FixtureContext, payload: dict[str, Any]) -> dict[str, Any]:
    derived = []
    for rep in range(1, payload["factor"]):
        for rec in payload["records"]:
            derived.append({"source_index": rec["index"], "input": f"{rec['input']}#aug{rep}"})
    return {"derived": derived}


def _fx_sim_trainer(ctx: FixtureContext, payload: dict[str, Any]) -> dict[str, Any]:
    """Deterministic stand-in for a real trainer.

    Accuracy is a pure function of the training-label quality tier; the
    returned artifact is a predictor that matches the provided truth on
    the first round(accuracy * testset size) records.
    """
    tiers = ctx.config["tiers"]
    tier = payload["label_quality_tier"]
    if tier not in tiers:
        raise ToolFault(f"trainer has no tier {tier!r}")
    accuracy = tiers[tier]
    truth = payload["test_truth"]
    domain = payload["label_domain"]
    if len(domain) < 2:
        raise ToolFault("label domain must have at least two labels")
    k = round(accuracy * len(truth))
    predictions = []
    for i, label in enumerate(truth):
        if i < k:
            predictions.append(label)
        else:
            at = domain.index(label) if label in domain else 0
            predictions.append(domain[(at + 1) % len(domain)])
    params = payload["student_params"]
    artifact = {
        "format": payload.get("source_format", "torch"),
        "model": payload["student"],
        "param_count": params,
        "footprint_bytes": params * 4,
        "predictions": predictions,
    }
    metrics = {"train_label_tier": tier, "epochs": payload["hyperparams"].get("epochs", 1)}
    return {"artifact": artifact, "train_metrics": metrics}


def _fx_format_converter(ctx: FixtureContext, payload: dict[str, Any]) -> dict[str, Any]:
    src, dst = ctx.config["from"], ctx.config["to"]
    if ctx.config.get("fail"):
        raise ToolFault(f"conversion {src}->{dst} failed (simulated)")
    artifact = dict(payload["artifact"])
    if artifact.get("format") != src:
        raise ToolFault(f"artifact is {artifact.get('format')!r}, converter expects {src!r}")
    artifact["format"] = dst
    return {"artifact": artifact}


def _fx_static_benchmark(ctx: FixtureContext, payload: dict[str, Any]) -> dict[str, Any]:
    return {"per_container_qps": ctx.config["per_container_qps"]}


def _fx_platform_sim(ctx: FixtureContext, payload: dict[str, Any]) -> dict[str, Any]:
    if ctx.config.get("reject"):
        raise ToolFault("platform rejected the deployment (simulated)")
    base = ctx.config.get("endpoint_base", "https://serve.local")
    endpoint = f"{base}/{payload['platform']}/{payload['artifact']['model']}"
    return {
        "endpoint": endpoint,
        "statuses": ["provisioning", "live"],
        "monitor": {"qps_observed": payload["qps_target"], "error_rate": 0.0, "log_tail": ""},
    }


def _fx_sim_compressor(ctx: FixtureContext, payload: dict[str, Any]) -> dict[str, Any]:
    ratio = ctx.config.get("ratio", 0.5)
    artifact = dict(payload["artifact"])
    before_bytes = artifact["footprint_bytes"]
    before_params = artifact["param_count"]
    artifact["footprint_bytes"] = max(int(before_bytes * ratio), ctx.config.get("floor_bytes", 0))
    artifact["param_count"] = max(int(before_params * ratio), ctx.config.get("floor_params", 0))
    drop = ctx.config.get("accuracy_drop", 0)
    if drop:
        predictions = list(artifact["predictions"])
        domain = sorted(set(predictions))
        for i in range(min(drop, len(predictions))):
            at = domain.index(predictions[i])
            predictions[i] = domain[(at + 1) % len(domain)]
        artifact["predictions"] = predictions
    delta = {
        "footprint_bytes": artifact["footprint_bytes"] - before_bytes,
        "param_count": artifact["param_count"] - before_params,
    }
    return {"artifact": artifact, "delta": delta}


def _fx_static_search(ctx: FixtureContext, payload: dict[str, Any]) -> dict[str, Any]:
    return {"results": ctx.config.get("results", [])}


def _fx_whitespace_normalizer(ctx: FixtureContext, payload: dict[str, Any]) -> dict[str, Any]:
    cleaned = []
    for rec in payload["records"]:
        collapsed = " ".join(rec["input"].split())
        cleaned.append(
            {
                "index": rec["index"],
                "input": collapsed,
                "removed": len(rec["input"]) - len(collapsed),
            }
        )
    return {"cleaned": cleaned}


FIXTURES: dict[str, Callable[[FixtureContext, dict[str, Any]], dict[str, Any]]] = {
    "echo": _fx_echo,
    "stopword_cleaner": _fx_stopword_cleaner,
    "label_corrector": _fx_label_corrector,
    "source_collector": _fx_source_collector,
    "keyword_annotator": _fx_keyword_annotator,
    "record_augmenter": _fx_record_augmenter,
    "sim_trainer": _fx_sim_trainer,
    "format_converter": _fx_format_converter,
    "static_benchmark": _fx_static_benchmark,
    "platform_sim": _fx_platform_sim,
    "sim_compressor": _fx_sim_compressor,
    "static_search": _fx_static_search,
    "whitespace_normalizer": _fx_whitespace_normalizer,
}
