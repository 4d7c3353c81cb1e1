"""Model agent: selection, training orchestration, evaluation, escalation.

Training itself always happens behind a trainer tool; the kernel ships
a deterministic simulated trainer so the full pipeline replays exactly.
When an evaluation misses its target the agent walks an escalation
ladder: retune the student, switch to hierarchical training under a
larger teacher, ensemble prior artifacts, and finally ask the user to
intervene. No (mode, hyperparams) pair is ever attempted twice.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

from ..protocol import Metric, TaskSpec
from ..toolbox import payload_digest
from .data import Dataset, ToolInvoker, TRUSTED_PROVENANCE

# fixed retune grid: cheapest rung of the ladder, replayable by construction
RETUNE_GRID: tuple[dict[str, Any], ...] = tuple(
    {"learning_rate": lr, "epochs": epochs}
    for epochs in (2, 4)
    for lr in (0.0001, 0.0003, 0.001)
)

DEFAULT_HYPERPARAMS: dict[str, Any] = {"learning_rate": 0.0003, "epochs": 3}


class ModelAgentError(Exception):
    pass


class NoCandidate(ModelAgentError):
    """No registry card satisfies the spec; carries per-card reasons."""

    def __init__(self, reasons: dict[str, str]) -> None:
        super().__init__("; ".join(f"{name}: {why}" for name, why in sorted(reasons.items())))
        self.reasons = reasons


class TrainerFailure(ModelAgentError):
    pass


class LengthMismatch(ModelAgentError):
    pass


class EmptyTestset(ModelAgentError):
    pass


class DomainMismatch(ModelAgentError):
    pass


class CompressionTargetUnreachable(ModelAgentError):
    pass


class TrainingMode(str, enum.Enum):
    DIRECT = "direct"
    HIERARCHICAL = "hierarchical"


@dataclass(frozen=True)
class ModelCard:
    name: str
    task_types: tuple[str, ...]
    param_count: int
    reported_metrics: dict[str, float] = field(default_factory=dict)
    source: str = "internal_repo"
    format: str = "torch"

    def __post_init__(self) -> None:
        if self.param_count <= 0:
            raise ValueError(f"{self.name}: param_count must be positive")


def load_model_registry(path: str | Path) -> list[ModelCard]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        ModelCard(
            name=item["name"],
            task_types=tuple(item["task_types"]),
            param_count=item["param_count"],
            reported_metrics=item.get("reported_metrics", {}),
            source=item.get("source", "internal_repo"),
            format=item.get("format", "torch"),
        )
        for item in doc
    ]


def select_model(registry: Sequence[ModelCard], spec: TaskSpec) -> ModelCard:
    """Pick the cheapest card that can possibly satisfy the spec.

    Filter on task_type and hard constraints, then tie-break: smallest
    param_count, highest reported accuracy, lexicographic name. Pure in
    (registry, spec); registry order never matters.
    """
    param_cap = spec.constraint_value(Metric.PARAM_COUNT_MAX)
    reasons: dict[str, str] = {}
    candidates = []
    for card in registry:
        if spec.task_type not in card.task_types:
            reasons[card.name] = f"does not support {spec.task_type}"
            continue
        if param_cap is not None and card.param_count > param_cap:
            reasons[card.name] = f"param_count {card.param_count} exceeds cap {param_cap}"
            continue
        candidates.append(card)
    if not candidates:
        raise NoCandidate(reasons)
    return min(
        candidates,
        key=lambda c: (c.param_count, -c.reported_metrics.get("accuracy", 0.0), c.name),
    )


def pick_teacher(
    registry: Sequence[ModelCard], spec: TaskSpec, student: ModelCard
) -> ModelCard | None:
    """Largest same-task card strictly bigger than the student, if any."""
    candidates = [
        card
        for card in registry
        if spec.task_type in card.task_types and card.param_count > student.param_count
    ]
    if not candidates:
        return None
    return max(candidates, key=lambda c: (c.param_count, c.name))


@dataclass(frozen=True)
class TrainingJob:
    student: ModelCard
    dataset_ref: str
    hyperparams: dict[str, Any]
    mode: TrainingMode = TrainingMode.DIRECT
    teacher: ModelCard | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode is TrainingMode.HIERARCHICAL:
            if self.teacher is None:
                raise ValueError("hierarchical training needs a teacher")
            if self.teacher.param_count <= self.student.param_count:
                raise ValueError("teacher must be strictly larger than the student")


def label_quality_tier(ds: Dataset, mode: TrainingMode) -> str:
    """What the trainer sees: pseudo-labels, pristine labels, or a mix."""
    if mode is TrainingMode.HIERARCHICAL:
        return "teacher_pseudo"
    assert ds.splits is not None
    train = set(ds.splits.train)
    for rec in ds.records:
        if rec.index in train and rec.provenance.value not in TRUSTED_PROVENANCE:
            return "auto_labeled"
    return "trusted"


def run_training(
    job: TrainingJob, ds: Dataset, invoke: ToolInvoker, tool_id: str
) -> tuple[dict[str, Any], dict[str, Any]]:
    """Run one training job through a trainer tool.

    In hierarchical mode the teacher pseudo-labels the non-trusted pool
    before the student trains on it; that happens inside the trainer
    tool, which receives the teacher's identity. User and corrected
    labels stay authoritative throughout.
    """
    if ds.splits is None:
        raise TrainerFailure("dataset has no train/test splits")
    by_index = {r.index: r for r in ds.records}
    test_truth = []
    for index in ds.splits.test:
        label = by_index[index].label
        if label is None:
            raise TrainerFailure(f"testset record {index} is unlabeled")
        test_truth.append(label)
    payload = {
        "mode": job.mode.value,
        "student": job.student.name,
        "student_params": job.student.param_count,
        "teacher": job.teacher.name if job.teacher else None,
        "hyperparams": job.hyperparams,
        "seed": job.seed,
        "label_quality_tier": label_quality_tier(ds, job.mode),
        "train_size": len(ds.splits.train),
        "test_truth": test_truth,
        "label_domain": ds.label_domain(),
        "source_format": job.student.format,
    }
    result = invoke(tool_id, payload)
    if not result.ok:
        raise TrainerFailure(f"{result.status.value}: {result.log_excerpt}".strip())
    assert result.payload is not None
    return result.payload["artifact"], result.payload["train_metrics"]


def evaluate(predictions: Sequence[str], truth: Sequence[str]) -> float:
    """Exact-rational accuracy, reported to four decimal places."""
    if len(predictions) != len(truth):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(truth)} truth labels")
    if not truth:
        raise EmptyTestset("cannot evaluate on an empty testset")
    matches = sum(1 for p, t in zip(predictions, truth) if p == t)
    return float(round(Fraction(matches, len(truth)), 4))


# constraints a model artifact can be judged on directly; serving
# constraints (qps, latency, memory) belong to the deployment check
MODEL_SCOPE_METRICS = frozenset({Metric.ACCURACY_MIN, Metric.PARAM_COUNT_MAX})


def constraints_satisfied(spec: TaskSpec, metrics: dict[str, Any]) -> bool:
    for constraint in spec.constraints:
        if constraint.metric not in MODEL_SCOPE_METRICS:
            continue
        if constraint.metric is Metric.ACCURACY_MIN:
            if metrics.get("accuracy", 0.0) < constraint.value:
                return False
        elif constraint.metric is Metric.PARAM_COUNT_MAX:
            if metrics.get("param_count", 0) > constraint.value:
                return False
    return True


@dataclass(frozen=True)
class EvalReport:
    metrics: dict[str, Any]
    testset_ref: str
    artifact_ref: str
    passed: bool

    def to_doc(self) -> dict[str, Any]:
        return {
            "metrics": self.metrics,
            "testset_ref": self.testset_ref,
            "artifact_ref": self.artifact_ref,
            "pass": self.passed,
        }


def make_eval_report(
    spec: TaskSpec, metrics: dict[str, Any], testset_ref: str, artifact_ref: str
) -> EvalReport:
    return EvalReport(
        metrics=metrics,
        testset_ref=testset_ref,
        artifact_ref=artifact_ref,
        passed=constraints_satisfied(spec, metrics),
    )


def hyperparams_digest(hyperparams: dict[str, Any]) -> str:
    return payload_digest(hyperparams)


@dataclass(frozen=True)
class Attempt:
    mode: TrainingMode
    hyperparams_digest: str
    report: EvalReport


class EscalationState:
    """Ordered record of what has been tried; rejects repeats."""

    def __init__(self) -> None:
        self.attempts: list[Attempt] = []
        self.ensemble_tried = False

    def record(self, mode: TrainingMode, hyperparams: dict[str, Any], report: EvalReport) -> None:
        key = (mode, hyperparams_digest(hyperparams))
        if self.tried(mode, hyperparams):
            raise ModelAgentError(f"attempt repeated: {key}")
        self.attempts.append(Attempt(mode, key[1], report))

    def tried(self, mode: TrainingMode, hyperparams: dict[str, Any]) -> bool:
        digest = hyperparams_digest(hyperparams)
        return any(
            a.mode is mode and a.hyperparams_digest == digest for a in self.attempts
        )

    def tried_mode(self, mode: TrainingMode) -> bool:
        return any(a.mode is mode for a in self.attempts)


class ActionKind(str, enum.Enum):
    ACCEPT = "accept"
    TUNE_HYPERPARAMS = "tune_hyperparams"
    HIERARCHICAL = "hierarchical"
    ENSEMBLE = "ensemble"
    COMPRESS = "compress"
    REQUEST_INTERVENTION = "request_intervention"


@dataclass(frozen=True)
class NextAction:
    kind: ActionKind
    reason: str
    teacher: ModelCard | None = None
    hyperparams: dict[str, Any] | None = None


def plan_escalation(
    state: EscalationState,
    report: EvalReport,
    spec: TaskSpec,
    registry: Sequence[ModelCard],
    student: ModelCard,
    retune_budget: int = 2,
    have_compressor: bool = False,
    trained_artifacts: int = 0,
) -> NextAction:
    """Decide the next move after an evaluation.

    Ladder: retune (bounded by retune_budget over a fixed grid), then
    hierarchical under a teacher, then ensembling prior artifacts, then
    asking the user. Rungs missing their prerequisites are skipped.
    """
    if report.passed:
        return NextAction(ActionKind.ACCEPT, "constraints satisfied")

    accuracy_floor = spec.constraint_value(Metric.ACCURACY_MIN)
    param_cap = spec.constraint_value(Metric.PARAM_COUNT_MAX)
    accuracy_ok = (
        accuracy_floor is None or report.metrics.get("accuracy", 0.0) >= accuracy_floor
    )
    size_bad = param_cap is not None and report.metrics.get("param_count", 0) > param_cap
    if accuracy_ok and size_bad:
        if have_compressor:
            return NextAction(ActionKind.COMPRESS, f"params exceed cap {param_cap}")
        return NextAction(ActionKind.REQUEST_INTERVENTION, "oversized model and no compressor")

    direct_attempts = sum(1 for a in state.attempts if a.mode is TrainingMode.DIRECT)
    if direct_attempts - 1 < retune_budget:  # the initial run does not spend retune budget
        for hyperparams in RETUNE_GRID:
            if not state.tried(TrainingMode.DIRECT, hyperparams):
                return NextAction(
                    ActionKind.TUNE_HYPERPARAMS,
                    "retune budget remains",
                    hyperparams=hyperparams,
                )

    if not state.tried_mode(TrainingMode.HIERARCHICAL):
        teacher = pick_teacher(registry, spec, student)
        if teacher is not None:
            return NextAction(
                ActionKind.HIERARCHICAL,
                f"teacher {teacher.name} can pseudo-label the training pool",
                teacher=teacher,
            )

    if trained_artifacts >= 2 and not state.ensemble_tried:
        return NextAction(ActionKind.ENSEMBLE, "multiple artifacts available to combine")

    return NextAction(ActionKind.REQUEST_INTERVENTION, "escalation ladder exhausted")


def compress(
    artifact: dict[str, Any],
    target: dict[str, int],
    invoke: ToolInvoker,
    tool_id: str,
) -> tuple[dict[str, Any], dict[str, Any]]:
    """Shrink an artifact; the caller must re-evaluate afterwards."""
    result = invoke(tool_id, {"artifact": artifact})
    if not result.ok:
        raise ModelAgentError(f"compressor: {result.status.value}: {result.log_excerpt}".strip())
    assert result.payload is not None
    smaller, delta = result.payload["artifact"], result.payload["delta"]
    target_params = target.get("param_count_max")
    target_bytes = target.get("size_bytes_max")
    if target_params is not None and smaller["param_count"] > target_params:
        raise CompressionTargetUnreachable(
            f"{smaller['param_count']} params after compression, target {target_params}"
        )
    if target_bytes is not None and smaller["footprint_bytes"] > target_bytes:
        raise CompressionTargetUnreachable(
            f"{smaller['footprint_bytes']} bytes after compression, target {target_bytes}"
        )
    return smaller, delta


def ensemble(artifacts: Sequence[dict[str, Any]], domain: Sequence[str]) -> dict[str, Any]:
    """Majority vote across artifacts; ties go to the earliest artifact."""
    if len(artifacts) < 2:
        raise ModelAgentError("ensemble needs at least two artifacts")
    lengths = {len(a["predictions"]) for a in artifacts}
    if len(lengths) != 1:
        raise DomainMismatch("artifacts predict different testset sizes")
    domain_set = set(domain)
    for artifact in artifacts:
        strays = set(artifact["predictions"]) - domain_set
        if strays:
            raise DomainMismatch(f"artifact {artifact['model']} predicts outside domain: {sorted(strays)}")
    combined = []
    for position in range(lengths.pop()):
        votes: dict[str, int] = {}
        order: list[str] = []
        for artifact in artifacts:
            label = artifact["predictions"][position]
            if label not in votes:
                order.append(label)
            votes[label] = votes.get(label, 0) + 1
        best = max(votes.values())
        combined.append(next(label for label in order if votes[label] == best))
    return {
        "format": artifacts[0]["format"],
        "model": "ensemble(" + "+".join(a["model"] for a in artifacts) + ")",
        "param_count": sum(a["param_count"] for a in artifacts),
        "footprint_bytes": sum(a["footprint_bytes"] for a in artifacts),
        "predictions": combined,
    }


def summarize_model(card: ModelCard, report: EvalReport | None = None) -> str:
    """Deterministic one-model summary with a metric table."""
    lines = [
        f"model: {card.name}",
        f"architecture: {'/'.join(card.task_types)} ({card.source}, {card.format})",
        f"parameters: {card.param_count:,}",
        "",
        "| metric | value |",
        "| --- | --- |",
    ]
    metrics = dict(card.reported_metrics)
    if report is not None:
        metrics.update(report.metrics)
        lines.insert(3, f"evaluation pass: {str(report.passed).lower()}")
    for name in sorted(metrics):
        lines.append(f"| {name} | {metrics[name]} |")
    return "\n".join(lines) + "\n"
