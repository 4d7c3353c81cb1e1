"""Data agent: dataset lifecycle operations.

Collection, cleaning, label correction, auto-labeling, augmentation,
reduction, and summary statistics, plus the sufficiency judgment that
decides whether training can start at all. Every operation is a pure
function from an immutable Dataset snapshot to a new one; tool-backed
operations take an invoker so tests can swap registries freely.

Dataset files are JSON-lines, one record per line. Record indices are
1-based and correspond to line numbers in the source file.
"""

from __future__ import annotations

import enum
import json
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from ..toolbox import ToolResult
from ..protocol import TaskSpec

# trusted labels: placed by the user or explicitly corrected
TRUSTED_PROVENANCE = frozenset({"user", "corrected"})

ToolInvoker = Callable[[str, dict[str, Any]], ToolResult]


class Provenance(str, enum.Enum):
    USER = "user"
    COLLECTED = "collected"
    AUTO_LABELED = "auto_labeled"
    CORRECTED = "corrected"


class DataAgentError(Exception):
    pass


class FormatError(DataAgentError):
    """A dataset file line does not parse as a record."""

    def __init__(self, line: int, reason: str) -> None:
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class ModalityMismatch(DataAgentError):
    pass


class TargetTooLarge(DataAgentError):
    pass


class ToolContractError(DataAgentError):
    """A tool failed or returned something its contract forbids."""


class KnowledgeBaseError(DataAgentError):
    pass


@dataclass(frozen=True)
class DataRecord:
    index: int
    input: str
    label: str | None = None
    provenance: Provenance = Provenance.USER
    quality_flags: tuple[str, ...] = ()
    audit: dict[str, Any] = field(default_factory=dict)

    def to_doc(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "input": self.input,
            "label": self.label,
            "provenance": self.provenance.value,
            "quality_flags": list(self.quality_flags),
            "audit": self.audit,
        }


@dataclass(frozen=True)
class Splits:
    train: tuple[int, ...]
    test: tuple[int, ...]


@dataclass(frozen=True)
class Dataset:
    id: str
    modality: str
    records: tuple[DataRecord, ...]
    splits: Splits | None = None

    def __post_init__(self) -> None:
        indices = [r.index for r in self.records]
        if len(set(indices)) != len(indices):
            raise DataAgentError(f"dataset {self.id}: duplicate record indices")
        if self.splits is not None and set(self.splits.train) & set(self.splits.test):
            raise DataAgentError(f"dataset {self.id}: splits overlap")

    def by_index(self, index: int) -> DataRecord:
        for rec in self.records:
            if rec.index == index:
                return rec
        raise KeyError(index)

    def label_domain(self) -> list[str]:
        return sorted({r.label for r in self.records if r.label is not None})

    def labeled_count(self) -> int:
        return sum(1 for r in self.records if r.label is not None)

    def trusted_labeled_count(self) -> int:
        return sum(
            1
            for r in self.records
            if r.label is not None and r.provenance.value in TRUSTED_PROVENANCE
        )


def load_dataset(
    source: str | Path | Iterable[str],
    dataset_id: str,
    modality: str = "text",
    provenance: Provenance = Provenance.USER,
) -> Dataset:
    """Parse JSON-lines records. Raises FormatError naming the bad line."""
    if isinstance(source, (str, Path)):
        lines = Path(source).read_text(encoding="utf-8").splitlines()
    else:
        lines = list(source)
    records = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(lineno, f"not JSON: {exc.msg}") from exc
        if not isinstance(doc, dict) or not isinstance(doc.get("input"), str):
            raise FormatError(lineno, "record needs a text input field")
        label = doc.get("label")
        if label is not None and not isinstance(label, str):
            raise FormatError(lineno, "label must be a string or null")
        index = doc.get("index", lineno)
        if not isinstance(index, int) or index < 1:
            raise FormatError(lineno, "index must be a positive integer")
        records.append(
            DataRecord(index=index, input=doc["input"], label=label, provenance=provenance)
        )
    if not records:
        raise FormatError(1, "dataset file holds no records")
    try:
        return Dataset(id=dataset_id, modality=modality, records=tuple(records))
    except DataAgentError as exc:
        raise FormatError(1, str(exc)) from exc


@dataclass(frozen=True)
class SufficiencyPolicy:
    min_labeled: int
    min_per_class: int = 1
    quality_discount: float = 1.0

    def __post_init__(self) -> None:
        if self.min_labeled < 1 or self.min_per_class < 1:
            raise ValueError("policy minima must be >= 1")
        if not (0.0 < self.quality_discount <= 1.0):
            raise ValueError("quality_discount must be in (0, 1]")


def load_sufficiency_policy(path: str | Path) -> dict[str, SufficiencyPolicy]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return {
        task_type: SufficiencyPolicy(
            min_labeled=entry["min_labeled"],
            min_per_class=entry.get("min_per_class", 1),
            quality_discount=entry.get("quality_discount", 1.0),
        )
        for task_type, entry in doc.items()
    }


@dataclass(frozen=True)
class Sufficiency:
    sufficient: bool
    labeled: int
    effective: int
    minimum: int
    recommended_n: int | None = None  # set when insufficient


def assess_sufficiency(
    ds: Dataset, spec: TaskSpec, policies: dict[str, SufficiencyPolicy]
) -> Sufficiency:
    """Judge whether trusted labels meet the policy minimum.

    Only user-provided and corrected labels count: auto-generated labels
    are what training adds on top, not evidence the task is learnable.
    """
    policy = policies.get(spec.task_type) or policies.get("default")
    if policy is None:
        raise KnowledgeBaseError(f"no sufficiency policy for {spec.task_type}")
    labeled = ds.trusted_labeled_count()
    # exact decimal arithmetic so floor(120 * 0.8) is 96, never 95
    effective = int(labeled * Fraction(str(policy.quality_discount)))
    if effective < policy.min_labeled:
        return Sufficiency(False, labeled, effective, policy.min_labeled, policy.min_labeled)
    return Sufficiency(True, labeled, effective, policy.min_labeled)


def remove_stopwords(text: str, stopwords: Sequence[str]) -> tuple[str, int]:
    """Drop whole tokens that match the list, case-insensitively."""
    lowered = {w.lower() for w in stopwords}
    kept = []
    removed = 0
    for token in text.split():
        if token.lower() in lowered:
            removed += 1
        else:
            kept.append(token)
    return " ".join(kept), removed


@dataclass(frozen=True)
class CleanReport:
    removed_per_record: dict[int, int]

    @property
    def total_removed(self) -> int:
        return sum(self.removed_per_record.values())


def clean(ds: Dataset, stopwords: Sequence[str]) -> tuple[Dataset, CleanReport]:
    if ds.modality != "text":
        raise ModalityMismatch(f"stopword cleaning needs text, dataset is {ds.modality}")
    records = []
    removed_per_record = {}
    for rec in ds.records:
        text, removed = remove_stopwords(rec.input, stopwords)
        removed_per_record[rec.index] = removed
        records.append(replace(rec, input=text) if removed else rec)
    return replace(ds, records=tuple(records)), CleanReport(removed_per_record)


def _require_ok(result: ToolResult, what: str) -> dict[str, Any]:
    if not result.ok:
        raise ToolContractError(f"{what}: {result.status.value}: {result.log_excerpt}".strip())
    assert result.payload is not None
    return result.payload


def _records_payload(records: Iterable[DataRecord]) -> list[dict[str, Any]]:
    return [{"index": r.index, "input": r.input, "label": r.label} for r in records]


def clean_via_tool(
    ds: Dataset, invoke: ToolInvoker, tool_id: str
) -> tuple[Dataset, CleanReport]:
    """Clean through a registered cleaner tool instead of the local pass.

    The tool sees (index, input, label) and returns rewritten inputs; any
    index it did not mention stays as-is. Labels never change here.
    """
    payload = _require_ok(
        invoke(tool_id, {"records": _records_payload(ds.records)}), f"cleaner {tool_id}"
    )
    known = {r.index for r in ds.records}
    rewrites: dict[int, str] = {}
    removed_per_record: dict[int, int] = {}
    for item in payload["cleaned"]:
        if item["index"] not in known:
            raise ToolContractError(f"cleaner rewrote unknown index {item['index']}")
        rewrites[item["index"]] = item["input"]
        removed_per_record[item["index"]] = item["removed"]
    records = []
    for rec in ds.records:
        new_input = rewrites.get(rec.index)
        if new_input is None or new_input == rec.input:
            records.append(rec)
        else:
            records.append(replace(rec, input=new_input))
    return replace(ds, records=tuple(records)), CleanReport(removed_per_record)


def correct_labels(ds: Dataset, invoke: ToolInvoker, tool_id: str) -> tuple[Dataset, list[int]]:
    """Apply a corrector tool's fixes all-or-nothing; audit keeps old labels."""
    payload = _require_ok(
        invoke(tool_id, {"records": _records_payload(ds.records)}), f"corrector {tool_id}"
    )
    fixes: dict[int, str] = {}
    known = {r.index for r in ds.records}
    for item in payload["corrections"]:
        if item["index"] not in known:
            raise ToolContractError(f"corrector flagged unknown index {item['index']}")
        fixes[item["index"]] = item["label"]
    if not fixes:
        return ds, []
    records = []
    for rec in ds.records:
        fix = fixes.get(rec.index)
        if fix is None:
            records.append(rec)
        else:
            records.append(
                replace(
                    rec,
                    label=fix,
                    provenance=Provenance.CORRECTED,
                    audit={**rec.audit, "original_label": rec.label},
                )
            )
    return replace(ds, records=tuple(records)), sorted(fixes)


def collect(
    ds: Dataset, invoke: ToolInvoker, tool_id: str, n: int
) -> tuple[Dataset, list[DataRecord]]:
    """Pull up to n new unlabeled records, deduplicated by exact input match."""
    if n == 0:
        return ds, []
    payload = _require_ok(invoke(tool_id, {"n": n}), f"collector {tool_id}")
    existing = {r.input for r in ds.records}
    next_index = max((r.index for r in ds.records), default=0) + 1
    added = []
    for item in payload["items"]:
        if item in existing:
            continue
        existing.add(item)
        added.append(
            DataRecord(
                index=next_index,
                input=item,
                provenance=Provenance.COLLECTED,
                audit={"source": payload["source"]},
            )
        )
        next_index += 1
    return replace(ds, records=ds.records + tuple(added)), added


def auto_label(ds: Dataset, invoke: ToolInvoker, tool_id: str) -> Dataset:
    """Label every unlabeled record; existing labels stay untouched."""
    unlabeled = [r for r in ds.records if r.label is None]
    if not unlabeled:
        return ds
    payload = _require_ok(
        invoke(tool_id, {"records": _records_payload(ds.records)}), f"annotator {tool_id}"
    )
    new_labels = {item["index"]: item["label"] for item in payload["labels"]}
    domain = set(ds.label_domain())
    if domain:
        strays = sorted(set(new_labels.values()) - domain)
        if strays:
            raise ToolContractError(f"annotator produced labels outside the domain: {strays}")
    missing = [r.index for r in unlabeled if r.index not in new_labels]
    if missing:
        raise ToolContractError(f"annotator skipped unlabeled records: {missing[:5]}")
    records = []
    for rec in ds.records:
        if rec.label is None:
            records.append(
                replace(rec, label=new_labels[rec.index], provenance=Provenance.AUTO_LABELED)
            )
        else:
            records.append(rec)
    return replace(ds, records=tuple(records))


def augment(ds: Dataset, invoke: ToolInvoker, tool_id: str, factor: int) -> Dataset:
    """Append derived records; each carries its source index and an audit flag."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return ds
    payload = _require_ok(
        invoke(tool_id, {"records": _records_payload(ds.records), "factor": factor}),
        f"augmenter {tool_id}",
    )
    by_index = {r.index: r for r in ds.records}
    next_index = max(r.index for r in ds.records) + 1
    derived = []
    for item in payload["derived"]:
        source = by_index.get(item["source_index"])
        if source is None:
            raise ToolContractError(f"augmenter cited unknown source index {item['source_index']}")
        derived.append(
            DataRecord(
                index=next_index,
                input=item["input"],
                label=source.label,
                provenance=source.provenance,
                quality_flags=("augmented",),
                audit={"source_index": source.index},
            )
        )
        next_index += 1
    return replace(ds, records=ds.records + tuple(derived))


def reduce(ds: Dataset, target_size: int, strategy: str, seed: int = 0) -> Dataset:
    """Keep exactly target_size records, deterministically for a given seed."""
    if target_size > len(ds.records):
        raise TargetTooLarge(f"target {target_size} > {len(ds.records)} records")
    if target_size == len(ds.records):
        return ds
    rng = random.Random(seed)
    if strategy == "random_seeded":
        chosen = set(rng.sample(range(len(ds.records)), target_size))
    elif strategy == "stratified":
        chosen = _stratified_pick(ds.records, target_size, rng)
    else:
        raise ValueError(f"unknown reduce strategy {strategy!r}")
    records = tuple(rec for i, rec in enumerate(ds.records) if i in chosen)
    return replace(ds, records=records, splits=None)


def _stratified_pick(records: Sequence[DataRecord], target: int, rng: random.Random) -> set[int]:
    # proportional quotas by largest remainder, so each class lands within
    # one record of its exact share
    groups: dict[str, list[int]] = {}
    for i, rec in enumerate(records):
        groups.setdefault(rec.label if rec.label is not None else "\x00unlabeled", []).append(i)
    total = len(records)
    shares = {label: target * len(idx) / total for label, idx in groups.items()}
    quotas = {label: int(share) for label, share in shares.items()}
    leftover = target - sum(quotas.values())
    by_remainder = sorted(
        groups, key=lambda label: (-(shares[label] - quotas[label]), label)
    )
    for label in by_remainder[:leftover]:
        quotas[label] += 1
    chosen: set[int] = set()
    for label in sorted(groups):
        chosen.update(rng.sample(groups[label], quotas[label]))
    return chosen


@dataclass(frozen=True)
class DatasetStats:
    count: int
    labeled: int
    per_class: dict[str, int]
    mean_input_length: float


def summarize(ds: Dataset) -> tuple[str, DatasetStats]:
    per_class: dict[str, int] = {}
    for rec in ds.records:
        if rec.label is not None:
            per_class[rec.label] = per_class.get(rec.label, 0) + 1
    count = len(ds.records)
    mean_length = round(sum(len(r.input) for r in ds.records) / count, 2) if count else 0.0
    stats = DatasetStats(
        count=count,
        labeled=ds.labeled_count(),
        per_class=dict(sorted(per_class.items())),
        mean_input_length=mean_length,
    )
    lines = [
        f"dataset {ds.id} ({ds.modality}): {stats.count} records, {stats.labeled} labeled",
        f"mean input length: {stats.mean_input_length}",
    ]
    for label, n in stats.per_class.items():
        lines.append(f"  {label}: {n}")
    return "\n".join(lines), stats


def make_splits(ds: Dataset, test_size: int) -> Dataset:
    """Hold out the last test_size trusted, non-augmented records as the testset."""
    eligible = [
        r.index
        for r in ds.records
        if r.label is not None
        and r.provenance.value in TRUSTED_PROVENANCE
        and "augmented" not in r.quality_flags
    ]
    if len(eligible) < test_size:
        raise DataAgentError(f"need {test_size} trusted records for the testset, have {len(eligible)}")
    test = tuple(eligible[-test_size:])
    train = tuple(r.index for r in ds.records if r.index not in set(test))
    return replace(ds, splits=Splits(train=train, test=test))


@dataclass(frozen=True)
class KnowledgeBaseEntry:
    modality: str
    operation: str
    tool_id: str
    notes: str = ""


@dataclass(frozen=True)
class SearchFallback:
    """No KB entry: the agent should ask a search tool instead of failing silently."""

    query: str


KB_OPERATIONS = frozenset({"collect", "clean", "label", "augment", "reduce", "summarize"})


def load_kb(path: str | Path) -> list[KnowledgeBaseEntry]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    entries = []
    seen = set()
    for item in doc["entries"]:
        entry = KnowledgeBaseEntry(
            modality=item["modality"],
            operation=item["operation"],
            tool_id=item["tool_id"],
            notes=item.get("notes", ""),
        )
        if entry.operation not in KB_OPERATIONS:
            raise KnowledgeBaseError(f"unknown operation {entry.operation!r}")
        key = (entry.modality, entry.operation)
        if key in seen:
            raise KnowledgeBaseError(f"duplicate knowledge base entry for {key}")
        seen.add(key)
        entries.append(entry)
    return entries


def lookup_operation(
    kb: Sequence[KnowledgeBaseEntry], modality: str, operation: str
) -> str | SearchFallback:
    for entry in kb:
        if entry.modality == modality and entry.operation == operation:
            return entry.tool_id
    return SearchFallback(query=f"how to {operation} {modality} datasets")
