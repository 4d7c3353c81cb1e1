"""Dataset lifecycle: load, assess, clean, correct, collect, label, split."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import pytest
from hypothesis import given, strategies as st

from forgeflow.agents.data import (
    DataAgentError,
    DataRecord,
    Dataset,
    FormatError,
    KnowledgeBaseError,
    ModalityMismatch,
    Provenance,
    SearchFallback,
    SufficiencyPolicy,
    TargetTooLarge,
    ToolContractError,
    assess_sufficiency,
    augment,
    auto_label,
    clean,
    clean_via_tool,
    collect,
    correct_labels,
    load_dataset,
    load_kb,
    load_sufficiency_policy,
    lookup_operation,
    make_splits,
    reduce,
    remove_stopwords,
    summarize,
)
from forgeflow.protocol import TaskSpec
from forgeflow.toolbox import ToolResult, ToolStatus


def ok(payload: dict[str, Any]) -> ToolResult:
    return ToolResult(ToolStatus.OK, payload)


class StubInvoker:
    """Canned tool responses; records every call it receives."""

    def __init__(self, *responses: ToolResult) -> None:
        self.responses = list(responses)
        self.calls: list[tuple[str, dict[str, Any]]] = []

    def __call__(self, tool_id: str, payload: dict[str, Any]) -> ToolResult:
        self.calls.append((tool_id, payload))
        if not self.responses:
            raise AssertionError(f"unexpected tool call: {tool_id}")
        return self.responses.pop(0)


def make_dataset(
    n: int,
    labeled: int | None = None,
    provenance: Provenance = Provenance.USER,
    labels: tuple[str, str] = ("deal", "no_deal"),
) -> Dataset:
    if labeled is None:
        labeled = n
    records = []
    for i in range(1, n + 1):
        label = labels[i % 2] if i <= labeled else None
        records.append(
            DataRecord(index=i, input=f"promo message number {i}", label=label, provenance=provenance)
        )
    return Dataset(id="ds", modality="text", records=tuple(records))


TEXTCLS_SPEC = TaskSpec.from_doc(
    {
        "task_type": "text-classification",
        "modality": ["text"],
        "objective": "classify promotional messages",
        "constraints": [{"accuracy_min": 0.90}],
        "data_refs": [],
        "deployment": None,
        "raw_request": "",
    }
)


class TestLoadDataset:
    def test_jsonl_roundtrip(self, tmp_path: Path) -> None:
        path = tmp_path / "d.jsonl"
        path.write_text(
            '{"input": "buy now", "label": "deal"}\n{"input": "hello there", "label": null}\n',
            encoding="utf-8",
        )
        ds = load_dataset(path, "d")
        assert [r.index for r in ds.records] == [1, 2]
        assert ds.records[0].label == "deal"
        assert ds.records[1].label is None
        assert all(r.provenance is Provenance.USER for r in ds.records)

    def test_bad_json_names_line(self) -> None:
        with pytest.raises(FormatError) as err:
            load_dataset(['{"input": "ok"}', "{oops"], "d")
        assert err.value.line == 2

    def test_missing_input_field(self) -> None:
        with pytest.raises(FormatError) as err:
            load_dataset(['{"label": "deal"}'], "d")
        assert err.value.line == 1

    def test_non_string_label(self) -> None:
        with pytest.raises(FormatError):
            load_dataset(['{"input": "x", "label": 3}'], "d")

    def test_bad_index(self) -> None:
        with pytest.raises(FormatError):
            load_dataset(['{"input": "x", "index": 0}'], "d")

    def test_empty_file(self) -> None:
        with pytest.raises(FormatError):
            load_dataset([], "d")

    def test_duplicate_indices(self) -> None:
        lines = ['{"input": "a", "index": 5}', '{"input": "b", "index": 5}']
        with pytest.raises(FormatError):
            load_dataset(lines, "d")


class TestSufficiency:
    POLICIES = {"default": SufficiencyPolicy(min_labeled=100)}

    def test_thirty_records_insufficient(self) -> None:
        verdict = assess_sufficiency(make_dataset(30), TEXTCLS_SPEC, self.POLICIES)
        assert not verdict.sufficient
        assert verdict.labeled == 30
        assert verdict.recommended_n == 100

    def test_exactly_minimum_is_sufficient(self) -> None:
        verdict = assess_sufficiency(make_dataset(100), TEXTCLS_SPEC, self.POLICIES)
        assert verdict.sufficient
        assert verdict.recommended_n is None

    def test_quality_discount_floors_exactly(self) -> None:
        policies = {"default": SufficiencyPolicy(min_labeled=100, quality_discount=0.8)}
        verdict = assess_sufficiency(make_dataset(120), TEXTCLS_SPEC, policies)
        assert verdict.effective == 96
        assert not verdict.sufficient

    def test_discount_boundary(self) -> None:
        policies = {"default": SufficiencyPolicy(min_labeled=100, quality_discount=0.8)}
        verdict = assess_sufficiency(make_dataset(125), TEXTCLS_SPEC, policies)
        assert verdict.effective == 100
        assert verdict.sufficient

    def test_untrusted_labels_do_not_count(self) -> None:
        ds = make_dataset(200, provenance=Provenance.AUTO_LABELED)
        verdict = assess_sufficiency(ds, TEXTCLS_SPEC, self.POLICIES)
        assert verdict.labeled == 0
        assert not verdict.sufficient

    def test_task_specific_policy_wins(self) -> None:
        policies = {
            "default": SufficiencyPolicy(min_labeled=50),
            "text-classification": SufficiencyPolicy(min_labeled=100),
        }
        verdict = assess_sufficiency(make_dataset(60), TEXTCLS_SPEC, policies)
        assert not verdict.sufficient
        assert verdict.minimum == 100

    def test_policy_file_roundtrip(self, tmp_path: Path) -> None:
        path = tmp_path / "p.json"
        path.write_text(
            json.dumps({"default": {"min_labeled": 50}, "video-qa": {"min_labeled": 200}}),
            encoding="utf-8",
        )
        policies = load_sufficiency_policy(path)
        assert policies["video-qa"].min_labeled == 200
        assert policies["default"].quality_discount == 1.0

    @given(st.integers(min_value=0, max_value=300))
    def test_monotone_in_labeled_count(self, n: int) -> None:
        # more trusted labels never flips sufficient back to insufficient
        if n == 0:
            return
        verdict = assess_sufficiency(make_dataset(n), TEXTCLS_SPEC, self.POLICIES)
        assert verdict.sufficient == (n >= 100)


class TestCleaning:
    def test_stopword_removal_example(self) -> None:
        text, removed = remove_stopwords("the product is on sale", ["the", "is", "on"])
        assert text == "product sale"
        assert removed == 3

    def test_case_insensitive_whole_tokens(self) -> None:
        text, removed = remove_stopwords("The theater IS open", ["the", "is"])
        assert text == "theater open"
        assert removed == 2  # "theater" is not the token "the"

    def test_clean_preserves_labels_and_indices(self) -> None:
        ds = make_dataset(10)
        cleaned, report = clean(ds, ["promo"])
        assert [r.index for r in cleaned.records] == [r.index for r in ds.records]
        assert [r.label for r in cleaned.records] == [r.label for r in ds.records]
        assert report.total_removed == 10

    def test_modality_mismatch(self) -> None:
        ds = Dataset(id="img", modality="image", records=(DataRecord(index=1, input="x"),))
        with pytest.raises(ModalityMismatch):
            clean(ds, ["the"])

    def test_clean_via_tool(self) -> None:
        ds = Dataset(
            id="img",
            modality="image",
            records=(
                DataRecord(index=1, input="img  001 ", label="shoe"),
                DataRecord(index=2, input="img 002", label="hat"),
            ),
        )
        invoker = StubInvoker(
            ok(
                {
                    "cleaned": [
                        {"index": 1, "input": "img 001", "removed": 2},
                        {"index": 2, "input": "img 002", "removed": 0},
                    ]
                }
            )
        )
        cleaned, report = clean_via_tool(ds, invoker, "asset_normalizer")
        assert cleaned.records[0].input == "img 001"
        assert cleaned.records[0].label == "shoe"
        assert cleaned.records[1] is ds.records[1]
        assert report.total_removed == 2

    def test_clean_via_tool_rejects_unknown_index(self) -> None:
        ds = make_dataset(2)
        invoker = StubInvoker(ok({"cleaned": [{"index": 99, "input": "x", "removed": 0}]}))
        with pytest.raises(ToolContractError):
            clean_via_tool(ds, invoker, "cleaner")

    @given(st.lists(st.text(alphabet="abcd ", max_size=40), max_size=8))
    def test_labels_conserved_under_clean(self, texts: list[str]) -> None:
        records = tuple(
            DataRecord(index=i + 1, input=text, label="a") for i, text in enumerate(texts)
        )
        if not records:
            return
        ds = Dataset(id="d", modality="text", records=records)
        cleaned, _ = clean(ds, ["a", "b"])
        assert [r.label for r in cleaned.records] == ["a"] * len(records)


class TestCorrection:
    def test_applies_fixes_with_audit(self) -> None:
        ds = make_dataset(20)
        invoker = StubInvoker(
            ok({"corrections": [{"index": 7, "label": "no_deal"}, {"index": 12, "label": "deal"}]})
        )
        fixed, indices = correct_labels(ds, invoker, "llm_corrector")
        assert indices == [7, 12]
        assert fixed.by_index(7).label == "no_deal"
        assert fixed.by_index(7).provenance is Provenance.CORRECTED
        assert fixed.by_index(7).audit["original_label"] == ds.by_index(7).label
        assert fixed.by_index(8) is ds.by_index(8)

    def test_out_of_range_fix_changes_nothing(self) -> None:
        ds = make_dataset(5)
        invoker = StubInvoker(
            ok({"corrections": [{"index": 2, "label": "deal"}, {"index": 50, "label": "deal"}]})
        )
        with pytest.raises(ToolContractError):
            correct_labels(ds, invoker, "llm_corrector")
        # all-or-nothing: the in-range fix must not have been applied
        assert ds.by_index(2).provenance is Provenance.USER

    def test_no_corrections_is_identity(self) -> None:
        ds = make_dataset(5)
        invoker = StubInvoker(ok({"corrections": []}))
        fixed, indices = correct_labels(ds, invoker, "llm_corrector")
        assert fixed is ds
        assert indices == []

    def test_tool_error_propagates(self) -> None:
        ds = make_dataset(5)
        invoker = StubInvoker(ToolResult(ToolStatus.ERROR, None, "corrector offline"))
        with pytest.raises(ToolContractError, match="corrector offline"):
            correct_labels(ds, invoker, "llm_corrector")


class TestCollection:
    def test_appends_new_unlabeled_records(self) -> None:
        ds = make_dataset(100)
        items = [f"collected promo {i}" for i in range(1000)]
        invoker = StubInvoker(ok({"items": items, "source": "promo-pool"}))
        grown, added = collect(ds, invoker, "promo_collector", 1000)
        assert len(added) == 1000
        assert len(grown.records) == 1100
        assert [r.index for r in added] == list(range(101, 1101))
        assert all(r.label is None for r in added)
        assert all(r.provenance is Provenance.COLLECTED for r in added)
        assert added[0].audit["source"] == "promo-pool"
        assert invoker.calls == [("promo_collector", {"n": 1000})]

    def test_zero_request_skips_tool(self) -> None:
        ds = make_dataset(3)
        invoker = StubInvoker()  # raises if called
        same, added = collect(ds, invoker, "promo_collector", 0)
        assert same is ds and added == []

    def test_duplicates_dropped(self) -> None:
        ds = make_dataset(3)
        items = [
            ds.records[0].input,  # duplicate of existing
            "fresh one",
            "fresh two",
            "fresh one",  # duplicate within batch
            "fresh three",
        ]
        invoker = StubInvoker(ok({"items": items, "source": "s"}))
        _, added = collect(ds, invoker, "c", 5)
        assert [r.input for r in added] == ["fresh one", "fresh two", "fresh three"]


class TestAutoLabel:
    def test_labels_only_unlabeled(self) -> None:
        ds = make_dataset(1100, labeled=100)
        labels = [
            {"index": i, "label": "deal" if i % 2 else "no_deal"} for i in range(101, 1101)
        ]
        invoker = StubInvoker(ok({"labels": labels}))
        labeled = auto_label(ds, invoker, "llm_annotator")
        assert labeled.labeled_count() == 1100
        assert labeled.trusted_labeled_count() == 100
        assert labeled.by_index(101).provenance is Provenance.AUTO_LABELED
        assert labeled.by_index(1).provenance is Provenance.USER

    def test_fully_labeled_skips_tool(self) -> None:
        ds = make_dataset(10)
        invoker = StubInvoker()
        assert auto_label(ds, invoker, "llm_annotator") is ds

    def test_label_outside_domain_rejected(self) -> None:
        ds = make_dataset(4, labeled=2)
        invoker = StubInvoker(
            ok({"labels": [{"index": 3, "label": "mystery"}, {"index": 4, "label": "deal"}]})
        )
        with pytest.raises(ToolContractError, match="mystery"):
            auto_label(ds, invoker, "llm_annotator")

    def test_skipped_record_rejected(self) -> None:
        ds = make_dataset(4, labeled=2)
        invoker = StubInvoker(ok({"labels": [{"index": 3, "label": "deal"}]}))
        with pytest.raises(ToolContractError):
            auto_label(ds, invoker, "llm_annotator")


class TestAugment:
    def test_factor_one_is_identity(self) -> None:
        ds = make_dataset(5)
        invoker = StubInvoker()
        assert augment(ds, invoker, "aug", 1) is ds

    def test_derived_records_inherit_label_and_flag(self) -> None:
        ds = make_dataset(3)
        derived = [{"source_index": r.index, "input": f"{r.input}#aug1"} for r in ds.records]
        invoker = StubInvoker(ok({"derived": derived}))
        grown = augment(ds, invoker, "aug", 2)
        assert len(grown.records) == 6
        new = grown.records[3:]
        assert [r.index for r in new] == [4, 5, 6]
        for original, copy in zip(ds.records, new):
            assert copy.label == original.label
            assert copy.provenance is original.provenance
            assert copy.quality_flags == ("augmented",)
            assert copy.audit["source_index"] == original.index

    def test_unknown_source_rejected(self) -> None:
        ds = make_dataset(2)
        invoker = StubInvoker(ok({"derived": [{"source_index": 9, "input": "x"}]}))
        with pytest.raises(ToolContractError):
            augment(ds, invoker, "aug", 2)


class TestReduce:
    def test_target_too_large(self) -> None:
        with pytest.raises(TargetTooLarge):
            reduce(make_dataset(5), 6, "random_seeded")

    def test_full_size_is_identity(self) -> None:
        ds = make_dataset(5)
        assert reduce(ds, 5, "random_seeded") is ds

    def test_seeded_determinism(self) -> None:
        ds = make_dataset(50)
        first = reduce(ds, 10, "random_seeded", seed=7)
        second = reduce(ds, 10, "random_seeded", seed=7)
        assert [r.index for r in first.records] == [r.index for r in second.records]
        assert len(first.records) == 10

    def test_stratified_quotas(self) -> None:
        records = tuple(
            DataRecord(index=i + 1, input=f"r{i}", label="A" if i < 60 else "B")
            for i in range(100)
        )
        ds = Dataset(id="d", modality="text", records=records)
        reduced = reduce(ds, 10, "stratified", seed=3)
        by_label = {"A": 0, "B": 0}
        for rec in reduced.records:
            by_label[rec.label] += 1
        assert by_label == {"A": 6, "B": 4}

    def test_preserves_record_order(self) -> None:
        ds = make_dataset(30)
        reduced = reduce(ds, 12, "random_seeded", seed=1)
        indices = [r.index for r in reduced.records]
        assert indices == sorted(indices)

    def test_reduce_clears_splits(self) -> None:
        ds = make_splits(make_dataset(100), 10)
        assert reduce(ds, 20, "random_seeded").splits is None


class TestSummarize:
    def test_stats(self) -> None:
        ds = Dataset(
            id="d",
            modality="text",
            records=(
                DataRecord(index=1, input="ab", label="x"),
                DataRecord(index=2, input="abcd", label="y"),
                DataRecord(index=3, input="abc"),
            ),
        )
        text, stats = summarize(ds)
        assert stats.count == 3
        assert stats.labeled == 2
        assert stats.per_class == {"x": 1, "y": 1}
        assert stats.mean_input_length == 3.0
        assert "3 records, 2 labeled" in text

    def test_deterministic_text(self) -> None:
        ds = make_dataset(7)
        assert summarize(ds)[0] == summarize(ds)[0]


class TestSplits:
    def test_last_trusted_records_become_test(self) -> None:
        ds = make_dataset(100)
        split = make_splits(ds, 50)
        assert split.splits.test == tuple(range(51, 101))
        assert split.splits.train == tuple(range(1, 51))

    def test_untrusted_and_augmented_excluded_from_test(self) -> None:
        ds = make_dataset(1100, labeled=100)
        labels = [
            {"index": i, "label": "deal" if i % 2 else "no_deal"} for i in range(101, 1101)
        ]
        ds = auto_label(ds, StubInvoker(ok({"labels": labels})), "ann")
        split = make_splits(ds, 50)
        assert split.splits.test == tuple(range(51, 101))  # trusted tail only
        assert len(split.splits.train) == 1050

    def test_not_enough_trusted_records(self) -> None:
        with pytest.raises(DataAgentError):
            make_splits(make_dataset(30), 50)


class TestKnowledgeBase:
    def write_kb(self, tmp_path: Path, entries: list[dict]) -> Path:
        path = tmp_path / "kb.json"
        path.write_text(json.dumps({"entries": entries}), encoding="utf-8")
        return path

    def test_lookup_hit(self, tmp_path: Path) -> None:
        kb = load_kb(
            self.write_kb(
                tmp_path,
                [{"modality": "text", "operation": "clean", "tool_id": "stop_cleaner"}],
            )
        )
        assert lookup_operation(kb, "text", "clean") == "stop_cleaner"

    def test_lookup_miss_returns_search(self, tmp_path: Path) -> None:
        kb = load_kb(self.write_kb(tmp_path, []))
        fallback = lookup_operation(kb, "image", "clean")
        assert isinstance(fallback, SearchFallback)
        assert fallback.query == "how to clean image datasets"

    def test_duplicate_entry_rejected(self, tmp_path: Path) -> None:
        path = self.write_kb(
            tmp_path,
            [
                {"modality": "text", "operation": "clean", "tool_id": "a"},
                {"modality": "text", "operation": "clean", "tool_id": "b"},
            ],
        )
        with pytest.raises(KnowledgeBaseError):
            load_kb(path)

    def test_unknown_operation_rejected(self, tmp_path: Path) -> None:
        path = self.write_kb(
            tmp_path, [{"modality": "text", "operation": "destroy", "tool_id": "a"}]
        )
        with pytest.raises(KnowledgeBaseError):
            load_kb(path)


class TestProvenanceFlow:
    """user/collected records may become auto_labeled, then corrected."""

    def test_textcls_prepare_sequence(self) -> None:
        # the canonical grow-then-label-then-split walk at small scale
        ds = make_dataset(100)
        items = [f"new promo {i}" for i in range(1000)]
        ds, added = collect(ds, StubInvoker(ok({"items": items, "source": "s"})), "c", 1000)
        assert len(ds.records) == 1100
        labels = [{"index": r.index, "label": "deal"} for r in added]
        ds = auto_label(ds, StubInvoker(ok({"labels": labels})), "a")
        assert ds.labeled_count() == 1100
        assert ds.trusted_labeled_count() == 100
        ds = make_splits(ds, 50)
        assert len(ds.splits.test) == 50
        assert all(
            ds.by_index(i).provenance.value in ("user", "corrected") for i in ds.splits.test
        )
