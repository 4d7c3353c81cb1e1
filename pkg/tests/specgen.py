"""Generators for requirement documents, shared across test modules.

Two flavors: hypothesis strategies for property tests, and a seeded
corruptor that damages one field of a valid document in a describable
way (used by the repair-loop and dual-validator tests).
"""

from __future__ import annotations

import copy
import random
from typing import Any, Callable

from hypothesis import strategies as st

TASK_TYPES = ["text-classification", "visual-grounding", "video-qa", "tabular-regression"]
MODALITIES = ["audio", "image", "tabular", "text", "video"]
PLATFORMS = ["edge-box", "k8s-pool", "nova-serving"]
FORMATS = ["onnx", "tensorrt", "torchscript"]

_text = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters="\x00"),
    min_size=1,
    max_size=40,
)


def _value_for(metric: str) -> st.SearchStrategy[Any]:
    if metric == "accuracy_min":
        return st.floats(min_value=0.0, max_value=1.0, exclude_min=True, allow_nan=False)
    if metric in ("param_count_max", "container_mem_bytes"):
        return st.integers(min_value=1, max_value=2**41)
    return st.one_of(
        st.integers(min_value=1, max_value=10**5),
        st.floats(min_value=0.001, max_value=1e5, allow_nan=False),
    )


@st.composite
def constraint_lists(draw: st.DrawFn) -> list[dict[str, Any]]:
    metrics = draw(
        st.lists(
            st.sampled_from(
                ["accuracy_min", "param_count_max", "qps_min", "latency_max_ms", "container_mem_bytes"]
            ),
            unique=True,
            max_size=5,
        )
    )
    return [{"metric": m, "value": draw(_value_for(m))} for m in metrics]


deployment_docs = st.fixed_dictionaries(
    {
        "platform": st.sampled_from(PLATFORMS),
        "qps_min": st.one_of(
            st.integers(min_value=0, max_value=10**4),
            st.floats(min_value=0.0, max_value=1e4, allow_nan=False),
        ),
        "container_mem_bytes": st.integers(min_value=1, max_value=2**41),
        "target_format": st.sampled_from(FORMATS),
    }
)


@st.composite
def task_spec_docs(draw: st.DrawFn) -> dict[str, Any]:
    objective = draw(st.one_of(st.just(""), _text))
    constraints = draw(constraint_lists())
    if not objective and not constraints:
        objective = draw(_text)
    return {
        "task_type": draw(st.sampled_from(TASK_TYPES)),
        "modality": draw(st.lists(st.sampled_from(MODALITIES), unique=True)),
        "objective": objective,
        "constraints": constraints,
        "data_refs": draw(st.lists(st.sampled_from(["datasets/a.jsonl", "datasets/b.jsonl"]), unique=True)),
        "deployment": draw(st.one_of(st.none(), deployment_docs)),
        "raw_request": draw(st.one_of(st.just(""), _text)),
    }


def make_valid_doc(rng: random.Random) -> dict[str, Any]:
    """Seeded non-hypothesis generator for when a plain corpus is enough."""
    metrics = rng.sample(
        ["accuracy_min", "param_count_max", "qps_min", "latency_max_ms", "container_mem_bytes"],
        k=rng.randint(1, 5),
    )
    values = {
        "accuracy_min": round(rng.uniform(0.5, 1.0), 4),
        "param_count_max": rng.randint(10**6, 10**9),
        "qps_min": rng.choice([rng.randint(1, 500), round(rng.uniform(0.5, 500), 2)]),
        "latency_max_ms": rng.randint(1, 2000),
        "container_mem_bytes": rng.randint(2**20, 2**33),
    }
    doc: dict[str, Any] = {
        "task_type": rng.choice(TASK_TYPES),
        "modality": sorted(rng.sample(MODALITIES, k=rng.randint(0, 3))),
        "objective": rng.choice(["", "beat the current baseline", "classify promo text"]),
        "constraints": [{"metric": m, "value": values[m]} for m in sorted(metrics)],
        "data_refs": rng.sample(["datasets/a.jsonl", "datasets/b.jsonl", "datasets/c.jsonl"], k=rng.randint(0, 2)),
        "deployment": None,
        "raw_request": "",
    }
    if rng.random() < 0.5:
        doc["deployment"] = {
            "platform": rng.choice(PLATFORMS),
            "qps_min": rng.randint(0, 1000),
            "container_mem_bytes": rng.randint(2**20, 2**33),
            "target_format": rng.choice(FORMATS),
        }
    return doc


def _drop_task_type(doc: dict[str, Any]) -> str:
    del doc["task_type"]
    return "task_type removed"


def _accuracy_out_of_range(doc: dict[str, Any]) -> str:
    doc["constraints"].append({"metric": "accuracy_min", "value": 1.7})
    return "accuracy_min 1.7"


def _zero_value(doc: dict[str, Any]) -> str:
    doc["constraints"][0]["value"] = 0
    return "constraint value 0"


def _unknown_metric(doc: dict[str, Any]) -> str:
    doc["constraints"][0]["metric"] = "gpu_count_max"
    return "unknown metric"


def _unknown_field(doc: dict[str, Any]) -> str:
    doc["priority"] = "high"
    return "unknown top-level field"


def _bad_modality(doc: dict[str, Any]) -> str:
    doc["modality"] = ["text", "hologram"]
    return "unknown modality"


def _fractional_count(doc: dict[str, Any]) -> str:
    doc["constraints"][0] = {"metric": "param_count_max", "value": 12.5}
    return "fractional param count"


def _nothing_to_build(doc: dict[str, Any]) -> str:
    doc["objective"] = ""
    doc["constraints"] = []
    return "objective and constraints both empty"


def _empty_data_ref(doc: dict[str, Any]) -> str:
    doc["data_refs"] = [""]
    return "empty data ref"


def _string_value(doc: dict[str, Any]) -> str:
    doc["constraints"][0]["value"] = "fast"
    return "non-numeric constraint value"


def _constraints_not_list(doc: dict[str, Any]) -> str:
    doc["constraints"] = {"accuracy_min": 0.9}
    return "constraints not an array"


def _deployment_missing_field(doc: dict[str, Any]) -> str:
    doc["deployment"] = {"platform": "edge-box", "qps_min": 10, "target_format": "onnx"}
    return "deployment missing container_mem_bytes"


CORRUPTIONS: list[Callable[[dict[str, Any]], str]] = [
    _drop_task_type,
    _accuracy_out_of_range,
    _zero_value,
    _unknown_metric,
    _unknown_field,
    _bad_modality,
    _fractional_count,
    _nothing_to_build,
    _empty_data_ref,
    _string_value,
    _constraints_not_list,
    _deployment_missing_field,
]


def corrupt(doc: dict[str, Any], rng: random.Random) -> tuple[dict[str, Any], str]:
    """Damage a copy of `doc` in exactly one way; returns (bad_doc, what)."""
    bad = copy.deepcopy(doc)
    # corruptions that index into constraints need one to exist
    applicable = CORRUPTIONS if bad["constraints"] else [
        f for f in CORRUPTIONS
        if f not in (_zero_value, _unknown_metric, _string_value, _fractional_count)
    ]
    return bad, rng.choice(applicable)(bad)
