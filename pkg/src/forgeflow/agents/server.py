"""Server agent: capacity math, format conversion, docs, deployment.

Capacity arithmetic runs on exact rationals so container counts never
drift by one from float rounding. Conversion planning is shortest-path
over the converter registry with a deterministic tie-break.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

from ..protocol import DeploymentSpec, TaskSpec
from .data import ToolInvoker

# fixed per-container runtime overhead on top of the model footprint
CONTAINER_OVERHEAD_BYTES = 256 * 1024 * 1024


class ServerAgentError(Exception):
    pass


class UnknownFormat(ServerAgentError):
    pass


class NoPath(ServerAgentError):
    pass


class HopFailure(ServerAgentError):
    """Conversion failed at hop `failed_hop`; earlier hops are kept."""

    def __init__(self, failed_hop: int, reason: str, completed: list[dict[str, Any]]) -> None:
        super().__init__(f"hop {failed_hop}: {reason}")
        self.failed_hop = failed_hop
        self.completed = completed


class MemoryExceeded(ServerAgentError):
    pass


class PlatformRejected(ServerAgentError):
    pass


def _exact(value: float | int) -> Fraction:
    # str() round-trips the shortest decimal form, so 0.1 means 1/10 here
    return Fraction(str(value))


@dataclass(frozen=True)
class ResourceEstimate:
    containers: int
    fits_memory: bool
    footprint_bytes: int
    overhead_bytes: int
    per_container_qps: float
    qps_target: float

    def to_doc(self) -> dict[str, Any]:
        return {
            "containers": self.containers,
            "fits_memory": self.fits_memory,
            "footprint_bytes": self.footprint_bytes,
            "overhead_bytes": self.overhead_bytes,
            "per_container_qps": self.per_container_qps,
            "qps_target": self.qps_target,
        }


def estimate_resources(
    footprint_bytes: int,
    qps_min: float,
    per_container_qps: float,
    container_mem_bytes: int | None = None,
) -> ResourceEstimate:
    """Containers needed to serve qps_min, and whether one container fits.

    containers = ceil(qps_min / per_container_qps), never below one: an
    endpoint with zero demand still runs a single container.
    """
    if per_container_qps <= 0:
        raise ServerAgentError("per-container throughput must be positive")
    if qps_min < 0:
        raise ServerAgentError("qps_min must be non-negative")
    containers = max(1, math.ceil(_exact(qps_min) / _exact(per_container_qps)))
    fits = True
    if container_mem_bytes is not None:
        fits = footprint_bytes + CONTAINER_OVERHEAD_BYTES <= container_mem_bytes
    return ResourceEstimate(
        containers=containers,
        fits_memory=fits,
        footprint_bytes=footprint_bytes,
        overhead_bytes=CONTAINER_OVERHEAD_BYTES,
        per_container_qps=per_container_qps,
        qps_target=qps_min,
    )


@dataclass(frozen=True)
class Hop:
    src: str
    dst: str
    tool_id: str


class ConversionGraph:
    """Directed converter graph; every edge is backed by a tool."""

    def __init__(self, formats: Sequence[str], edges: Sequence[Hop]) -> None:
        self.formats = set(formats)
        self.adjacency: dict[str, dict[str, str]] = {fmt: {} for fmt in formats}
        for edge in edges:
            if edge.src not in self.formats or edge.dst not in self.formats:
                raise UnknownFormat(f"edge {edge.src}->{edge.dst} references unknown format")
            self.adjacency[edge.src][edge.dst] = edge.tool_id


def load_conversion_graph(path: str | Path) -> ConversionGraph:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    edges = [Hop(e["from"], e["to"], e["tool_id"]) for e in doc["edges"]]
    return ConversionGraph(doc["formats"], edges)


def find_conversion_path(graph: ConversionGraph, src: str, dst: str) -> list[Hop]:
    """Shortest hop sequence from src to dst.

    BFS expanding neighbours in lexicographic order, so among equal-length
    paths the lexicographically earliest is returned. src == dst gives [].
    """
    for fmt in (src, dst):
        if fmt not in graph.formats:
            raise UnknownFormat(fmt)
    if src == dst:
        return []
    parent: dict[str, tuple[str, str]] = {}  # node -> (predecessor, tool_id)
    queue = deque([src])
    seen = {src}
    while queue:
        node = queue.popleft()
        for neighbour in sorted(graph.adjacency[node]):
            if neighbour in seen:
                continue
            seen.add(neighbour)
            parent[neighbour] = (node, graph.adjacency[node][neighbour])
            if neighbour == dst:
                hops: list[Hop] = []
                walk = dst
                while walk != src:
                    prev, tool_id = parent[walk]
                    hops.append(Hop(prev, walk, tool_id))
                    walk = prev
                hops.reverse()
                return hops
            queue.append(neighbour)
    raise NoPath(f"no conversion route from {src} to {dst}")


def convert(
    artifact: dict[str, Any], path: Sequence[Hop], invoke: ToolInvoker
) -> dict[str, Any]:
    """Run the hops in order; a failure at hop k keeps hops before it."""
    current = artifact
    completed: list[dict[str, Any]] = []
    for position, hop in enumerate(path):
        result = invoke(hop.tool_id, {"artifact": current})
        if not result.ok or result.payload is None:
            raise HopFailure(position, result.log_excerpt or result.status.value, completed)
        current = result.payload["artifact"]
        completed.append(current)
    return current


@dataclass(frozen=True)
class InterfaceDoc:
    endpoint: str
    request_schema: dict[str, Any]
    response_schema: dict[str, Any]
    example_request: dict[str, Any]
    example_response: dict[str, Any]
    text: str


ERROR_TABLE = (
    (400, "invalid_input", "request body is not valid JSON"),
    (422, "schema_violation", "request JSON does not match the request schema"),
    (429, "over_capacity", "request rate exceeds the provisioned capacity"),
    (503, "model_unavailable", "the model endpoint is provisioning or down"),
)


def _schema_block(schema: dict[str, Any]) -> str:
    return "```json\n" + json.dumps(schema, indent=2, sort_keys=True) + "\n```"


def render_interface_doc(
    spec: TaskSpec, endpoint: str, label_domain: Sequence[str], model_name: str
) -> InterfaceDoc:
    """Deterministic service documentation for a deployed model.

    The worked example is constructed from the same schema it documents,
    so the doc can never drift from the contract it describes.
    """
    labels = sorted(label_domain)
    if not labels:
        raise ServerAgentError("cannot document a service with an empty label domain")
    if "image" in spec.modality:
        request_schema: dict[str, Any] = {
            "type": "object",
            "properties": {
                "image_b64": {"type": "string", "description": "base64-encoded image"},
                "query": {"type": "string", "description": "what to locate or classify"},
            },
            "required": ["image_b64", "query"],
            "additionalProperties": False,
        }
        example_request = {"image_b64": "aGVsbG8=", "query": "which product is shown?"}
    else:
        request_schema = {
            "type": "object",
            "properties": {"input": {"type": "string", "description": "text to classify"}},
            "required": ["input"],
            "additionalProperties": False,
        }
        example_request = {"input": "limited time offer, act now"}
    response_schema = {
        "type": "object",
        "properties": {
            "label": {"type": "string", "enum": labels},
            "confidence": {"type": "number", "minimum": 0, "maximum": 1},
        },
        "required": ["label", "confidence"],
        "additionalProperties": False,
    }
    example_response = {"label": labels[0], "confidence": 0.97}
    lines = [
        f"# {model_name} service",
        "",
        f"task: {spec.task_type}",
        f"endpoint: POST {endpoint}",
        "",
        "## request schema",
        "",
        _schema_block(request_schema),
        "",
        "## response schema",
        "",
        _schema_block(response_schema),
        "",
        "## worked example",
        "",
        "request:",
        "",
        _schema_block(example_request),
        "",
        "response:",
        "",
        _schema_block(example_response),
        "",
        "## errors",
        "",
        "| status | code | meaning |",
        "| --- | --- | --- |",
    ]
    for status, code, meaning in ERROR_TABLE:
        lines.append(f"| {status} | {code} | {meaning} |")
    return InterfaceDoc(
        endpoint=endpoint,
        request_schema=request_schema,
        response_schema=response_schema,
        example_request=example_request,
        example_response=example_response,
        text="\n".join(lines) + "\n",
    )


@dataclass(frozen=True)
class DeploymentRecord:
    endpoint: str
    statuses: tuple[str, ...]
    containers: int
    monitor: dict[str, Any] = field(default_factory=dict)

    def to_doc(self) -> dict[str, Any]:
        return {
            "endpoint": self.endpoint,
            "statuses": list(self.statuses),
            "containers": self.containers,
            "monitor": self.monitor,
        }


def deploy(
    artifact: dict[str, Any],
    estimate: ResourceEstimate,
    deployment: DeploymentSpec,
    invoke: ToolInvoker,
    tool_id: str,
) -> DeploymentRecord:
    """Push an artifact to the platform tool and confirm it goes live."""
    if not estimate.fits_memory:
        raise MemoryExceeded(
            f"footprint {estimate.footprint_bytes} + overhead {estimate.overhead_bytes} "
            f"exceeds container memory {deployment.container_mem_bytes}"
        )
    result = invoke(
        tool_id,
        {
            "artifact": artifact,
            "containers": estimate.containers,
            "platform": deployment.platform,
            "qps_target": deployment.qps_min,
        },
    )
    if not result.ok or result.payload is None:
        raise PlatformRejected(result.log_excerpt or result.status.value)
    payload = result.payload
    statuses = tuple(payload["statuses"])
    if not statuses or statuses[-1] != "live":
        raise PlatformRejected(f"platform never reported live: {list(statuses)}")
    return DeploymentRecord(
        endpoint=payload["endpoint"],
        statuses=statuses,
        containers=estimate.containers,
        monitor=payload.get("monitor", {}),
    )
