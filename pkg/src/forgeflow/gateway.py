"""Single choke point for language-model calls.

Three backends share one interface: a live HTTP client, a scripted
replayer for deterministic tests, and a recorder that wraps any backend
and writes a transcript the scripted replayer can consume later. No
other module talks to a model endpoint; the gateway alone holds
credentials.

Scripts come in two modes that can mix in one file. Queue entries (no
digest) answer calls in order and are consumed once. Digest entries
answer any call whose conversation digest matches and are never
consumed, which makes replay robust to benign call reordering.

Transcript file format: one canonical-JSON record per line, shaped
{digest, reply, tag}.
"""

from __future__ import annotations

import enum
import hashlib
import json
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Protocol

import httpx

from .protocol import canonical_encode

# digest of the empty turn list: sha256(b"[]")[:16]
EMPTY_DIGEST = "4f53cda18c2baa0c"

ENDPOINT_VAR = "FF_LLM_ENDPOINT"
API_KEY_VAR = "FF_LLM_API_KEY"
MODEL_VAR = "FF_LLM_MODEL"


class Role(str, enum.Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"
    TOOL = "tool"


@dataclass(frozen=True)
class ChatTurn:
    role: Role
    content: str

    def to_doc(self) -> dict[str, str]:
        return {"role": self.role.value, "content": self.content}


@dataclass(frozen=True)
class Params:
    temperature: float = 0.0
    max_tokens: int = 1024


@dataclass(frozen=True)
class CompletionRequest:
    turns: tuple[ChatTurn, ...]
    params: Params = Params()
    tag: str = ""


class GatewayError(Exception):
    """Base class for completion failures."""


class TransportError(GatewayError):
    """The live endpoint could not produce a reply."""


class ScriptExhausted(GatewayError):
    """A scripted backend ran out of entries."""


class ScriptMismatch(GatewayError):
    """No script entry matches the requested conversation digest."""


class FixtureError(GatewayError):
    """A script or transcript file is internally inconsistent."""


def digest(turns: Iterable[ChatTurn]) -> str:
    """Stable 64-bit hex fingerprint of a conversation.

    The digest of the empty turn list is EMPTY_DIGEST.
    """
    data = canonical_encode([t.to_doc() for t in turns])
    return hashlib.sha256(data).hexdigest()[:16]


class Backend(Protocol):
    def complete(self, req: CompletionRequest) -> str: ...


def _check_request(req: CompletionRequest) -> None:
    if not req.turns:
        raise ValueError("completion request needs at least one turn")
    if req.turns[0].role is not Role.SYSTEM:
        raise ValueError("first turn must be the system profile")
    for turn in req.turns:
        if not isinstance(turn.content, str):
            raise ValueError("turn content must be text")
    if req.params.max_tokens <= 0:
        raise ValueError("max_tokens must be positive")


def complete(backend: Backend, req: CompletionRequest) -> str:
    """Run one completion against any backend, checking request invariants."""
    _check_request(req)
    return backend.complete(req)


@dataclass(frozen=True)
class ScriptEntry:
    reply: str
    match: str | None = None  # digest of the turns this entry answers, None = next in queue
    tag: str = ""


class Script:
    """Replayable replies: an ordered queue plus a digest-keyed map."""

    def __init__(self, entries: Iterable[ScriptEntry] = ()) -> None:
        self.queue: list[ScriptEntry] = []
        self.by_digest: dict[str, ScriptEntry] = {}
        for entry in entries:
            self.add(entry)

    def add(self, entry: ScriptEntry) -> None:
        if entry.match is None:
            self.queue.append(entry)
            return
        known = self.by_digest.get(entry.match)
        if known is not None and known.reply != entry.reply:
            raise FixtureError(f"digest {entry.match} recorded with two different replies")
        self.by_digest[entry.match] = entry

    @classmethod
    def load(cls, path: str | Path) -> "Script":
        """Read a JSONL script or transcript file."""
        script = cls()
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FixtureError(f"{path}:{lineno}: not JSON: {exc.msg}") from exc
            if not isinstance(doc, dict) or "reply" not in doc:
                raise FixtureError(f"{path}:{lineno}: expected an object with a reply field")
            script.add(
                ScriptEntry(
                    reply=doc["reply"], match=doc.get("digest"), tag=doc.get("tag", "")
                )
            )
        return script


class ScriptedBackend:
    """Deterministic replay. Digest entries win; queue entries fill the rest."""

    def __init__(self, script: Script) -> None:
        self._script = script
        self._cursor = 0

    def complete(self, req: CompletionRequest) -> str:
        req = replace(req, params=replace(req.params, temperature=0.0))
        d = digest(req.turns)
        hit = self._script.by_digest.get(d)
        if hit is not None:
            return hit.reply
        if self._cursor < len(self._script.queue):
            entry = self._script.queue[self._cursor]
            self._cursor += 1
            return entry.reply
        if self._script.by_digest:
            raise ScriptMismatch(f"no entry for digest {d} (tag {req.tag!r})")
        raise ScriptExhausted(f"script exhausted at call {self._cursor + 1} (tag {req.tag!r})")


class RecordingBackend:
    """Wraps another backend and appends {digest, reply, tag} per call."""

    def __init__(self, inner: Backend, transcript_path: str | Path) -> None:
        self._inner = inner
        self._path = Path(transcript_path)
        self._seen: dict[str, str] = {}

    def complete(self, req: CompletionRequest) -> str:
        req = replace(req, params=replace(req.params, temperature=0.0))
        d = digest(req.turns)
        reply = self._inner.complete(req)
        known = self._seen.get(d)
        if known is not None and known != reply:
            raise FixtureError(f"digest {d} produced two different replies while recording")
        self._seen[d] = reply
        record = canonical_encode({"digest": d, "reply": reply, "tag": req.tag})
        with self._path.open("ab") as fh:
            fh.write(record + b"\n")
        return reply


class LiveBackend:
    """De-facto chat-completions convention: POST, bearer token, messages array."""

    def __init__(
        self,
        endpoint: str,
        api_key: str,
        model: str,
        client: httpx.Client | None = None,
    ) -> None:
        self._endpoint = endpoint
        self._api_key = api_key
        self._model = model
        self._client = client or httpx.Client(timeout=60.0)

    @classmethod
    def from_env(cls, client: httpx.Client | None = None) -> "LiveBackend":
        endpoint = os.environ.get(ENDPOINT_VAR, "")
        if not endpoint:
            raise TransportError(f"{ENDPOINT_VAR} is not set")
        return cls(
            endpoint=endpoint,
            api_key=os.environ.get(API_KEY_VAR, ""),
            model=os.environ.get(MODEL_VAR, ""),
            client=client,
        )

    def complete(self, req: CompletionRequest) -> str:
        body = {
            "model": self._model,
            "messages": [t.to_doc() for t in req.turns],
            "temperature": req.params.temperature,
            "max_tokens": req.params.max_tokens,
        }
        headers = {"Authorization": f"Bearer {self._api_key}"}
        try:
            response = self._client.post(self._endpoint, json=body, headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if response.status_code != 200:
            raise TransportError(f"endpoint returned {response.status_code}")
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise TransportError(f"malformed completion response: {exc}") from exc


class LoggedBackend:
    """Reports every call (digests only, never content) to an observer.

    The session kernel uses this to put gateway activity in the Event
    log in a backend-independent shape, which is what makes recorded and
    replayed runs byte-comparable.
    """

    def __init__(self, inner: Backend, on_call: Callable[[str, str, str], None]) -> None:
        self._inner = inner
        self._on_call = on_call

    def complete(self, req: CompletionRequest) -> str:
        reply = self._inner.complete(req)
        reply_digest = hashlib.sha256(reply.encode("utf-8")).hexdigest()[:16]
        self._on_call(req.tag, digest(req.turns), reply_digest)
        return reply
