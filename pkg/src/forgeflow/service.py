"""HTTP face of the kernel: create sessions, drive them, stream their events.

One process hosts many sessions; they share nothing but the fixture tree
they were loaded from. Every mutation runs the session to quiescence
before the response goes out, so a client that POSTs and then reads the
stream always sees the consequences of its own write. The stream is
plain server-sent events with the event seq as the SSE id, which makes
resumption a matter of passing `from` (or letting EventSource send
Last-Event-ID on reconnect).
"""

from __future__ import annotations

import asyncio
import json
from contextlib import asynccontextmanager
from pathlib import Path
from typing import Any, AsyncIterator

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, StreamingResponse

from . import __version__
from .agents.data import FormatError
from .gateway import Script, ScriptedBackend
from .protocol import canonical_encode
from .scenario import ScenarioError, build_config, load_scenario
from .session import (
    InvalidSessionState,
    Session,
    UnknownApproval,
)

_POLL_SECONDS = 0.02


class ServiceError(Exception):
    """An error with a wire shape: {code, message, details}."""

    def __init__(
        self, status: int, code: str, message: str, details: dict[str, Any] | None = None
    ) -> None:
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.details = details or {}


class SessionStore:
    """Sessions alive in this process, keyed by id."""

    def __init__(self, root: Path) -> None:
        self.root = root
        self._sessions: dict[str, Session] = {}
        self._serial = 0

    def create(self, scenario_ref: str, session_id: str | None = None) -> Session:
        path = self._resolve(scenario_ref)
        try:
            scenario = load_scenario(path)
        except (ScenarioError, OSError) as exc:
            raise ServiceError(
                400, "bad_scenario", f"cannot load scenario: {exc}", {"scenario": scenario_ref}
            ) from exc
        if not scenario.script:
            raise ServiceError(
                400, "bad_scenario", "scenario names no gateway script", {"scenario": scenario_ref}
            )
        if session_id is None:
            self._serial += 1
            session_id = f"s-{self._serial}"
        if session_id in self._sessions:
            raise ServiceError(
                409, "duplicate_session", f"session {session_id!r} already exists"
            )
        try:
            config = build_config(scenario, self.root, session_id=session_id)
            config.backend = ScriptedBackend(Script.load(self.root / scenario.script))
        except (ScenarioError, OSError, ValueError) as exc:
            raise ServiceError(
                400, "bad_scenario", f"cannot build session: {exc}", {"scenario": scenario_ref}
            ) from exc
        session = Session(config)
        self._sessions[session_id] = session
        return session

    def get(self, session_id: str) -> Session:
        session = self._sessions.get(session_id)
        if session is None:
            raise ServiceError(404, "unknown_session", f"no session {session_id!r}")
        return session

    def all(self) -> list[Session]:
        return list(self._sessions.values())

    def _resolve(self, ref: str) -> Path:
        """Accept a path relative to the root, or a bare scenario name."""
        candidates = [
            self.root / ref,
            self.root / "scenarios" / ref,
            self.root / "scenarios" / f"{ref}.yaml",
        ]
        for path in candidates:
            if path.is_file():
                return path
        raise ServiceError(404, "unknown_scenario", f"no scenario {ref!r}")


def _state_doc(session: Session) -> dict[str, Any]:
    return {
        "session_id": session.id,
        "state": session.state.value,
        "last_seq": len(session.events) - 1,
    }


def _guard_open(session: Session) -> None:
    if session.events.sealed:
        raise ServiceError(
            409,
            "session_terminal",
            f"session {session.id} ended {session.state.value}",
            {"state": session.state.value},
        )


def flush_event_logs(store: SessionStore, out_dir: Path) -> list[Path]:
    """Write every session's event log; used at shutdown so a killed
    service still leaves valid (prefix) logs behind."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for session in store.all():
        path = out_dir / f"{session.id}.events.jsonl"
        path.write_bytes(session.events.to_jsonl())
        written.append(path)
    return written


def create_app(root: str | Path, out_dir: str | Path | None = None) -> FastAPI:
    root = Path(root)
    store = SessionStore(root)

    @asynccontextmanager
    async def lifespan(app: FastAPI) -> AsyncIterator[None]:
        yield
        if out_dir is not None:
            flush_event_logs(store, Path(out_dir))

    app = FastAPI(title="forgeflow", version=__version__, lifespan=lifespan)
    app.state.store = store

    @app.exception_handler(ServiceError)
    async def on_service_error(request: Request, exc: ServiceError) -> JSONResponse:
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "details": exc.details},
        )

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(
        request: Request, exc: RequestValidationError
    ) -> JSONResponse:
        return JSONResponse(
            status_code=400,
            content={
                "code": "invalid_request",
                "message": "request body does not match the endpoint schema",
                "details": {"errors": json.loads(json.dumps(exc.errors(), default=str))},
            },
        )

    @app.get("/health")
    async def health() -> dict[str, str]:
        return {"status": "ok", "version": __version__}

    @app.post("/v1/sessions", status_code=201)
    async def create_session(body: dict[str, Any]) -> JSONResponse:
        ref = body.get("scenario")
        if not isinstance(ref, str) or not ref:
            raise ServiceError(400, "invalid_request", "body needs a scenario path or name")
        session_id = body.get("session_id")
        if session_id is not None and not isinstance(session_id, str):
            raise ServiceError(400, "invalid_request", "session_id must be a string")
        session = store.create(ref, session_id)
        return JSONResponse(status_code=201, content=_state_doc(session))

    @app.post("/v1/sessions/{session_id}/messages", status_code=202)
    async def post_message(session_id: str, body: dict[str, Any]) -> JSONResponse:
        session = store.get(session_id)
        text = body.get("text")
        if not isinstance(text, str) or not text.strip():
            raise ServiceError(400, "invalid_request", "body needs non-empty text")
        _guard_open(session)
        session.post_message(text)
        return JSONResponse(status_code=202, content=_state_doc(session))

    @app.post("/v1/sessions/{session_id}/approvals/{approval_id}")
    async def resolve_approval(
        session_id: str, approval_id: str, body: dict[str, Any]
    ) -> dict[str, Any]:
        session = store.get(session_id)
        approved = body.get("approved")
        if not isinstance(approved, bool):
            raise ServiceError(400, "invalid_request", "body needs a boolean approved field")
        by = body.get("by", "user")
        if not isinstance(by, str):
            raise ServiceError(400, "invalid_request", "by must be a string")
        try:
            session.resolve_approval(approval_id, approved, by=by)
        except UnknownApproval as exc:
            raise ServiceError(
                404, "unknown_approval", f"no approval {approval_id!r}",
                {"approval_id": approval_id},
            ) from exc
        except InvalidSessionState as exc:
            approval = session.approvals.get(approval_id)
            code = "already_resolved" if approval and approval.resolved else "session_terminal"
            raise ServiceError(409, code, str(exc), {"approval_id": approval_id}) from exc
        return _state_doc(session)

    @app.post("/v1/sessions/{session_id}/datasets", status_code=201)
    async def upload_dataset(session_id: str, body: dict[str, Any]) -> JSONResponse:
        session = store.get(session_id)
        name, content = body.get("name"), body.get("content")
        if not isinstance(name, str) or not name:
            raise ServiceError(400, "invalid_request", "body needs a dataset name")
        if not isinstance(content, str):
            raise ServiceError(400, "invalid_request", "body needs string content")
        _guard_open(session)
        try:
            received = session.upload_dataset(name, content)
        except FormatError as exc:
            raise ServiceError(
                400, "format_error", str(exc), {"line": exc.line, "reason": exc.reason}
            ) from exc
        return JSONResponse(status_code=201, content={**_state_doc(session), **received})

    @app.get("/v1/sessions/{session_id}/events")
    async def stream_events(
        session_id: str, request: Request, from_seq: int = 0
    ) -> StreamingResponse:
        session = store.get(session_id)
        start = from_seq
        if "from" in request.query_params:
            try:
                start = int(request.query_params["from"])
            except ValueError as exc:
                raise ServiceError(400, "invalid_request", "from must be an integer") from exc
        elif "Last-Event-ID" in request.headers:
            try:
                start = int(request.headers["Last-Event-ID"]) + 1
            except ValueError:
                start = 0
        if start < 0:
            raise ServiceError(400, "invalid_request", "from must be >= 0")

        async def frames() -> AsyncIterator[bytes]:
            cursor = start
            while True:
                for event in session.events.events(from_seq=cursor):
                    cursor = event.seq + 1
                    data = canonical_encode(event.to_doc())
                    yield b"id: %d\ndata: %s\n\n" % (event.seq, data)
                if session.events.sealed:
                    yield b"event: done\ndata: {}\n\n"
                    return
                if await request.is_disconnected():
                    return
                await asyncio.sleep(_POLL_SECONDS)

        return StreamingResponse(
            frames(),
            media_type="text/event-stream",
            headers={"Cache-Control": "no-cache", "X-Accel-Buffering": "no"},
        )

    return app
