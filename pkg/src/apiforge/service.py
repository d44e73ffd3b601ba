"""HTTP service over sessions: JSON endpoints for the CLI and the web
client, with newline-delimited JSON event streaming and cursor resume.

Every mutating endpoint appends one line to the session's
operations.jsonl so an exported session can be replayed step by step
against a fresh session.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable, Iterator

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel

from .errors import CommandError, ForgeError, PhaseError, SessionStoreError
from .runtime_tools import status_to_dict, summary_to_dict
from .session import (PROBE_REPORT_FILENAME, Session, SessionConfig,
                      SessionEvent, config_from_dict, config_to_dict,
                      create_session, load_session)

OPERATIONS_FILENAME = "operations.jsonl"


class SessionManager:
    """Holds live sessions, one lock and one change condition per session.

    deps_factory(config, session_id) may supply gateway/runner/clock/timer
    keyword arguments for create_session, which keeps tests and replay runs
    fully injected without the manager knowing the details.
    """

    def __init__(self, workspace_root: str | Path, *,
                 deps_factory: Callable[[SessionConfig, str],
                                        dict[str, Any]] | None = None,
                 id_factory: Callable[[], str] | None = None):
        self.workspace_root = Path(workspace_root)
        self.deps_factory = deps_factory or (lambda config, sid: {})
        self.id_factory = id_factory
        self._sessions: dict[str, Session] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._conditions: dict[str, threading.Condition] = {}
        self._registry_lock = threading.Lock()

    def create(self, config: SessionConfig,
               session_id: str | None = None) -> Session:
        if session_id is None and self.id_factory is not None:
            session_id = self.id_factory()
        deps = self.deps_factory(config, session_id or "")
        session = create_session(config, self.workspace_root,
                                 session_id=session_id, **deps)
        with self._registry_lock:
            self._sessions[session.session_id] = session
            self._locks[session.session_id] = threading.Lock()
            self._conditions[session.session_id] = threading.Condition()
        return session

    def get(self, session_id: str) -> Session:
        with self._registry_lock:
            if session_id in self._sessions:
                return self._sessions[session_id]
        state_path = self.workspace_root / session_id / "state.json"
        if not state_path.exists():
            raise KeyError(session_id)
        config = config_from_dict(
            json.loads(state_path.read_text(encoding="utf-8"))["config"])
        deps = self.deps_factory(config, session_id)
        session = load_session(session_id, self.workspace_root, **deps)
        with self._registry_lock:
            self._sessions.setdefault(session_id, session)
            self._locks.setdefault(session_id, threading.Lock())
            self._conditions.setdefault(session_id, threading.Condition())
            return self._sessions[session_id]

    def list_ids(self) -> list[str]:
        with self._registry_lock:
            known = set(self._sessions)
        if self.workspace_root.exists():
            for child in self.workspace_root.iterdir():
                if (child / "state.json").exists():
                    known.add(child.name)
        return sorted(known)

    def lock(self, session_id: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks[session_id]

    def condition(self, session_id: str) -> threading.Condition:
        with self._registry_lock:
            return self._conditions[session_id]

    def notify(self, session_id: str) -> None:
        condition = self.condition(session_id)
        with condition:
            condition.notify_all()


class CreateSessionBody(BaseModel):
    config: dict[str, Any] = {}
    session_id: str | None = None


class MessageBody(BaseModel):
    text: str


class FinalizeBody(BaseModel):
    spec_text: str | None = None


class FixBody(BaseModel):
    issue: str


def _event_dicts(events: list[SessionEvent]) -> list[dict[str, Any]]:
    return [e.to_dict() for e in events]


def _session_summary(session: Session) -> dict[str, Any]:
    return {
        "session_id": session.session_id,
        "phase": session.phase,
        "fix_iterations": session.fix_iterations,
        "spec_versions": [asdict(v) for v in session.spec_versions],
        "tree_versions": session.tree_versions,
        "event_count": len(session.events),
    }


def _merged_config(overrides: dict[str, Any]) -> SessionConfig:
    base = config_to_dict(SessionConfig())
    for key, value in overrides.items():
        if key not in base:
            raise ValueError(f"unknown config field: {key}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            base[key] = {**base[key], **value}
        else:
            base[key] = value
    return config_from_dict(base)


def create_app(manager: SessionManager) -> FastAPI:
    app = FastAPI(title="apiforge", docs_url=None, redoc_url=None)

    @app.exception_handler(PhaseError)
    async def _phase_error(request: Request, exc: PhaseError):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.exception_handler(CommandError)
    async def _command_error(request: Request, exc: CommandError):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.exception_handler(SessionStoreError)
    async def _store_error(request: Request, exc: SessionStoreError):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.exception_handler(ForgeError)
    async def _forge_error(request: Request, exc: ForgeError):
        return JSONResponse(status_code=500, content={"detail": str(exc)})

    def fetch(session_id: str) -> Session:
        try:
            return manager.get(session_id)
        except KeyError:
            raise HTTPException(status_code=404,
                                detail=f"unknown session: {session_id}")

    def journal_operation(session: Session, op: str,
                          args: dict[str, Any]) -> None:
        record = {"op": op, "args": args}
        with open(session.workspace / OPERATIONS_FILENAME, "a",
                  encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=True))
            fh.write("\n")

    @app.get("/")
    def root() -> dict[str, Any]:
        from . import __version__
        return {"service": "apiforge", "version": __version__}

    @app.post("/sessions", status_code=201)
    def create_session_endpoint(body: CreateSessionBody) -> dict[str, Any]:
        try:
            config = _merged_config(body.config)
        except (ValueError, TypeError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        session = manager.create(config, session_id=body.session_id)
        return {"session_id": session.session_id, "phase": session.phase}

    @app.get("/sessions")
    def list_sessions() -> dict[str, Any]:
        rows = []
        for session_id in manager.list_ids():
            session = fetch(session_id)
            rows.append({"session_id": session_id, "phase": session.phase})
        return {"sessions": rows}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str) -> dict[str, Any]:
        return _session_summary(fetch(session_id))

    def _mutate(session_id: str, op: str, args: dict[str, Any],
                action: Callable[[Session], Any]) -> Any:
        session = fetch(session_id)
        with manager.lock(session_id):
            journal_operation(session, op, args)
            try:
                result = action(session)
            finally:
                session.persist()
                manager.notify(session_id)
        return result

    @app.post("/sessions/{session_id}/messages")
    def post_message(session_id: str, body: MessageBody) -> dict[str, Any]:
        events = _mutate(session_id, "message", {"text": body.text},
                         lambda s: s.handle_user_message(body.text))
        session = fetch(session_id)
        return {"events": _event_dicts(events), "phase": session.phase}

    @app.post("/sessions/{session_id}/finalize")
    def finalize(session_id: str, body: FinalizeBody) -> dict[str, Any]:
        events = _mutate(session_id, "finalize",
                         {"spec_text": body.spec_text},
                         lambda s: s.finalize_spec(body.spec_text))
        session = fetch(session_id)
        return {"events": _event_dicts(events), "phase": session.phase}

    @app.post("/sessions/{session_id}/generate")
    def generate(session_id: str) -> dict[str, Any]:
        events = _mutate(session_id, "generate", {},
                         lambda s: s.generate_code())
        session = fetch(session_id)
        return {"events": _event_dicts(events), "phase": session.phase}

    @app.post("/sessions/{session_id}/run")
    def run(session_id: str) -> dict[str, Any]:
        events = _mutate(session_id, "run", {}, lambda s: s.launch())
        session = fetch(session_id)
        return {"events": _event_dicts(events), "phase": session.phase}

    @app.post("/sessions/{session_id}/probe")
    def probe(session_id: str) -> dict[str, Any]:
        report = _mutate(session_id, "probe", {}, lambda s: s.run_probes())
        return report

    @app.post("/sessions/{session_id}/fix")
    def fix(session_id: str, body: FixBody) -> dict[str, Any]:
        record = _mutate(session_id, "fix", {"issue": body.issue},
                         lambda s: s.fix_loop(body.issue))
        return {"iterations": record.iterations, "resolved": record.resolved,
                "events": _event_dicts(list(record.events))}

    @app.post("/sessions/{session_id}/close")
    def close(session_id: str) -> dict[str, Any]:
        _mutate(session_id, "close", {}, lambda s: s.close())
        return {"phase": fetch(session_id).phase}

    @app.get("/sessions/{session_id}/status")
    def status(session_id: str) -> dict[str, Any]:
        session = fetch(session_id)
        with manager.lock(session_id):
            statuses = session.service_status()
        return {"services": [status_to_dict(s) for s in statuses]}

    @app.get("/sessions/{session_id}/logs")
    def logs(session_id: str, tail: int | None = None) -> dict[str, Any]:
        session = fetch(session_id)
        with manager.lock(session_id):
            bundle, summaries = session.service_logs(tail)
        rendered = {
            name: [f"{line.timestamp} {line.text}".strip() for line in lines]
            for name, lines in bundle.per_service.items()
        }
        return {"logs": rendered,
                "error_summaries": [summary_to_dict(s) for s in summaries]}

    @app.get("/sessions/{session_id}/events")
    def events(session_id: str, after: int = 0) -> dict[str, Any]:
        session = fetch(session_id)
        suffix = [e for e in session.events if e.seq > after]
        cursor = suffix[-1].seq if suffix else after
        return {"events": _event_dicts(suffix), "cursor": cursor}

    @app.get("/sessions/{session_id}/events/stream")
    def stream(session_id: str, after: int = 0, follow: bool = False,
               idle_timeout: float = 30.0) -> StreamingResponse:
        fetch(session_id)

        def generate() -> Iterator[str]:
            cursor = after
            deadline = time.monotonic() + idle_timeout
            condition = manager.condition(session_id)
            while True:
                session = fetch(session_id)
                fresh = [e for e in session.events if e.seq > cursor]
                for event in fresh:
                    cursor = event.seq
                    yield json.dumps(event.to_dict(), sort_keys=True,
                                     ensure_ascii=True) + "\n"
                if fresh:
                    deadline = time.monotonic() + idle_timeout
                    continue
                if not follow:
                    return
                if session.phase == "Closed":
                    return
                if time.monotonic() >= deadline:
                    return
                with condition:
                    condition.wait(timeout=0.25)

        return StreamingResponse(generate(),
                                 media_type="application/x-ndjson")

    @app.get("/sessions/{session_id}/artifacts")
    def artifacts(session_id: str) -> dict[str, Any]:
        session = fetch(session_id)
        return {
            "spec_versions": [asdict(v) for v in session.spec_versions],
            "tree_versions": session.tree_versions,
            "probe_report": (session.workspace
                             / PROBE_REPORT_FILENAME).exists(),
        }

    @app.get("/sessions/{session_id}/artifacts/spec")
    def artifact_spec(session_id: str,
                      version: int | None = None) -> dict[str, Any]:
        session = fetch(session_id)
        if not session.spec_versions:
            raise HTTPException(status_code=404, detail="no spec saved yet")
        if version is None:
            record = session.spec_versions[-1]
        else:
            matches = [v for v in session.spec_versions
                       if v.version_index == version]
            if not matches:
                raise HTTPException(status_code=404,
                                    detail=f"no spec version {version}")
            record = matches[0]
        text = (session.workspace / record.file_path).read_text(
            encoding="utf-8")
        return {"version": record.version_index, "path": record.file_path,
                "digest": record.digest, "text": text}

    @app.get("/sessions/{session_id}/artifacts/tree")
    def artifact_tree(session_id: str,
                      version: int | None = None) -> dict[str, Any]:
        session = fetch(session_id)
        if not session.tree_versions:
            raise HTTPException(status_code=404, detail="no tree saved yet")
        if version is None:
            record = session.tree_versions[-1]
        else:
            matches = [v for v in session.tree_versions
                       if v["version_index"] == version]
            if not matches:
                raise HTTPException(status_code=404,
                                    detail=f"no tree version {version}")
            record = matches[0]
        text = (session.workspace / record["file_path"]).read_text(
            encoding="utf-8")
        return {"version": record["version_index"],
                "path": record["file_path"], "digest": record["digest"],
                "entries": json.loads(text)}

    @app.get("/sessions/{session_id}/artifacts/probe-report")
    def artifact_probe_report(session_id: str) -> dict[str, Any]:
        session = fetch(session_id)
        path = session.workspace / PROBE_REPORT_FILENAME
        if not path.exists():
            raise HTTPException(status_code=404, detail="no probe report yet")
        return json.loads(path.read_text(encoding="utf-8"))

    @app.get("/sessions/{session_id}/export")
    def export(session_id: str) -> dict[str, Any]:
        session = fetch(session_id)
        operations: list[dict[str, Any]] = []
        ops_path = session.workspace / OPERATIONS_FILENAME
        if ops_path.exists():
            for line in ops_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    operations.append(json.loads(line))
        specs = {}
        for record in session.spec_versions:
            specs[record.file_path] = (
                session.workspace / record.file_path).read_text(
                    encoding="utf-8")
        trees = {}
        for record in session.tree_versions:
            trees[record["file_path"]] = (
                session.workspace / record["file_path"]).read_text(
                    encoding="utf-8")
        report_path = session.workspace / PROBE_REPORT_FILENAME
        report = (json.loads(report_path.read_text(encoding="utf-8"))
                  if report_path.exists() else None)
        return {
            "state": _session_summary(session),
            "config": config_to_dict(session.config),
            "events": _event_dicts(session.events),
            "operations": operations,
            "artifacts": {"specs": specs, "trees": trees,
                          "probe_report": report},
        }

    app.state.manager = manager
    return app


def build_default_app(workspace_root: str | Path) -> FastAPI:
    return create_app(SessionManager(workspace_root))
