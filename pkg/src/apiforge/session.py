"""Session orchestration: the pipeline phase machine, event log, bounded
fix loop, artifact versioning, and persistence.

A session owns one workspace directory. Every state change is visible as a
SessionEvent with a gapless seq, appended to events.jsonl as it happens;
spec versions, tree snapshots, the probe journal, and the probe report live
next to it as plain files. All paths in persisted records are relative to
the workspace so a session is byte-comparable across machines.
"""

from __future__ import annotations

import hashlib
import json
import time
import uuid
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable

from . import agents, codetree, probe_engine, runtime_tools, spec_engine
from .agents import AgentRole, GenerationDirectives
from .codetree import FileTree
from .errors import (CommandError, ForgeError, PhaseError, SessionStoreError,
                     SpecError, TreeError)
from .llm_gateway import (BackendConfig, ChatTurn, Gateway, ToolCall,
                          ToolSchema, turn_from_wire, turn_to_wire)
from .runtime_tools import (FakeProcessRunner, LogBundle, ProcessRunner,
                            ServiceStatus, SubprocessRunner, ToolRegistry,
                            build_registry, extract_errors)
from .spec_engine import SpecVersion

PHASES = ("Drafting", "Finalized", "Generated", "Running", "Fixing", "Closed")

LEGAL_TRANSITIONS = frozenset(
    {("Drafting", "Finalized"), ("Finalized", "Generated"),
     ("Generated", "Running"), ("Running", "Fixing"), ("Fixing", "Running")}
    | {(phase, "Closed") for phase in PHASES if phase != "Closed"}
)

EVENT_KINDS = ("user_msg", "agent_msg", "tool_call", "tool_result",
               "phase_change", "artifact_saved", "error")

STATE_FILENAME = "state.json"
EVENTS_FILENAME = "events.jsonl"
TRANSCRIPTS_FILENAME = "transcripts.json"
JOURNAL_FILENAME = "journal.jsonl"
PROBE_REPORT_FILENAME = "probe_report.json"


def is_legal_transition(current: str, target: str) -> bool:
    return (current, target) in LEGAL_TRANSITIONS


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class SessionConfig:
    max_fix_iterations: int = 5
    max_tool_rounds: int = 8
    backend: BackendConfig = field(default_factory=BackendConfig)
    directives: GenerationDirectives = field(default_factory=GenerationDirectives)
    service_base_url: str = "http://127.0.0.1:3000"
    engine_binary: str = "docker"
    root_label: str = codetree.DEFAULT_ROOT_LABEL
    command_timeout: float = 180.0
    http_timeout: float = 10.0
    log_tail: int = runtime_tools.DEFAULT_LOG_TAIL
    auto_continue: bool = False  # fix_loop iterates past one round per call

    def __post_init__(self):
        if self.max_fix_iterations < 1 or self.max_tool_rounds < 1:
            raise ValueError("iteration bounds must be at least 1")


def config_to_dict(config: SessionConfig) -> dict[str, Any]:
    data = asdict(config)
    return data


def config_from_dict(data: dict[str, Any]) -> SessionConfig:
    data = dict(data)
    data["backend"] = BackendConfig(**data.get("backend", {}))
    data["directives"] = GenerationDirectives(**data.get("directives", {}))
    return SessionConfig(**data)


@dataclass(frozen=True)
class SessionEvent:
    seq: int
    kind: str
    payload: dict[str, Any]
    at: str

    def to_dict(self) -> dict[str, Any]:
        return {"seq": self.seq, "kind": self.kind, "at": self.at,
                "payload": self.payload}


def event_from_dict(data: dict[str, Any]) -> SessionEvent:
    return SessionEvent(seq=data["seq"], kind=data["kind"],
                        payload=data.get("payload", {}), at=data.get("at", ""))


def replay_phases(events: Iterable[SessionEvent],
                  initial: str = "Drafting") -> str:
    """Walk phase_change events, enforcing the declared edges; returns the
    final phase. Any illegal edge raises."""
    phase = initial
    for event in events:
        if event.kind != "phase_change":
            continue
        source = event.payload.get("from")
        target = event.payload.get("to")
        if source != phase:
            raise SessionStoreError(
                f"event {event.seq}: phase_change from {source!r} but the "
                f"session was in {phase!r}")
        if not is_legal_transition(source, target):
            raise SessionStoreError(
                f"event {event.seq}: illegal transition {source} -> {target}")
        phase = target
    return phase


@dataclass(frozen=True)
class LoopRecord:
    iterations: int
    resolved: bool
    events: tuple[SessionEvent, ...] = ()


class Session:
    """One pipeline run. Not thread-safe by itself; the service layer holds
    one lock per session."""

    def __init__(self, *, session_id: str, config: SessionConfig,
                 workspace: Path, gateway: Any, runner: ProcessRunner,
                 registry: ToolRegistry | None = None,
                 clock: Callable[[], str] | None = None,
                 timer: Callable[[], float] | None = None):
        self.session_id = session_id
        self.config = config
        self.workspace = Path(workspace)
        self.gateway = gateway
        self.runner = runner
        self.registry = registry or build_registry()
        self.clock = clock or _utc_now
        self.timer = timer or time.perf_counter
        self.phase = "Drafting"
        self.spec_versions: list[SpecVersion] = []
        self.tree_versions: list[dict[str, Any]] = []
        self.raw_tree_count = 0
        self.fix_iterations = 0
        self.events: list[SessionEvent] = []
        self.transcripts: dict[str, list[ChatTurn]] = {}
        self.current_tree: FileTree | None = None
        self.last_log_bundle: LogBundle | None = None
        self._roles: dict[str, AgentRole] = {}
        self._events_path = self.workspace / EVENTS_FILENAME

    # --- plumbing the agents and tools depend on ---

    @property
    def directives(self) -> GenerationDirectives:
        return self.config.directives

    @property
    def root_label(self) -> str:
        return self.config.root_label

    @property
    def code_root(self) -> Path:
        return self.workspace / self.config.root_label

    @property
    def engine_binary(self) -> str:
        return self.config.engine_binary

    @property
    def command_timeout(self) -> float:
        return self.config.command_timeout

    @property
    def http_timeout(self) -> float:
        return self.config.http_timeout

    @property
    def allowed_hosts(self) -> frozenset[str]:
        from urllib.parse import urlsplit
        return frozenset({urlsplit(self.config.service_base_url).netloc})

    def role(self, name: str) -> AgentRole:
        if name not in self._roles:
            self._roles[name] = agents.load_role(name)
        return self._roles[name]

    def transcript(self, role_name: str) -> list[ChatTurn]:
        return self.transcripts[role_name]

    def tool_schemas(self, names: Iterable[str]) -> list[ToolSchema]:
        return self.registry.schemas(names)

    def record_task_transcript(self, role_name: str,
                               turns: list[ChatTurn]) -> None:
        self.transcripts.setdefault(role_name, []).extend(turns)

    def record_raw_tree(self, raw: str) -> None:
        self.raw_tree_count += 1
        name = f"raw_tree.v{self.raw_tree_count}.txt"
        (self.workspace / name).write_text(raw, encoding="utf-8")

    def journal_append(self, record: dict[str, Any]) -> None:
        with open(self.workspace / JOURNAL_FILENAME, "a",
                  encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=True))
            fh.write("\n")

    def last_error_summaries(self) -> list[runtime_tools.ErrorSummary]:
        if self.last_log_bundle is None:
            return []
        return extract_errors(self.last_log_bundle)

    def note_log_bundle(self, bundle: LogBundle) -> None:
        self.last_log_bundle = bundle

    def note_compose_result(self, ok: bool) -> None:
        if ok and self.phase in ("Generated", "Fixing"):
            self._transition("Running")

    def run_code_fixer(self, tree: FileTree, issue: str) -> FileTree:
        return agents.code_fixer_run(self, tree, issue)

    # --- events ---

    def _emit(self, kind: str, payload: dict[str, Any]) -> SessionEvent:
        event = SessionEvent(seq=len(self.events) + 1, kind=kind,
                             payload=payload, at=self.clock())
        self.events.append(event)
        with open(self._events_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event.to_dict(), sort_keys=True,
                                ensure_ascii=True))
            fh.write("\n")
        return event

    def _transition(self, target: str) -> None:
        if target == self.phase:
            return
        if not is_legal_transition(self.phase, target):
            raise PhaseError(f"illegal transition {self.phase} -> {target}")
        payload = {"from": self.phase, "to": target}
        self.phase = target
        self._emit("phase_change", payload)

    # --- tool dispatch (the only way anything executes) ---

    def dispatch_tool(self, actor: str, call: ToolCall) -> dict[str, Any]:
        try:
            arguments = json.loads(call.arguments)
            if not isinstance(arguments, dict):
                arguments = {}
        except json.JSONDecodeError:
            arguments = {}
        return self._run_tool(call.name, arguments, actor)

    def _run_tool(self, name: str, arguments: dict[str, Any],
                  actor: str) -> dict[str, Any]:
        self._emit("tool_call",
                   {"actor": actor, "name": name, "arguments": arguments})
        result = self.registry.dispatch(self, name, arguments)
        self._emit("tool_result", {"name": name, "result": result})
        return result

    # --- artifact saves (called by tool executors) ---

    def save_spec(self, spec_text: str) -> dict[str, Any]:
        try:
            version = spec_engine.save_spec_text(
                spec_text, self.workspace,
                version_index=len(self.spec_versions) + 1,
                saved_at=self.clock())
        except SpecError as exc:
            return {"ok": False,
                    "error": {"type": "validation", "message": str(exc)},
                    "findings": [str(f) for f in exc.findings]}
        self.spec_versions.append(version)
        self._emit("artifact_saved", {
            "artifact": "spec", "version": version.version_index,
            "path": version.file_path, "digest": version.digest})
        if self.phase == "Drafting":
            self._transition("Finalized")
        return {"ok": True, "version": version.version_index,
                "path": version.file_path, "digest": version.digest}

    def save_tree_json(self, raw: str) -> dict[str, Any]:
        if self.phase not in ("Finalized", "Generated", "Running", "Fixing"):
            return {"ok": False, "error": {
                "type": "precondition",
                "message": "a specification must be finalized before code "
                           "is saved"}}
        repaired, report = codetree.repair_json(raw)
        try:
            tree = codetree.parse_filetree(repaired,
                                           root_label=self.config.root_label)
        except TreeError as exc:
            return {"ok": False,
                    "error": {"type": "parse", "message": str(exc)}}
        result = self.save_tree(tree)
        if result.get("ok") and report.changed:
            result["repair_rules"] = list(report.rules_applied)
        return result

    def save_tree(self, tree: FileTree, *, changed_paths: list[str]
                  | None = None, fixing: bool = False) -> dict[str, Any]:
        findings = codetree.validate_tree(tree, self.directives)
        if findings:
            return {"ok": False,
                    "error": {"type": "validation",
                              "message": "; ".join(str(f) for f in findings)},
                    "findings": [str(f) for f in findings]}
        self.code_root.mkdir(parents=True, exist_ok=True)
        try:
            write_report = codetree.materialize(tree, self.code_root)
        except TreeError as exc:
            return {"ok": False,
                    "error": {"type": "write", "message": str(exc)}}
        serialized = codetree.serialize_filetree(tree)
        version = len(self.tree_versions) + 1
        snapshot_name = f"tree.v{version}.json"
        (self.workspace / snapshot_name).write_text(serialized,
                                                    encoding="utf-8")
        digest = hashlib.sha256(serialized.encode("utf-8")).hexdigest()
        self.tree_versions.append({"version_index": version,
                                   "file_path": snapshot_name,
                                   "digest": digest})
        self.current_tree = tree
        self._emit("artifact_saved", {
            "artifact": "tree", "version": version, "path": snapshot_name,
            "digest": digest, "files_written": write_report.files_written,
            "skipped_identical": write_report.skipped_identical})
        if fixing:
            if self.phase == "Running":
                self._transition("Fixing")
        elif self.phase == "Finalized":
            self._transition("Generated")
        result: dict[str, Any] = {
            "ok": True, "version": version,
            "files_written": write_report.files_written,
            "skipped_identical": write_report.skipped_identical,
        }
        if changed_paths is not None:
            result["changed_paths"] = changed_paths
        return result

    # --- user-facing operations ---

    def handle_user_message(self, text: str) -> list[SessionEvent]:
        start = len(self.events)
        if self.phase == "Closed":
            self._emit("error", {"type": "phase",
                                 "message": "session is closed"})
            return self.events[start:]
        self._emit("user_msg", {"text": text})
        try:
            if self.phase in ("Drafting", "Finalized"):
                reply, _, _ = agents.spec_generator_step(self, text)
                role_name = "spec_generator"
            else:
                reply, _ = agents.code_tester_step(self, text)
                role_name = "code_tester"
            if reply:
                self._emit("agent_msg", {"role": role_name, "text": reply})
        except ForgeError as exc:
            self._emit("error", {"type": type(exc).__name__,
                                 "message": str(exc)})
        return self.events[start:]

    def finalize_spec(self, spec_text: str | None = None) -> list[SessionEvent]:
        """Explicit finalize: save the given text, or ask the drafting agent
        to save what stands."""
        start = len(self.events)
        if spec_text is not None:
            self._run_tool("save_openapi_spec", {"spec_text": spec_text},
                           actor="user")
        else:
            self.handle_user_message(
                "The specification is final. Save it now.")
        return self.events[start:]

    def generate_code(self) -> list[SessionEvent]:
        start = len(self.events)
        if self.phase not in ("Finalized", "Generated"):
            raise PhaseError(
                f"code generation requires a finalized specification, "
                f"phase is {self.phase}")
        spec_path = self.workspace / spec_engine.SPEC_FILENAME
        if not spec_path.exists():
            raise PhaseError("no saved specification found")
        spec_text = spec_path.read_text(encoding="utf-8")
        try:
            raw = agents.code_generator_run(self, spec_text)
            tree = agents.json_cleaner_run(self, raw)
            result = self.save_tree(tree)
            if not result.get("ok"):
                self._emit("error", {"type": "validation",
                                     "message": result["error"]["message"]})
        except ForgeError as exc:
            self._emit("error", {"type": type(exc).__name__,
                                 "message": str(exc)})
        return self.events[start:]

    def launch(self) -> list[SessionEvent]:
        start = len(self.events)
        if self.phase not in ("Generated", "Running", "Fixing"):
            raise PhaseError(f"nothing to launch in phase {self.phase}")
        self._run_tool("run_docker_compose", {}, actor="user")
        return self.events[start:]

    def fix_loop(self, issue: str) -> LoopRecord:
        if self.phase not in ("Running", "Fixing"):
            raise PhaseError(
                f"the fix loop needs a launched service, phase is {self.phase}")
        start = len(self.events)
        iterations = 0
        resolved = False
        while self.fix_iterations < self.config.max_fix_iterations:
            self.fix_iterations += 1
            iterations += 1
            self._run_tool("update_json", {"issue": issue}, actor="fix_loop")
            self._run_tool("run_docker_compose", {}, actor="fix_loop")
            status_result = self._run_tool("check_docker_compose_status", {},
                                           actor="fix_loop")
            logs_result = self._run_tool(
                "get_docker_compose_logs", {"tail": self.config.log_tail},
                actor="fix_loop")
            services = status_result.get("services") or []
            running = (status_result.get("ok", False) and bool(services)
                       and all(s["state"] == "running" for s in services))
            summaries = logs_result.get("error_summaries") or []
            if running and not summaries:
                resolved = True
                break
            if not self.config.auto_continue:
                break
        if resolved:
            self.fix_iterations = 0
        return LoopRecord(iterations=iterations, resolved=resolved,
                          events=tuple(self.events[start:]))

    def run_probes(self) -> dict[str, Any]:
        if self.phase != "Running":
            raise PhaseError(
                f"probes need running services, phase is {self.phase}")
        spec_text = (self.workspace / spec_engine.SPEC_FILENAME).read_text(
            encoding="utf-8")
        doc = spec_engine.parse_spec(spec_text)
        plan = probe_engine.derive_probes(doc, self.config.service_base_url)
        outcomes = probe_engine.execute_plan(plan, self, doc)
        report = probe_engine.report_to_dict(plan, outcomes)
        (self.workspace / PROBE_REPORT_FILENAME).write_text(
            json.dumps(report, indent=2, sort_keys=True, ensure_ascii=True)
            + "\n", encoding="utf-8")
        self._emit("artifact_saved",
                   {"artifact": "probe_report", "path": PROBE_REPORT_FILENAME,
                    "all_ok": report["all_ok"]})
        return report

    def service_status(self) -> list[ServiceStatus]:
        return runtime_tools.compose_status(self)

    def service_logs(self, tail: int | None = None):
        bundle = runtime_tools.compose_logs(self,
                                            tail=tail or self.config.log_tail)
        return bundle, extract_errors(bundle)

    def close(self) -> None:
        self._transition("Closed")
        self.persist()

    # --- persistence ---

    def persist(self) -> None:
        state = {
            "session_id": self.session_id,
            "phase": self.phase,
            "fix_iterations": self.fix_iterations,
            "raw_tree_count": self.raw_tree_count,
            "spec_versions": [asdict(v) for v in self.spec_versions],
            "tree_versions": self.tree_versions,
            "config": config_to_dict(self.config),
        }
        (self.workspace / STATE_FILENAME).write_text(
            json.dumps(state, indent=2, sort_keys=True, ensure_ascii=True)
            + "\n", encoding="utf-8")
        transcripts = {role: [turn_to_wire(t) for t in turns]
                       for role, turns in self.transcripts.items()}
        (self.workspace / TRANSCRIPTS_FILENAME).write_text(
            json.dumps(transcripts, indent=2, sort_keys=True,
                       ensure_ascii=True) + "\n", encoding="utf-8")


def _seed_transcripts(session: Session) -> None:
    context = {"service_base_url": session.config.service_base_url}
    for name in agents.ROLE_NAMES:
        role = session.role(name)
        prompt = agents.render_system_prompt(role, session.directives, context)
        session.transcripts[name] = [ChatTurn(role="system", content=prompt)]


def create_session(config: SessionConfig, workspace_root: str | Path, *,
                   session_id: str | None = None, gateway: Any = None,
                   runner: ProcessRunner | None = None,
                   clock: Callable[[], str] | None = None,
                   timer: Callable[[], float] | None = None) -> Session:
    session_id = session_id or "s-" + uuid.uuid4().hex[:12]
    root = Path(workspace_root)
    workspace = root / session_id
    if workspace.exists():
        raise SessionStoreError(f"workspace already exists: {workspace}")
    try:
        workspace.mkdir(parents=True)
    except OSError as exc:
        raise SessionStoreError(f"cannot create workspace {workspace}: {exc}")
    session = Session(
        session_id=session_id,
        config=config,
        workspace=workspace,
        gateway=gateway or Gateway.from_config(config.backend),
        runner=runner or SubprocessRunner([config.engine_binary], workspace),
        clock=clock,
        timer=timer,
    )
    _seed_transcripts(session)
    session.persist()
    return session


def load_events(path: Path) -> list[SessionEvent]:
    events: list[SessionEvent] = []
    if not path.exists():
        return events
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            expected = len(events) + 1
            try:
                data = json.loads(line)
                event = event_from_dict(data)
            except (json.JSONDecodeError, KeyError) as exc:
                raise SessionStoreError(
                    f"event log corrupt at seq {expected} (line {lineno}): "
                    f"{exc}")
            if event.seq != expected:
                raise SessionStoreError(
                    f"event log gap: expected seq {expected}, found "
                    f"{event.seq} at line {lineno}")
            events.append(event)
    return events


def load_session(session_id: str, workspace_root: str | Path, *,
                 gateway: Any = None, runner: ProcessRunner | None = None,
                 clock: Callable[[], str] | None = None,
                 timer: Callable[[], float] | None = None) -> Session:
    workspace = Path(workspace_root) / session_id
    state_path = workspace / STATE_FILENAME
    if not state_path.exists():
        raise SessionStoreError(f"no session state at {state_path}")
    try:
        state = json.loads(state_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SessionStoreError(f"state file corrupt: {exc}")
    config = config_from_dict(state["config"])
    events = load_events(workspace / EVENTS_FILENAME)
    replayed_phase = replay_phases(events)
    if replayed_phase != state["phase"]:
        raise SessionStoreError(
            f"state file says phase {state['phase']!r} but the event log "
            f"replays to {replayed_phase!r}")
    session = Session(
        session_id=state["session_id"],
        config=config,
        workspace=workspace,
        gateway=gateway or Gateway.from_config(config.backend),
        runner=runner or SubprocessRunner([config.engine_binary], workspace),
        clock=clock,
        timer=timer,
    )
    session.phase = state["phase"]
    session.fix_iterations = state.get("fix_iterations", 0)
    session.raw_tree_count = state.get("raw_tree_count", 0)
    session.spec_versions = [SpecVersion(**v)
                             for v in state.get("spec_versions", [])]
    session.tree_versions = list(state.get("tree_versions", []))
    session.events = events
    transcripts_path = workspace / TRANSCRIPTS_FILENAME
    if transcripts_path.exists():
        try:
            wire = json.loads(transcripts_path.read_text(encoding="utf-8"))
            session.transcripts = {
                role: [turn_from_wire(t) for t in turns]
                for role, turns in wire.items()
            }
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise SessionStoreError(f"transcript store corrupt: {exc}")
    if session.tree_versions:
        snapshot = workspace / session.tree_versions[-1]["file_path"]
        try:
            session.current_tree = codetree.parse_filetree(
                snapshot.read_text(encoding="utf-8"),
                root_label=config.root_label)
        except (OSError, TreeError) as exc:
            raise SessionStoreError(
                f"tree snapshot {snapshot.name} unreadable: {exc}")
    return session
