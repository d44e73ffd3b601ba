"""Executable tools: container lifecycle, status, logs, HTTP probes, code
persistence and fixes.

Every process spawn goes through a runner that enforces a program allow-list
and keeps the working directory inside the session workspace; tests swap in
a fake runner with canned results. Tool executors never raise past the
registry boundary: results are always structured success or failure dicts.
"""

from __future__ import annotations

import json
import re
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable
from urllib.parse import urlsplit

import httpx
import jsonschema

from . import codetree
from .errors import CleanFailure, CommandError, TreeError
from .llm_gateway import ToolSchema

TOOL_NAMES = (
    "save_openapi_spec",
    "save_json",
    "run_docker_compose",
    "check_docker_compose_status",
    "get_docker_compose_logs",
    "run_curl_command",
    "update_json",
)

DEFAULT_LOG_TAIL = 200
COMPOSE_UP_ARGS = ("compose", "up", "--build", "-d")

# --- process running ----------------------------------------------------------


@dataclass(frozen=True)
class CommandSpec:
    program: str
    args: tuple[str, ...]
    working_dir: Path
    timeout: float = 120.0

    @property
    def argv(self) -> list[str]:
        return [self.program, *self.args]


@dataclass(frozen=True)
class RunResult:
    exit_code: int
    stdout: str = ""
    stderr: str = ""


class ProcessRunner:
    """Base runner: validates every command before any subclass executes it."""

    def __init__(self, allowed_programs: Iterable[str], workspace_root: Path):
        self.allowed_programs = frozenset(allowed_programs)
        self.workspace_root = Path(workspace_root).resolve()

    def validate(self, spec: CommandSpec) -> None:
        if spec.program not in self.allowed_programs:
            raise CommandError(
                f"program {spec.program!r} is not on the allow-list "
                f"{sorted(self.allowed_programs)}")
        wd = Path(spec.working_dir).resolve()
        if wd != self.workspace_root and self.workspace_root not in wd.parents:
            raise CommandError(
                f"working dir {spec.working_dir} is outside the session workspace")

    def run(self, spec: CommandSpec) -> RunResult:
        self.validate(spec)
        return self._execute(spec)

    def _execute(self, spec: CommandSpec) -> RunResult:
        raise NotImplementedError


class SubprocessRunner(ProcessRunner):
    def _execute(self, spec: CommandSpec) -> RunResult:
        try:
            proc = subprocess.run(
                spec.argv,
                cwd=str(spec.working_dir),
                capture_output=True,
                text=True,
                timeout=spec.timeout,
            )
        except subprocess.TimeoutExpired as exc:
            raise CommandError(
                f"command timed out after {spec.timeout}s: "
                f"{shlex.join(spec.argv)}") from exc
        except FileNotFoundError as exc:
            raise CommandError(f"program not found: {spec.program}") from exc
        return RunResult(proc.returncode, proc.stdout or "", proc.stderr or "")


class FakeProcessRunner(ProcessRunner):
    """Canned results keyed by compose subcommand; records every command."""

    def __init__(self, allowed_programs: Iterable[str], workspace_root: Path):
        super().__init__(allowed_programs, workspace_root)
        self.history: list[CommandSpec] = []
        self._queues: dict[str, list[RunResult]] = {}
        self._sticky: dict[str, RunResult] = {}

    def respond(self, subcommand: str, result: RunResult,
                sticky: bool = False) -> None:
        if sticky:
            self._sticky[subcommand] = result
        else:
            self._queues.setdefault(subcommand, []).append(result)

    def _execute(self, spec: CommandSpec) -> RunResult:
        self.history.append(spec)
        key = spec.args[1] if len(spec.args) > 1 else (spec.args[0] if spec.args
                                                       else "")
        queue = self._queues.get(key)
        if queue:
            return queue.pop(0)
        if key in self._sticky:
            return self._sticky[key]
        return RunResult(0)


# --- container state types ------------------------------------------------------

_STATES = ("running", "exited", "restarting", "unknown")


@dataclass(frozen=True)
class ServiceStatus:
    service_name: str
    state: str
    exit_code: int | None = None
    ports: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.state not in _STATES:
            raise ValueError(f"unknown service state {self.state!r}")
        if (self.exit_code is not None) != (self.state == "exited"):
            raise ValueError("exit_code must be present exactly when exited")


@dataclass(frozen=True)
class LogLine:
    timestamp: str
    stream: str  # stdout | stderr
    text: str


@dataclass(frozen=True)
class LogBundle:
    per_service: dict[str, tuple[LogLine, ...]] = field(default_factory=dict)
    tail_limit: int = DEFAULT_LOG_TAIL


@dataclass(frozen=True)
class HttpProbeRequest:
    method: str
    url: str
    headers: tuple[tuple[str, str], ...] = ()
    body: str = ""


@dataclass(frozen=True)
class HttpProbeResponse:
    status: int
    headers: tuple[tuple[str, str], ...] = ()
    body: str = ""
    elapsed_ms: float = 0.0


@dataclass(frozen=True)
class ErrorSummary:
    category: str
    service: str
    evidence_lines: tuple[LogLine, ...]
    hint: str


# --- engine output parsing -------------------------------------------------------


def _normalize_state(raw: str) -> str:
    raw = (raw or "").strip().lower()
    for state in ("running", "exited", "restarting"):
        if raw.startswith(state) or state in raw.split():
            return state
    return "unknown"


def parse_status_output(text: str) -> list[ServiceStatus]:
    """Parse the engine's machine-readable status listing (one JSON record
    per line, or one JSON array)."""
    text = text.strip()
    if not text:
        return []
    records: list[dict[str, Any]]
    if text.startswith("["):
        records = json.loads(text)
    else:
        records = [json.loads(line) for line in text.splitlines() if line.strip()]
    statuses: list[ServiceStatus] = []
    for rec in records:
        state = _normalize_state(rec.get("State", ""))
        exit_code = None
        if state == "exited":
            exit_code = int(rec.get("ExitCode") or 0)
        ports: list[tuple[int, int]] = []
        for pub in rec.get("Publishers") or []:
            host = int(pub.get("PublishedPort") or 0)
            target = int(pub.get("TargetPort") or 0)
            if host:
                ports.append((host, target))
        statuses.append(ServiceStatus(
            service_name=rec.get("Service") or rec.get("Name") or "unknown",
            state=state,
            exit_code=exit_code,
            ports=tuple(ports),
        ))
    statuses.sort(key=lambda s: s.service_name)
    return statuses


_LOG_PREFIX = re.compile(r"^(?P<name>[^|]+?)\s*\|\s?(?P<rest>.*)$")
_LOG_TIMESTAMP = re.compile(r"^(?P<ts>\d{4}-\d{2}-\d{2}T[0-9:.]+Z?)\s?(?P<text>.*)$")
_REPLICA_SUFFIX = re.compile(r"-\d+$")


def parse_logs_output(text: str, tail: int = DEFAULT_LOG_TAIL) -> LogBundle:
    """Split a merged compose log stream into per-service chronological lines,
    keeping at most the last `tail` lines per service."""
    per_service: dict[str, list[LogLine]] = {}
    for raw in text.splitlines():
        if not raw.strip():
            continue
        match = _LOG_PREFIX.match(raw)
        if match:
            name = _REPLICA_SUFFIX.sub("", match.group("name").strip())
            rest = match.group("rest")
        else:
            name, rest = "service", raw
        ts_match = _LOG_TIMESTAMP.match(rest)
        if ts_match:
            timestamp, line_text = ts_match.group("ts"), ts_match.group("text")
        else:
            timestamp, line_text = "", rest
        per_service.setdefault(name, []).append(
            LogLine(timestamp=timestamp, stream="stdout", text=line_text))
    return LogBundle(
        per_service={name: tuple(lines[-tail:])
                     for name, lines in per_service.items()},
        tail_limit=tail,
    )


# --- log error extraction ---------------------------------------------------------

_EVIDENCE_CAP = 8  # bounds what the fixer context carries per problem

_HTTP_5XX = re.compile(
    r'"\s*(GET|POST|PUT|DELETE|PATCH)[^"]*"\s+5\d\d'
    r"|\b(GET|POST|PUT|DELETE|PATCH)\b.*\s5\d\d\b"
    r"|Internal Server Error")
_NONZERO_EXIT = re.compile(r"exited with code (?!0\b)\d+")
_EXCEPTION_HEAD = re.compile(
    r"^\s*\w*(Error|Exception)\b\s*:|UnhandledPromiseRejection"
    r"|uncaughtException|Traceback \(most recent call last\)|throw new ")
_GENERIC_ERROR = re.compile(r"\berror\b", re.IGNORECASE)
_BENIGN_ERROR = re.compile(r"\b(0|no)\s+errors?\b", re.IGNORECASE)
_CONTINUATION = re.compile(r"^\s+at\s|^\s{4,}\S")

_CATEGORY_HINTS = {
    "port_conflict": "a process is already bound to the service port; change "
                     "the host port mapping or stop the conflicting process",
    "dependency_missing": "a required module or package is missing; add it to "
                          "the dependency manifest or fix the import path",
    "http_5xx": "the service answered a request with a server error; inspect "
                "the handler for that route",
    "startup_failure": "the container did not start cleanly; check the build "
                       "and start command",
    "unhandled_exception": "the service threw an unhandled exception; inspect "
                           "the stack trace",
    "other": "the logs mention an error that matched no known pattern",
}


def _classify(text: str) -> str | None:
    if ("EADDRINUSE" in text or "address already in use" in text
            or "port is already allocated" in text):
        return "port_conflict"
    if ("Cannot find module" in text or "MODULE_NOT_FOUND" in text
            or "ERR_MODULE_NOT_FOUND" in text or "ModuleNotFoundError" in text
            or "ImportError:" in text):
        return "dependency_missing"
    if _HTTP_5XX.search(text):
        return "http_5xx"
    if (_NONZERO_EXIT.search(text) or "Error response from daemon" in text
            or "failed to start" in text or "Cannot start service" in text):
        return "startup_failure"
    if _EXCEPTION_HEAD.search(text):
        return "unhandled_exception"
    if _GENERIC_ERROR.search(text) and not _BENIGN_ERROR.search(text):
        return "other"
    return None


def extract_errors(bundle: LogBundle) -> list[ErrorSummary]:
    """Deterministic pattern pass over the logs: one summary per
    (service, category), with stack continuation lines attached to the
    summary they follow."""
    summaries: dict[tuple[str, str], list[LogLine]] = {}
    order: list[tuple[str, str]] = []
    for service in sorted(bundle.per_service):
        last_key: tuple[str, str] | None = None
        for line in bundle.per_service[service]:
            if _CONTINUATION.match(line.text) and last_key is not None:
                evidence = summaries[last_key]
                if len(evidence) < _EVIDENCE_CAP:
                    evidence.append(line)
                continue
            category = _classify(line.text)
            if category is None:
                last_key = None
                continue
            key = (service, category)
            if key not in summaries:
                summaries[key] = []
                order.append(key)
            if len(summaries[key]) < _EVIDENCE_CAP:
                summaries[key].append(line)
            last_key = key
    return [
        ErrorSummary(category=category, service=service,
                     evidence_lines=tuple(summaries[(service, category)]),
                     hint=_CATEGORY_HINTS[category])
        for service, category in order
    ]


# --- tool executors ----------------------------------------------------------------


def _tail_text(*chunks: str, limit: int = 40) -> str:
    lines = [line for chunk in chunks for line in chunk.splitlines() if line]
    return "\n".join(lines[-limit:])


def _failure(kind: str, message: str, **extra: Any) -> dict[str, Any]:
    return {"ok": False, "error": {"type": kind, "message": message, **extra}}


def compose_command(session: Any, *args: str) -> CommandSpec:
    return CommandSpec(
        program=session.engine_binary,
        args=("compose", *args),
        working_dir=session.code_root,
        timeout=session.command_timeout,
    )


def compose_up(session: Any) -> dict[str, Any]:
    tree = session.current_tree
    if tree is None or codetree.compose_file_path(tree) is None:
        return _failure("precondition",
                        "no compose file has been materialized for this session")
    spec = compose_command(session, *COMPOSE_UP_ARGS[1:])
    try:
        result = session.runner.run(spec)
    except CommandError as exc:
        session.note_compose_result(False)
        return _failure("engine_unavailable", str(exc))
    ok = result.exit_code == 0
    session.note_compose_result(ok)
    report = {
        "ok": ok,
        "exit_code": result.exit_code,
        "output_tail": _tail_text(result.stdout, result.stderr),
    }
    if not ok:
        report["error"] = {"type": "launch_failed",
                           "message": f"compose up exited {result.exit_code}"}
    return report


def compose_status(session: Any) -> list[ServiceStatus]:
    spec = compose_command(session, "ps", "--format", "json")
    result = session.runner.run(spec)
    if result.exit_code != 0:
        raise CommandError(
            f"status listing failed ({result.exit_code}): "
            f"{_tail_text(result.stderr, limit=5)}")
    try:
        return parse_status_output(result.stdout)
    except (json.JSONDecodeError, ValueError) as exc:
        raise CommandError(f"unparseable status output: {exc}")


def compose_logs(session: Any, tail: int = DEFAULT_LOG_TAIL) -> LogBundle:
    spec = compose_command(session, "logs", "--no-color", "--timestamps",
                           "--tail", str(tail))
    result = session.runner.run(spec)
    if result.exit_code != 0:
        raise CommandError(
            f"log fetch failed ({result.exit_code}): "
            f"{_tail_text(result.stderr, limit=5)}")
    bundle = parse_logs_output(result.stdout, tail=tail)
    session.note_log_bundle(bundle)
    return bundle


def http_request(session: Any, request: HttpProbeRequest) -> HttpProbeResponse:
    parts = urlsplit(request.url)
    if parts.netloc not in session.allowed_hosts:
        raise CommandError(
            f"host {parts.netloc!r} is not the session's service endpoint")
    started = session.timer()
    response = httpx.request(
        request.method,
        request.url,
        headers=dict(request.headers),
        content=request.body.encode("utf-8") if request.body else None,
        timeout=session.http_timeout,
    )
    elapsed_ms = max((session.timer() - started) * 1000.0, 0.0)
    return HttpProbeResponse(
        status=response.status_code,
        headers=tuple(sorted((k.lower(), v) for k, v in response.headers.items())),
        body=response.text,
        elapsed_ms=elapsed_ms,
    )


def status_to_dict(status: ServiceStatus) -> dict[str, Any]:
    return {
        "service_name": status.service_name,
        "state": status.state,
        "exit_code": status.exit_code,
        "ports": [list(p) for p in status.ports],
    }


def bundle_to_dict(bundle: LogBundle) -> dict[str, Any]:
    return {
        "tail_limit": bundle.tail_limit,
        "per_service": {
            name: [{"timestamp": l.timestamp, "stream": l.stream, "text": l.text}
                   for l in lines]
            for name, lines in sorted(bundle.per_service.items())
        },
    }


def summary_to_dict(summary: ErrorSummary) -> dict[str, Any]:
    return {
        "category": summary.category,
        "service": summary.service,
        "hint": summary.hint,
        "evidence": [l.text for l in summary.evidence_lines],
    }


def _exec_save_openapi_spec(session: Any, args: dict[str, Any]) -> dict[str, Any]:
    return session.save_spec(args["spec_text"])


def _exec_save_json(session: Any, args: dict[str, Any]) -> dict[str, Any]:
    return session.save_tree_json(args["tree_json"])


def _exec_run_docker_compose(session: Any, args: dict[str, Any]) -> dict[str, Any]:
    return compose_up(session)


def _exec_check_status(session: Any, args: dict[str, Any]) -> dict[str, Any]:
    try:
        statuses = compose_status(session)
    except CommandError as exc:
        return _failure("engine_unavailable", str(exc))
    return {"ok": True, "services": [status_to_dict(s) for s in statuses]}


def _exec_get_logs(session: Any, args: dict[str, Any]) -> dict[str, Any]:
    tail = int(args.get("tail") or DEFAULT_LOG_TAIL)
    try:
        bundle = compose_logs(session, tail=tail)
    except CommandError as exc:
        return _failure("engine_unavailable", str(exc))
    summaries = extract_errors(bundle)
    return {
        "ok": True,
        "logs": bundle_to_dict(bundle),
        "error_summaries": [summary_to_dict(s) for s in summaries],
    }


def run_curl_tool(session: Any, args: dict[str, Any]) -> dict[str, Any]:
    """Shared by the model-facing tool and the probe engine. The result dict
    omits response headers: they carry volatile values (dates) that would
    make otherwise-identical transcripts diverge."""
    request = HttpProbeRequest(
        method=args["method"].upper(),
        url=args["url"],
        headers=tuple(sorted((args.get("headers") or {}).items())),
        body=args.get("body") or "",
    )
    record: dict[str, Any] = {
        "kind": "http_probe",
        "request": {"method": request.method, "url": request.url,
                    "headers": dict(request.headers), "body": request.body},
    }
    try:
        response = http_request(session, request)
    except CommandError as exc:
        record["error"] = str(exc)
        session.journal_append(record)
        return _failure("allowlist", str(exc))
    except httpx.HTTPError as exc:
        record["error"] = f"{type(exc).__name__}: {exc}"
        session.journal_append(record)
        return _failure("transport", record["error"])
    record["response"] = {
        "status": response.status, "headers": dict(response.headers),
        "body": response.body, "elapsed_ms": response.elapsed_ms,
    }
    session.journal_append(record)
    return {"ok": True, "status": response.status, "body": response.body,
            "elapsed_ms": response.elapsed_ms}


def _exec_update_json(session: Any, args: dict[str, Any]) -> dict[str, Any]:
    if session.current_tree is None:
        return _failure("precondition", "no server code has been saved yet")
    issue = args["issue"]
    summaries = session.last_error_summaries()
    if summaries:
        issue = issue + "\n\nObserved problems:\n" + "\n".join(
            f"- [{s.category}] {s.service}: " + "; ".join(
                l.text for l in s.evidence_lines[:3])
            for s in summaries)
    try:
        fixed = session.run_code_fixer(session.current_tree, issue)
        merged = codetree.merge_update(session.current_tree, fixed)
    except (CleanFailure, TreeError) as exc:
        return _failure("fix_failed", str(exc))
    changed = [path for path, content in merged.items()
               if session.current_tree.entries.get(path) != content]
    if not changed:
        return {"ok": True, "changed_paths": [], "message": "no changes"}
    return session.save_tree(merged, changed_paths=changed, fixing=True)


@dataclass(frozen=True)
class RegisteredTool:
    schema: ToolSchema
    executor: Callable[[Any, dict[str, Any]], dict[str, Any]]


class ToolRegistry:
    def __init__(self, tools: dict[str, RegisteredTool]):
        self._tools = dict(tools)

    def names(self) -> tuple[str, ...]:
        return tuple(self._tools)

    def schema(self, name: str) -> ToolSchema:
        return self._tools[name].schema

    def schemas(self, names: Iterable[str] | None = None) -> list[ToolSchema]:
        wanted = list(names) if names is not None else list(self._tools)
        return [self._tools[name].schema for name in wanted]

    def dispatch(self, session: Any, name: str,
                 arguments: dict[str, Any]) -> dict[str, Any]:
        tool = self._tools.get(name)
        if tool is None:
            return _failure("unknown_tool", f"no tool named {name!r}")
        try:
            jsonschema.validate(arguments, tool.schema.parameters)
        except jsonschema.ValidationError as exc:
            return _failure("bad_arguments", exc.message)
        try:
            return tool.executor(session, arguments)
        except Exception as exc:  # the registry boundary never leaks exceptions
            return _failure("execution", f"{type(exc).__name__}: {exc}")


def build_registry() -> ToolRegistry:
    def params(properties: dict[str, Any], required: list[str]) -> dict[str, Any]:
        return {
            "type": "object",
            "properties": properties,
            "required": required,
            "additionalProperties": False,
        }

    tools = {
        "save_openapi_spec": RegisteredTool(
            ToolSchema(
                name="save_openapi_spec",
                description="Save OpenAPI specification text to the session "
                            "workspace as a YAML file. Returns success or the "
                            "validation findings.",
                parameters=params(
                    {"spec_text": {"type": "string",
                                   "description": "Complete OpenAPI document, "
                                                  "YAML or JSON."}},
                    ["spec_text"]),
            ),
            _exec_save_openapi_spec),
        "save_json": RegisteredTool(
            ToolSchema(
                name="save_json",
                description="Validate and save server code given as one JSON "
                            "object that maps relative file paths to file "
                            "contents.",
                parameters=params(
                    {"tree_json": {"type": "string",
                                   "description": "JSON object text: file path "
                                                  "to file content."}},
                    ["tree_json"]),
            ),
            _exec_save_json),
        "run_docker_compose": RegisteredTool(
            ToolSchema(
                name="run_docker_compose",
                description="Build and start the generated services in the "
                            "local container engine, detached.",
                parameters=params({}, []),
            ),
            _exec_run_docker_compose),
        "check_docker_compose_status": RegisteredTool(
            ToolSchema(
                name="check_docker_compose_status",
                description="Report the current state of the session's "
                            "containers.",
                parameters=params({}, []),
            ),
            _exec_check_status),
        "get_docker_compose_logs": RegisteredTool(
            ToolSchema(
                name="get_docker_compose_logs",
                description="Fetch recent container logs per service, with "
                            "extracted error summaries.",
                parameters=params(
                    {"tail": {"type": "integer", "minimum": 1,
                              "description": "Lines to keep per service."}},
                    []),
            ),
            _exec_get_logs),
        "run_curl_command": RegisteredTool(
            ToolSchema(
                name="run_curl_command",
                description="Send an HTTP request to the running service and "
                            "return the status code and body.",
                parameters=params(
                    {
                        "method": {"type": "string",
                                   "enum": ["GET", "POST", "PUT", "PATCH",
                                            "DELETE"]},
                        "url": {"type": "string"},
                        "headers": {"type": "object",
                                    "additionalProperties": {"type": "string"}},
                        "body": {"type": "string"},
                    },
                    ["method", "url"]),
            ),
            run_curl_tool),
        "update_json": RegisteredTool(
            ToolSchema(
                name="update_json",
                description="Rewrite the saved server code to address a "
                            "described problem, using recent logs for context.",
                parameters=params(
                    {"issue": {"type": "string",
                               "description": "What is wrong and what outcome "
                                              "is expected."}},
                    ["issue"]),
            ),
            _exec_update_json),
    }
    assert tuple(tools) == TOOL_NAMES
    return ToolRegistry(tools)
