"""The five agent roles and their single-step behaviors over the gateway.

A role is a (system prompt template, allowed tool set, memory policy)
triple. Conversational roles keep a running transcript on the session;
task roles get a fresh context per run. Tool confinement is enforced here:
a tool call naming a tool outside the issuing role's set is rejected
before anything executes.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from typing import Any

from . import codetree
from .codetree import FileTree
from .errors import CleanFailure, ForgeError, PhaseError, ProtocolError
from .llm_gateway import ChatTurn, ToolCall

ROLE_NAMES = ("spec_generator", "code_generator", "json_cleaner",
              "code_fixer", "code_tester")

ROLE_TOOLS: dict[str, tuple[str, ...]] = {
    "spec_generator": ("save_openapi_spec",),
    "code_generator": ("save_json",),
    "json_cleaner": (),
    "code_fixer": ("save_json",),
    "code_tester": ("run_docker_compose", "check_docker_compose_status",
                    "get_docker_compose_logs", "run_curl_command",
                    "update_json"),
}

_ROLE_MEMORY: dict[str, str] = {
    "spec_generator": "full_history",
    "code_generator": "task_only",
    "json_cleaner": "task_only",
    "code_fixer": "task_only",
    "code_tester": "full_history",
}

N_LLM_REPAIR = 2


@dataclass(frozen=True)
class AgentRole:
    name: str
    system_prompt_template: str
    allowed_tools: tuple[str, ...]
    memory_policy: str  # full_history | task_only


@dataclass(frozen=True)
class GenerationDirectives:
    target_stack: str = "node-express"
    folder_layout: str = (
        "top-level package.json, Dockerfile, and docker-compose.yml; "
        "application code under server/ with the entry point at "
        "server/index.js"
    )
    container_layout: str = (
        "one docker-compose.yml at the tree root defining a single service "
        "named api, built from the Dockerfile at the tree root, publishing "
        "the HTTP port, started with node server/index.js"
    )

    def __post_init__(self):
        if not self.target_stack:
            raise ValueError("target_stack must be non-empty")
        if not codetree.PATH_TOKEN.search(self.folder_layout):
            raise ValueError("folder_layout must name at least one entry-point "
                             "path")


def load_role(name: str) -> AgentRole:
    if name not in ROLE_NAMES:
        raise ForgeError(f"unknown agent role {name!r}")
    template = (resources.files("apiforge.prompts") / f"{name}.txt").read_text(
        encoding="utf-8")
    return AgentRole(
        name=name,
        system_prompt_template=template,
        allowed_tools=ROLE_TOOLS[name],
        memory_policy=_ROLE_MEMORY[name],
    )


_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")


def render_system_prompt(role: AgentRole, directives: GenerationDirectives,
                         context: dict[str, str] | None = None) -> str:
    bindings = {
        "target_stack": directives.target_stack,
        "folder_layout": directives.folder_layout,
        "container_layout": directives.container_layout,
    }
    bindings.update(context or {})

    def substitute(match: re.Match) -> str:
        name = match.group(1)
        if name not in bindings:
            raise ForgeError(f"prompt template for {role.name!r} has no binding "
                             f"for placeholder {name!r}")
        return bindings[name]

    return _PLACEHOLDER.sub(substitute, role.system_prompt_template)


@dataclass(frozen=True)
class ToolEffect:
    name: str
    arguments: dict[str, Any]
    result: dict[str, Any]


def _tool_turn(call: ToolCall, result: dict[str, Any]) -> ChatTurn:
    return ChatTurn(role="tool", content=json.dumps(result, sort_keys=True),
                    tool_call_id=call.id)


def _safe_args(call: ToolCall) -> dict[str, Any]:
    try:
        args = json.loads(call.arguments)
        return args if isinstance(args, dict) else {}
    except json.JSONDecodeError:
        return {}


def _chat_with_tools(session: Any, role: AgentRole,
                     transcript: list[ChatTurn]) -> tuple[str, list[ToolEffect]]:
    """Drive one user message to a final text reply, dispatching tool calls
    through the session, bounded by max_tool_rounds.

    A protocol violation (unknown tool, malformed arguments) is fed back to
    the model as an error tool result rather than crashing the step.
    """
    tools = session.tool_schemas(role.allowed_tools)
    effects: list[ToolEffect] = []
    reply = ""
    for _ in range(session.config.max_tool_rounds):
        try:
            turn = session.gateway.complete(transcript, tools)
        except ProtocolError as exc:
            if exc.turn is None or not exc.turn.tool_calls:
                raise
            transcript.append(exc.turn)
            for call in exc.turn.tool_calls:
                result = {"ok": False,
                          "error": {"type": "protocol", "message": str(exc)}}
                effects.append(ToolEffect(name=call.name,
                                          arguments=_safe_args(call),
                                          result=result))
                transcript.append(_tool_turn(call, result))
            continue
        transcript.append(turn)
        if turn.content:
            reply = turn.content
        if not turn.tool_calls:
            return reply, effects
        for call in turn.tool_calls:
            if call.name not in role.allowed_tools:
                result = {"ok": False, "error": {
                    "type": "forbidden_tool",
                    "message": f"{role.name} may not call {call.name}"}}
            else:
                result = session.dispatch_tool(role.name, call)
            effects.append(ToolEffect(name=call.name,
                                      arguments=_safe_args(call),
                                      result=result))
            transcript.append(_tool_turn(call, result))
    return reply or "Stopped after reaching the tool-call limit.", effects


def spec_generator_step(session: Any, user_message: str):
    """One conversational turn of contract drafting.

    Returns (reply text, SpecVersion or None); the version is present exactly
    when the model saved the spec during this step.
    """
    if session.phase not in ("Drafting", "Finalized"):
        raise PhaseError(f"spec drafting is not available in phase "
                         f"{session.phase}")
    role = session.role("spec_generator")
    transcript = session.transcript("spec_generator")
    transcript.append(ChatTurn(role="user", content=user_message))
    versions_before = len(session.spec_versions)
    reply, effects = _chat_with_tools(session, role, transcript)
    spec_saved = (session.spec_versions[-1]
                  if len(session.spec_versions) > versions_before else None)
    return reply, spec_saved, effects


def code_generator_run(session: Any, spec_text: str) -> str:
    """Produce raw tree JSON for the finalized spec; cleaning is downstream.

    The model may answer with the JSON object as plain content or by calling
    save_json; either way the raw string is returned untouched and recorded.
    """
    role = session.role("code_generator")
    transcript = [
        ChatTurn(role="system",
                 content=render_system_prompt(role, session.directives)),
        ChatTurn(role="user",
                 content="Implement this OpenAPI specification:\n\n" + spec_text),
    ]
    turn = session.gateway.complete(transcript,
                                    session.tool_schemas(role.allowed_tools))
    transcript.append(turn)
    raw = turn.content
    for call in turn.tool_calls:
        if call.name == "save_json":
            raw = json.loads(call.arguments).get("tree_json", raw)
            break
    session.record_task_transcript("code_generator", transcript)
    session.record_raw_tree(raw)
    return raw


def json_cleaner_run(session: Any, raw_tree_json: str) -> FileTree:
    """Deterministic repair first; at most N_LLM_REPAIR model attempts after.

    Valid input never touches the gateway. Only syntactic and shape problems
    are worth a model round-trip; an unsafe path is a semantic violation and
    raises immediately.
    """
    role = session.role("json_cleaner")
    candidate = raw_tree_json
    failure = ""
    for attempt in range(N_LLM_REPAIR + 1):
        repaired, _ = codetree.repair_json(candidate)
        problem: str | None = None
        try:
            data = json.loads(repaired)
        except json.JSONDecodeError as exc:
            problem = f"not valid JSON: {exc}"
        else:
            if not isinstance(data, dict):
                problem = (f"top level must be an object, got "
                           f"{type(data).__name__}")
            else:
                bad = next((k for k, v in data.items()
                            if not isinstance(v, str)), None)
                if bad is not None:
                    problem = f"entry {bad!r} must map to file content text"
        if problem is None:
            return FileTree(entries=data, root_label=session.root_label)
        failure = problem
        if attempt == N_LLM_REPAIR:
            break
        transcript = [
            ChatTurn(role="system",
                     content=render_system_prompt(role, session.directives)),
            ChatTurn(role="user",
                     content=f"This text failed to parse ({failure}). "
                             f"Return the corrected JSON object only.\n\n"
                             f"{candidate}"),
        ]
        turn = session.gateway.complete(transcript, ())
        transcript.append(turn)
        session.record_task_transcript("json_cleaner", transcript)
        candidate = turn.content
    raise CleanFailure(
        f"tree JSON still unparseable after deterministic repair and "
        f"{N_LLM_REPAIR} model attempts: {failure}",
        last_candidate=candidate)


def code_fixer_run(session: Any, tree: FileTree, issue: str) -> FileTree:
    """Ask the fixer role for a corrected tree; output is cleaned and
    path-checked like any generated tree."""
    role = session.role("code_fixer")
    transcript = [
        ChatTurn(role="system",
                 content=render_system_prompt(role, session.directives)),
        ChatTurn(role="user",
                 content="Current server code:\n"
                         + codetree.serialize_filetree(tree)
                         + "\nProblem to fix:\n" + issue),
    ]
    turn = session.gateway.complete(transcript,
                                    session.tool_schemas(role.allowed_tools))
    transcript.append(turn)
    raw = turn.content
    for call in turn.tool_calls:
        if call.name == "save_json":
            raw = json.loads(call.arguments).get("tree_json", raw)
            break
    session.record_task_transcript("code_fixer", transcript)
    return json_cleaner_run(session, raw)


def code_tester_step(session: Any, user_message: str):
    """One conversational turn of operating the service via tools."""
    if session.phase not in ("Generated", "Running", "Fixing"):
        raise PhaseError(f"the service operator is not available in phase "
                         f"{session.phase}")
    role = session.role("code_tester")
    transcript = session.transcript("code_tester")
    transcript.append(ChatTurn(role="user", content=user_message))
    reply, effects = _chat_with_tools(session, role, transcript)
    return reply, effects
