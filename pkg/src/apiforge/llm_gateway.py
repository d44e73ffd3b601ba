"""Chat-completion gateway with function calling across three backends.

Live mode speaks the OpenAI-compatible chat-completions wire format over
HTTPS. Replay mode serves recorded exchanges from a cassette file keyed by
request fingerprint. Scripted mode plays programmed responses, for tests.
All three return the same ChatTurn shape, so callers never know which one
they are talking to.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import httpx
import jsonschema

from .errors import GatewayError, ProtocolError

Role = str  # one of: system, user, assistant, tool

_ROLES = ("system", "user", "assistant", "tool")


@dataclass(frozen=True)
class ToolCall:
    """A structured function invocation emitted by the model."""

    id: str
    name: str
    arguments: str  # JSON object text


@dataclass(frozen=True)
class ChatTurn:
    role: Role
    content: str = ""
    tool_calls: tuple[ToolCall, ...] = ()
    tool_call_id: str | None = None

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if not self.content and not self.tool_calls:
            raise ValueError("turn needs non-empty content or at least one tool call")
        if self.role == "tool" and not self.tool_call_id:
            raise ValueError("tool turns must carry a tool_call_id")
        if self.tool_calls and self.role != "assistant":
            raise ValueError("only assistant turns may carry tool calls")


@dataclass(frozen=True)
class ToolSchema:
    name: str
    description: str
    parameters: dict[str, Any] = field(default_factory=dict)


@dataclass
class BackendConfig:
    mode: str = "scripted"  # live | replay | scripted
    endpoint_url: str | None = None
    model_id: str = "gpt-4"
    api_key_source: str = "OPENAI_API_KEY"
    cassette_path: str | None = None
    request_timeout: float = 60.0
    temperature: float = 0.0

    def __post_init__(self):
        if self.mode not in ("live", "replay", "scripted"):
            raise ValueError(f"unknown backend mode {self.mode!r}")
        if self.mode == "live" and not self.endpoint_url:
            raise ValueError("live mode requires endpoint_url")
        if self.mode == "replay" and not self.cassette_path:
            raise ValueError("replay mode requires cassette_path")


# --- wire format -----------------------------------------------------------

def turn_to_wire(turn: ChatTurn) -> dict[str, Any]:
    """Serialize a turn into the chat-completions message shape."""
    msg: dict[str, Any] = {"role": turn.role, "content": turn.content}
    if turn.tool_calls:
        msg["tool_calls"] = [
            {
                "id": c.id,
                "type": "function",
                "function": {"name": c.name, "arguments": c.arguments},
            }
            for c in turn.tool_calls
        ]
    if turn.tool_call_id is not None:
        msg["tool_call_id"] = turn.tool_call_id
    return msg


def turn_from_wire(msg: dict[str, Any]) -> ChatTurn:
    calls = tuple(
        ToolCall(
            id=c.get("id", ""),
            name=c.get("function", {}).get("name", ""),
            arguments=c.get("function", {}).get("arguments", ""),
        )
        for c in msg.get("tool_calls") or ()
    )
    return ChatTurn(
        role=msg["role"],
        content=msg.get("content") or "",
        tool_calls=calls,
        tool_call_id=msg.get("tool_call_id"),
    )


def schema_to_wire(schema: ToolSchema) -> dict[str, Any]:
    return {
        "type": "function",
        "function": {
            "name": schema.name,
            "description": schema.description,
            "parameters": schema.parameters or {"type": "object", "properties": {}},
        },
    }


# --- fingerprinting and cassettes ------------------------------------------

def fingerprint_request(
    transcript: Sequence[ChatTurn],
    tools: Sequence[ToolSchema],
    model_id: str,
) -> str:
    """Stable digest of a request; equal inputs always collide, any change
    to a turn, tool, or model id changes the result."""
    payload = {
        "model": model_id,
        "messages": [turn_to_wire(t) for t in transcript],
        "tools": [schema_to_wire(s) for s in tools],
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def record_cassette(
    session_id: str,
    exchanges: Iterable[tuple[str, ChatTurn]],
    directory: str | Path,
) -> Path:
    """Write (fingerprint, response) pairs as one JSON record per line.

    Duplicate fingerprints with differing responses are rejected: replay
    lookup would be ambiguous.
    """
    entries: dict[str, dict[str, Any]] = {}
    for fingerprint, turn in exchanges:
        wire = turn_to_wire(turn)
        if fingerprint in entries and entries[fingerprint] != wire:
            raise GatewayError(
                f"conflicting responses recorded for fingerprint {fingerprint}",
                fingerprint=fingerprint,
            )
        entries[fingerprint] = wire
    if not entries:
        raise GatewayError("refusing to record an empty cassette")
    path = Path(directory) / f"{session_id}.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for fingerprint, wire in entries.items():
            fh.write(json.dumps({"fingerprint": fingerprint, "response_turn": wire},
                                sort_keys=True, ensure_ascii=True))
            fh.write("\n")
    return path


def load_cassette(path: str | Path) -> dict[str, ChatTurn]:
    table: dict[str, ChatTurn] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                table[record["fingerprint"]] = turn_from_wire(record["response_turn"])
            except (json.JSONDecodeError, KeyError) as exc:
                raise GatewayError(f"cassette {path} corrupt at line {lineno}: {exc}")
    return table


# --- backends ---------------------------------------------------------------

ScriptStep = ChatTurn | Callable[[Sequence[ChatTurn], Sequence[ToolSchema]], ChatTurn]


class _LiveBackend:
    def __init__(self, config: BackendConfig):
        self._config = config

    def complete(self, transcript, tools, fingerprint):
        cfg = self._config
        api_key = os.environ.get(cfg.api_key_source, "")
        body: dict[str, Any] = {
            "model": cfg.model_id,
            "messages": [turn_to_wire(t) for t in transcript],
            "temperature": cfg.temperature,
        }
        if tools:
            body["tools"] = [schema_to_wire(s) for s in tools]
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        try:
            resp = httpx.post(cfg.endpoint_url, json=body, headers=headers,
                              timeout=cfg.request_timeout)
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            raise GatewayError(f"chat-completion request failed: {exc}",
                               fingerprint=fingerprint) from exc
        try:
            message = resp.json()["choices"][0]["message"]
            return turn_from_wire(message)
        except (KeyError, IndexError, ValueError) as exc:
            raise GatewayError(f"malformed completion response: {exc}",
                               fingerprint=fingerprint) from exc


class _ReplayBackend:
    def __init__(self, table: dict[str, ChatTurn]):
        self._table = table

    def complete(self, transcript, tools, fingerprint):
        try:
            return self._table[fingerprint]
        except KeyError:
            raise GatewayError(f"cassette miss for fingerprint {fingerprint}",
                               fingerprint=fingerprint) from None


class _ScriptedBackend:
    def __init__(self, script: Sequence[ScriptStep] | Callable):
        self._handler = script if callable(script) else None
        self._queue: list[ScriptStep] = [] if callable(script) else list(script)
        self.calls = 0

    def complete(self, transcript, tools, fingerprint):
        self.calls += 1
        if self._handler is not None:
            return self._handler(transcript, tools)
        if not self._queue:
            raise GatewayError("scripted backend exhausted", fingerprint=fingerprint)
        step = self._queue.pop(0)
        return step(transcript, tools) if callable(step) else step


class Gateway:
    """Uniform completion interface; immutable after construction and safe
    to share. The orchestrator serializes calls per session transcript."""

    def __init__(self, config: BackendConfig, backend):
        self.config = config
        self._backend = backend
        self.call_count = 0

    @classmethod
    def from_config(cls, config: BackendConfig,
                    script: Sequence[ScriptStep] | Callable | None = None) -> "Gateway":
        if config.mode == "live":
            return cls(config, _LiveBackend(config))
        if config.mode == "replay":
            return cls(config, _ReplayBackend(load_cassette(config.cassette_path)))
        return cls(config, _ScriptedBackend(script if script is not None else []))

    @classmethod
    def scripted(cls, script: Sequence[ScriptStep] | Callable,
                 config: BackendConfig | None = None) -> "Gateway":
        cfg = config or BackendConfig(mode="scripted")
        return cls(cfg, _ScriptedBackend(script))

    def complete(self, transcript: Sequence[ChatTurn],
                 tools: Sequence[ToolSchema] = ()) -> ChatTurn:
        if not transcript:
            raise GatewayError("transcript must not be empty")
        if transcript[0].role != "system":
            raise GatewayError("first turn must have role system")
        fingerprint = fingerprint_request(transcript, tools, self.config.model_id)
        self.call_count += 1
        turn = self._backend.complete(transcript, tools, fingerprint)
        if turn.role != "assistant":
            raise ProtocolError(
                f"backend returned a {turn.role} turn, expected assistant",
                turn=turn, fingerprint=fingerprint)
        _validate_tool_calls(turn, tools, fingerprint)
        return turn


def _validate_tool_calls(turn: ChatTurn, tools: Sequence[ToolSchema],
                         fingerprint: str) -> None:
    """Reject tool calls that name unoffered tools or carry arguments that
    are not a schema-conformant JSON object."""
    by_name = {s.name: s for s in tools}
    for call in turn.tool_calls:
        schema = by_name.get(call.name)
        if schema is None:
            raise ProtocolError(f"tool call names unoffered tool {call.name!r}",
                                turn=turn, fingerprint=fingerprint)
        try:
            args = json.loads(call.arguments)
        except json.JSONDecodeError as exc:
            raise ProtocolError(
                f"tool call {call.name}: arguments are not valid JSON ({exc})",
                turn=turn, fingerprint=fingerprint)
        if not isinstance(args, dict):
            raise ProtocolError(
                f"tool call {call.name}: arguments must be a JSON object",
                turn=turn, fingerprint=fingerprint)
        if schema.parameters:
            try:
                jsonschema.validate(args, schema.parameters)
            except jsonschema.ValidationError as exc:
                raise ProtocolError(
                    f"tool call {call.name}: arguments violate schema: {exc.message}",
                    turn=turn, fingerprint=fingerprint)


class RecordingGateway:
    """Wraps another gateway and collects (fingerprint, response) pairs so a
    scripted or live run can be frozen into a cassette."""

    def __init__(self, inner: Gateway):
        self._inner = inner
        self.config = inner.config
        self.exchanges: list[tuple[str, ChatTurn]] = []

    @property
    def call_count(self) -> int:
        return self._inner.call_count

    def complete(self, transcript, tools=()):
        turn = self._inner.complete(transcript, tools)
        fingerprint = fingerprint_request(transcript, tools, self.config.model_id)
        self.exchanges.append((fingerprint, turn))
        return turn
