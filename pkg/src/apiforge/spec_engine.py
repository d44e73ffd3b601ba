"""OpenAPI document handling: parse, validate, version, diff, enumerate.

Validation is structural: version marker, info block, at least one path,
path-parameter consistency, resolvable local references. Findings carry a
severity; only error-severity findings block a save. Warnings surface
style gaps (missing operationId, no success response) without failing.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .errors import SpecError

_CRUD_METHODS = ("get", "post", "put", "patch", "delete")
_PATH_ITEM_EXTRAS = ("parameters", "summary", "description", "servers")
_TEMPLATE_PARAM = re.compile(r"\{([^{}/]+)\}")

SPEC_FILENAME = "openapi_spec.yml"


@dataclass(frozen=True)
class SpecFinding:
    severity: str  # error | warning
    location: str
    message: str

    def __str__(self) -> str:
        return f"[{self.severity}] {self.location}: {self.message}"


def parse_spec(text: str) -> dict[str, Any]:
    """Parse YAML or JSON spec text into a document mapping."""
    if not text or not text.strip():
        raise SpecError("spec text is empty")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise SpecError(f"spec text does not parse{where}: {exc}")
    if not isinstance(doc, dict):
        raise SpecError(f"spec root must be a mapping, got {type(doc).__name__}")
    return doc


def _iter_refs(node: Any, trail: str) -> list[tuple[str, str]]:
    refs: list[tuple[str, str]] = []
    if isinstance(node, dict):
        for key, value in node.items():
            if key == "$ref" and isinstance(value, str):
                refs.append((trail, value))
            else:
                refs.extend(_iter_refs(value, f"{trail}.{key}"))
    elif isinstance(node, list):
        for i, value in enumerate(node):
            refs.extend(_iter_refs(value, f"{trail}[{i}]"))
    return refs


def resolve_ref(doc: dict[str, Any], ref: str) -> Any:
    if not ref.startswith("#/"):
        raise SpecError(f"only document-local refs are supported, got {ref!r}")
    node: Any = doc
    for part in ref[2:].split("/"):
        part = part.replace("~1", "/").replace("~0", "~")
        if not isinstance(node, dict) or part not in node:
            raise SpecError(f"dangling $ref {ref!r}")
        node = node[part]
    return node


def deref(doc: dict[str, Any], node: Any) -> Any:
    """Follow $ref chains until a concrete node is reached."""
    seen: set[str] = set()
    while isinstance(node, dict) and "$ref" in node:
        ref = node["$ref"]
        if ref in seen:
            raise SpecError(f"circular $ref chain at {ref!r}")
        seen.add(ref)
        node = resolve_ref(doc, ref)
    return node


def validate_spec(doc: dict[str, Any]) -> list[SpecFinding]:
    findings: list[SpecFinding] = []

    def error(location: str, message: str) -> None:
        findings.append(SpecFinding("error", location, message))

    def warning(location: str, message: str) -> None:
        findings.append(SpecFinding("warning", location, message))

    version = doc.get("openapi")
    if not isinstance(version, str) or not version.startswith("3."):
        error("openapi", "expected an openapi 3.x version marker")
    info = doc.get("info")
    if not isinstance(info, dict) or not info.get("title"):
        error("info", "info.title is required")

    paths = doc.get("paths")
    if not isinstance(paths, dict) or not paths:
        error("paths", "paths missing")
        return findings

    for path, item in sorted(paths.items()):
        if not path.startswith("/"):
            error(f"paths.{path}", "path must start with /")
        if not isinstance(item, dict):
            error(f"paths.{path}", "path item must be a mapping")
            continue
        template_params = set(_TEMPLATE_PARAM.findall(path))
        shared_params = item.get("parameters", [])
        ops_seen = False
        for method, op in sorted(item.items()):
            if method in _PATH_ITEM_EXTRAS:
                continue
            loc = f"paths.{path}.{method}"
            if method not in _CRUD_METHODS:
                error(loc, f"{method!r} is not a supported operation method")
                continue
            ops_seen = True
            if not isinstance(op, dict):
                error(loc, "operation must be a mapping")
                continue
            if not op.get("operationId"):
                warning(loc, "operation has no operationId")
            responses = op.get("responses")
            if not isinstance(responses, dict) or not responses:
                error(loc, "operation declares no responses")
            else:
                codes = [str(c) for c in responses]
                if not any(c.startswith("2") or c == "default" for c in codes):
                    warning(loc, "operation declares no success response")
            declared: set[str] = set()
            for param in list(shared_params) + list(op.get("parameters", [])):
                if not isinstance(param, dict):
                    continue
                resolved = param
                if "$ref" in param:
                    try:
                        resolved = deref(doc, param)
                    except SpecError:
                        continue  # reported once by the ref walk below
                if resolved.get("in") == "path":
                    declared.add(resolved.get("name"))
                    if not resolved.get("required", False):
                        error(loc, f"path parameter {resolved.get('name')!r} "
                                   "must be required")
            for name in sorted(template_params - declared):
                error(loc, f"path template uses {{{name}}} but never declares it")
            for name in sorted(declared - template_params):
                error(loc, f"declares path parameter {name!r} absent from "
                           "the template")
        if not ops_seen:
            error(f"paths.{path}", "path declares no operations")

    for trail, ref in _iter_refs(doc, "$"):
        try:
            resolve_ref(doc, ref)
        except SpecError:
            error(trail, f"unresolvable reference {ref!r}")

    schemas = (doc.get("components") or {}).get("schemas") or {}
    for name, schema in sorted(schemas.items()):
        if not isinstance(schema, dict):
            error(f"components.schemas.{name}", "schema must be a mapping")
            continue
        required = schema.get("required") or []
        props = schema.get("properties") or {}
        for missing in sorted(set(required) - set(props)):
            error(f"components.schemas.{name}",
                  f"required property {missing!r} is not declared")
    return findings


def error_findings(findings: list[SpecFinding]) -> list[SpecFinding]:
    return [f for f in findings if f.severity == "error"]


def ensure_valid_spec(doc: dict[str, Any]) -> dict[str, Any]:
    errors = error_findings(validate_spec(doc))
    if errors:
        raise SpecError("spec validation failed: "
                        + "; ".join(str(f) for f in errors), findings=errors)
    return doc


# --- operations ---------------------------------------------------------------


@dataclass(frozen=True)
class Operation:
    method: str  # upper-case
    path: str
    operation_id: str | None
    path_params: tuple[tuple[str, str], ...]  # (name, type)
    request_schema: Any = None
    responses: tuple[tuple[str, Any], ...] = ()  # (status, schema node)
    summary: str = ""

    @property
    def label(self) -> str:
        return f"{self.method} {self.path}"

    def response_schema(self, status: int | str) -> Any:
        for code, schema in self.responses:
            if str(status) == code:
                return schema
        for code, schema in self.responses:
            if code == "default":
                return schema
        return None

    def success_statuses(self) -> frozenset[int]:
        """Declared 2xx codes, defaulting to {200, 201, 204} when the spec
        names none explicitly."""
        codes = frozenset(int(c) for c, _ in self.responses
                          if c.isdigit() and c.startswith("2"))
        return codes or frozenset((200, 201, 204))


def _json_schema(doc: dict[str, Any], node: Any) -> Any:
    if not isinstance(node, dict):
        return None
    node = deref(doc, node)
    content = node.get("content")
    if not isinstance(content, dict):
        return None
    for media, body in content.items():
        if media.startswith("application/json") and isinstance(body, dict):
            return body.get("schema")
    return None


def _param_types(doc: dict[str, Any], path: str, item: dict[str, Any],
                 op: dict[str, Any]) -> tuple[tuple[str, str], ...]:
    types: dict[str, str] = {}
    for param in list(item.get("parameters", [])) + list(op.get("parameters", [])):
        if not isinstance(param, dict):
            continue
        try:
            resolved = deref(doc, param)
        except SpecError:
            continue
        if resolved.get("in") == "path":
            schema = resolved.get("schema") or {}
            types[resolved.get("name", "")] = schema.get("type", "string")
    return tuple((name, types.get(name, "string"))
                 for name in _TEMPLATE_PARAM.findall(path))


def list_operations(doc: dict[str, Any]) -> list[Operation]:
    """Flatten paths into operations, sorted by (path, method)."""
    ops: list[Operation] = []
    for path, item in (doc.get("paths") or {}).items():
        if not isinstance(item, dict):
            continue
        for method, op in item.items():
            if method not in _CRUD_METHODS or not isinstance(op, dict):
                continue
            responses = tuple(
                (str(status), _json_schema(doc, resp))
                for status, resp in sorted((op.get("responses") or {}).items(),
                                           key=lambda kv: str(kv[0]))
            )
            ops.append(Operation(
                method=method.upper(),
                path=path,
                operation_id=op.get("operationId"),
                path_params=_param_types(doc, path, item, op),
                request_schema=_json_schema(doc, op.get("requestBody")),
                responses=responses,
                summary=op.get("summary", ""),
            ))
    ops.sort(key=lambda o: (o.path, o.method))
    return ops


def _crud_rank(op: Operation) -> int:
    if op.method == "POST":
        return 0
    if op.method == "GET":
        return 1 if not op.path_params else 2
    if op.method in ("PUT", "PATCH"):
        return 3
    return 4  # DELETE


def list_crud_operations(doc: dict[str, Any]) -> list[Operation]:
    """Operations in execution order: create, read collection, read item,
    update, delete; ties broken by (path, method)."""
    return sorted(list_operations(doc),
                  key=lambda o: (_crud_rank(o), o.path, o.method))


# --- versioned saves ------------------------------------------------------------


@dataclass(frozen=True)
class SpecVersion:
    version_index: int
    saved_at: str
    file_path: str  # relative to the session workspace
    digest: str


def save_spec_text(spec_text: str, workspace: str | Path, version_index: int,
                   saved_at: str) -> SpecVersion:
    """Validate and write spec text as the current spec plus a versioned copy.

    Raises on validation errors with the findings attached; the caller turns
    that into a structured tool result. Nothing is written on failure.
    """
    ensure_valid_spec(parse_spec(spec_text))
    if not spec_text.endswith("\n"):
        spec_text += "\n"
    payload = spec_text.encode("utf-8")
    root = Path(workspace)
    versioned = f"openapi_spec.v{version_index}.yml"
    (root / SPEC_FILENAME).write_bytes(payload)
    (root / versioned).write_bytes(payload)
    return SpecVersion(
        version_index=version_index,
        saved_at=saved_at,
        file_path=versioned,
        digest=hashlib.sha256(payload).hexdigest(),
    )


# --- diffs -----------------------------------------------------------------------


@dataclass(frozen=True)
class SpecChange:
    kind: str  # op_added | op_removed | param_changed | schema_changed
    subject: str
    detail: str = ""


def diff_specs(old: dict[str, Any], new: dict[str, Any]) -> list[SpecChange]:
    """Structural changes between two spec documents.

    Inline operation subtrees are compared with $ref strings left intact, so
    editing one named schema reports exactly one change instead of echoing
    through every operation that references it.
    """

    def raw_ops(doc: dict[str, Any]) -> dict[tuple[str, str], dict[str, Any]]:
        table: dict[tuple[str, str], dict[str, Any]] = {}
        for path, item in (doc.get("paths") or {}).items():
            if not isinstance(item, dict):
                continue
            for method, op in item.items():
                if method in _CRUD_METHODS and isinstance(op, dict):
                    table[(method.upper(), path)] = op
        return table

    changes: list[SpecChange] = []
    old_ops, new_ops = raw_ops(old), raw_ops(new)
    old_params = {(o.method, o.path): o.path_params for o in list_operations(old)}
    new_params = {(o.method, o.path): o.path_params for o in list_operations(new)}

    for method, path in sorted(old_ops.keys() - new_ops.keys()):
        changes.append(SpecChange("op_removed", f"{method} {path}"))
    for method, path in sorted(new_ops.keys() - old_ops.keys()):
        changes.append(SpecChange("op_added", f"{method} {path}"))
    for key in sorted(old_ops.keys() & new_ops.keys()):
        label = f"{key[0]} {key[1]}"
        if old_params.get(key) != new_params.get(key):
            changes.append(SpecChange(
                "param_changed", label,
                f"{list(old_params.get(key) or ())} -> "
                f"{list(new_params.get(key) or ())}"))
        before, after = old_ops[key], new_ops[key]
        if (before.get("requestBody"), before.get("responses")) != (
                after.get("requestBody"), after.get("responses")):
            changes.append(SpecChange("schema_changed", label,
                                      "inline schema changed"))

    old_schemas = (old.get("components") or {}).get("schemas") or {}
    new_schemas = (new.get("components") or {}).get("schemas") or {}
    for name in sorted(set(old_schemas) | set(new_schemas)):
        if name not in new_schemas:
            changes.append(SpecChange("schema_changed", name, "removed"))
        elif name not in old_schemas:
            changes.append(SpecChange("schema_changed", name, "added"))
        elif old_schemas[name] != new_schemas[name]:
            changes.append(SpecChange("schema_changed", name,
                                      "definition changed"))
    return changes
