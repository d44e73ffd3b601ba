"""Contract probes: derive an executable plan from a spec, synthesize
request payloads, run the plan against the live service, and check each
response body against its declared schema.

Derivation is pure and deterministic; execution is sequential because
create steps capture identifiers that later steps substitute into their
paths. Failures never abort the plan: every step reports an outcome.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any
from urllib.parse import quote

from . import runtime_tools
from .errors import DerivationError
from .runtime_tools import HttpProbeRequest, HttpProbeResponse
from .spec_engine import Operation, SpecFinding, deref, list_crud_operations

_BODY_METHODS = ("POST", "PUT", "PATCH")


# --- payload synthesis -----------------------------------------------------------


def _synth_value(doc: dict[str, Any] | None, schema: Any, field_name: str) -> Any:
    if doc is not None:
        schema = deref(doc, schema)
    if not isinstance(schema, dict):
        raise DerivationError(f"cannot synthesize from schema {schema!r}",
                              parameter=field_name)
    if "enum" in schema and schema["enum"]:
        return schema["enum"][0]
    kind = schema.get("type")
    if kind is None:
        if "items" in schema:
            kind = "array"
        else:
            kind = "object"
    if kind == "string":
        return f"sample-{field_name}" if field_name else "sample-value"
    if kind == "integer":
        return 1
    if kind == "number":
        return 1.0
    if kind == "boolean":
        return True
    if kind == "array":
        return [_synth_value(doc, schema.get("items", {}), field_name)]
    if kind == "object":
        props = schema.get("properties") or {}
        return {name: _synth_value(doc, sub, name) for name, sub in props.items()}
    raise DerivationError(f"unsupported schema kind {kind!r}",
                          parameter=field_name)


def synthesize_payload(schema: Any, seed: int = 0,
                       doc: dict[str, Any] | None = None,
                       field_name: str = "") -> str:
    """Deterministic JSON text conforming to the schema. The seed is part of
    the signature for callers that want distinct fixtures; the default rules
    produce one canonical value per schema."""
    del seed  # rules are constant-valued; see docstring
    return json.dumps(_synth_value(doc, schema, field_name), sort_keys=True)


# --- plan derivation ----------------------------------------------------------------


@dataclass(frozen=True)
class ProbeStep:
    operation: Operation
    request: HttpProbeRequest  # url may contain {param} placeholders
    capture: str | None = None
    expect_status: frozenset[int] = frozenset((200, 201, 204))


@dataclass(frozen=True)
class ProbePlan:
    base_url: str
    steps: tuple[ProbeStep, ...]


def _find_id_property(doc: dict[str, Any], schema: Any) -> str | None:
    """The capture source in a create response: the property named "id", or
    the sole required integer/string property whose name ends in "id".
    Two candidates is ambiguity, not a guess."""
    if schema is None:
        return None
    node = deref(doc, schema)
    if not isinstance(node, dict):
        return None
    if node.get("type") == "array" or "items" in node:
        node = deref(doc, node.get("items", {}))
        if not isinstance(node, dict):
            return None
    props = node.get("properties") or {}
    if "id" in props:
        return "id"
    required = node.get("required") or []
    candidates = []
    for name in required:
        if not name.lower().endswith("id"):
            continue
        prop = deref(doc, props.get(name, {}))
        if isinstance(prop, dict) and prop.get("type") in ("integer", "string"):
            candidates.append(name)
    if len(candidates) > 1:
        raise DerivationError(
            f"multiple identifier candidates in create response: {candidates}",
            parameter=candidates[0])
    return candidates[0] if candidates else None


def _param_literal(doc: dict[str, Any], path: str, name: str) -> Any | None:
    """A literal binding declared in the spec itself: an example, default,
    or single-member enum on the path parameter."""
    item = (doc.get("paths") or {}).get(path) or {}
    pools = [item.get("parameters") or []]
    for method_op in item.values():
        if isinstance(method_op, dict):
            pools.append(method_op.get("parameters") or [])
    for pool in pools:
        for param in pool:
            if not isinstance(param, dict):
                continue
            param = deref(doc, param)
            if param.get("in") != "path" or param.get("name") != name:
                continue
            if "example" in param:
                return param["example"]
            schema = deref(doc, param.get("schema") or {})
            if isinstance(schema, dict):
                if "example" in schema:
                    return schema["example"]
                if "default" in schema:
                    return schema["default"]
                enum = schema.get("enum") or []
                if enum:
                    return enum[0]
    return None


def derive_probes(doc: dict[str, Any], base_url: str) -> ProbePlan:
    """One step per operation in create/read/update/delete order; the create
    step's response identifier feeds {id}-style parameters of later steps."""
    ops = list_crud_operations(doc)
    if not ops:
        raise DerivationError("spec declares no operations")
    base = base_url.rstrip("/")
    bindings: dict[str, int] = {}  # capture name -> providing step index
    steps: list[ProbeStep] = []
    for index, op in enumerate(ops):
        for name, _ in op.path_params:
            if name in bindings and bindings[name] < index:
                continue
            if name.lower().endswith("id") and any(
                    i < index for i in bindings.values()):
                continue  # id-suffixed params may use any earlier capture
            if _param_literal(doc, op.path, name) is not None:
                continue
            raise DerivationError(
                f"path parameter {name!r} of {op.label} has no capture source "
                f"and no literal binding", parameter=name)
        body = ""
        headers: tuple[tuple[str, str], ...] = ()
        if op.method in _BODY_METHODS and op.request_schema is not None:
            body = synthesize_payload(op.request_schema, doc=doc)
            headers = (("content-type", "application/json"),)
        capture = None
        if op.method == "POST":
            success = sorted(op.success_statuses())
            schema = None
            for status in success:
                schema = op.response_schema(status)
                if schema is not None:
                    break
            found = _find_id_property(doc, schema)
            if found is not None and found not in bindings:
                capture = found
                bindings[found] = index
        steps.append(ProbeStep(
            operation=op,
            request=HttpProbeRequest(method=op.method, url=base + op.path,
                                     headers=headers, body=body),
            capture=capture,
            expect_status=op.success_statuses(),
        ))
    return ProbePlan(base_url=base, steps=tuple(steps))


# --- response checking -----------------------------------------------------------


def _check_value(doc: dict[str, Any], value: Any, schema: Any,
                 where: str) -> list[SpecFinding]:
    schema = deref(doc, schema)
    if not isinstance(schema, dict):
        return []
    findings: list[SpecFinding] = []

    def finding(message: str) -> None:
        findings.append(SpecFinding("error", where, message))

    kind = schema.get("type")
    if kind is None:
        kind = "array" if "items" in schema else (
            "object" if "properties" in schema else None)
    if kind is None:
        return []
    if kind == "object":
        if not isinstance(value, dict):
            finding(f"expected object, got {type(value).__name__}")
            return findings
        props = schema.get("properties") or {}
        for name in schema.get("required") or []:
            if name not in value:
                finding(f"missing required property {name!r}")
        for name, sub in props.items():
            if name in value:
                findings.extend(_check_value(doc, value[name], sub,
                                             f"{where}.{name}"))
        return findings
    if kind == "array":
        if not isinstance(value, list):
            finding(f"expected array, got {type(value).__name__}")
            return findings
        items = schema.get("items")
        if items is not None:
            for i, element in enumerate(value):
                findings.extend(_check_value(doc, element, items,
                                             f"{where}[{i}]"))
        return findings
    checks = {
        "string": lambda v: isinstance(v, str),
        "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
        "number": lambda v: isinstance(v, (int, float))
        and not isinstance(v, bool),
        "boolean": lambda v: isinstance(v, bool),
    }
    check = checks.get(kind)
    if check is None:
        return []
    if value is None and schema.get("nullable"):
        return []
    if not check(value):
        finding(f"expected {kind}, got {type(value).__name__}")
    return findings


def check_response(body_text: str, schema: Any,
                   doc: dict[str, Any]) -> list[SpecFinding]:
    """Structural conformance of a response body to its declared schema."""
    if schema is None:
        return []
    try:
        value = json.loads(body_text)
    except (json.JSONDecodeError, TypeError):
        return [SpecFinding("error", "$", "body not JSON")]
    return _check_value(doc, value, schema, "$")


# --- execution -----------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeOutcome:
    step_index: int
    sent: HttpProbeRequest | None
    received: HttpProbeResponse | None
    status_ok: bool
    schema_findings: tuple[SpecFinding, ...] = ()
    error: str = ""


def _substitute(url: str, values: dict[str, Any]) -> tuple[str, str | None]:
    """Fill {param} placeholders; returns (url, unresolved parameter)."""
    out = url
    for name, value in values.items():
        out = out.replace("{" + name + "}", quote(str(value), safe=""))
    if "{" in out:
        missing = out[out.index("{") + 1:]
        return out, missing[:missing.index("}")] if "}" in missing else missing
    return out, None


def execute_plan(plan: ProbePlan, session: Any,
                 doc: dict[str, Any]) -> list[ProbeOutcome]:
    """Run every step in order, resolving captures; a failing step never
    stops the ones after it."""
    captured: dict[str, Any] = {}
    outcomes: list[ProbeOutcome] = []
    for index, step in enumerate(plan.steps):
        literals = {
            name: _param_literal(doc, step.operation.path, name)
            for name, _ in step.operation.path_params
        }
        values = {k: v for k, v in literals.items() if v is not None}
        values.update(captured)
        for name, _ in step.operation.path_params:
            if name not in values and name.lower().endswith("id") \
                    and "id" in captured:
                values[name] = captured["id"]
        url, unresolved = _substitute(step.request.url, values)
        if unresolved is not None:
            outcomes.append(ProbeOutcome(
                step_index=index, sent=None, received=None, status_ok=False,
                error=f"no captured value for parameter {unresolved!r}"))
            continue
        sent = HttpProbeRequest(method=step.request.method, url=url,
                                headers=step.request.headers,
                                body=step.request.body)
        result = runtime_tools.run_curl_tool(session, {
            "method": sent.method, "url": sent.url,
            "headers": dict(sent.headers), "body": sent.body,
        })
        if not result.get("ok"):
            outcomes.append(ProbeOutcome(
                step_index=index, sent=sent, received=None, status_ok=False,
                error=result.get("error", {}).get("message", "request failed")))
            continue
        received = HttpProbeResponse(
            status=result["status"], headers=(), body=result["body"],
            elapsed_ms=result["elapsed_ms"])
        status_ok = received.status in step.expect_status
        schema = step.operation.response_schema(received.status)
        findings: tuple[SpecFinding, ...] = ()
        if received.body.strip():
            findings = tuple(check_response(received.body, schema, doc))
        if step.capture and status_ok:
            captured.update(_extract_capture(received.body, step.capture,
                                             captured))
        outcomes.append(ProbeOutcome(
            step_index=index, sent=sent, received=received,
            status_ok=status_ok, schema_findings=findings))
    return outcomes


def _extract_capture(body_text: str, name: str,
                     existing: dict[str, Any]) -> dict[str, Any]:
    try:
        value = json.loads(body_text)
    except (json.JSONDecodeError, TypeError):
        return {}
    if isinstance(value, list) and value:
        value = value[0]
    if isinstance(value, dict) and name in value:
        found = {name: value[name]}
        # id-suffixed path params elsewhere in the plan resolve by exact
        # name first; the generic "id" alias covers the common {id} case
        if name != "id" and "id" not in existing:
            found.setdefault("id", value[name])
        return found
    return {}


# --- reporting ------------------------------------------------------------------------


def report_to_dict(plan: ProbePlan,
                   outcomes: list[ProbeOutcome]) -> dict[str, Any]:
    """JSON-ready report; volatile response headers are deliberately absent
    so identical runs serialize identically."""
    return {
        "base_url": plan.base_url,
        "steps": [
            {
                "method": s.operation.method,
                "path": s.operation.path,
                "operation_id": s.operation.operation_id,
                "url": s.request.url,
                "body": s.request.body,
                "capture": s.capture,
                "expect_status": sorted(s.expect_status),
            }
            for s in plan.steps
        ],
        "outcomes": [
            {
                "step_index": o.step_index,
                "sent": None if o.sent is None else {
                    "method": o.sent.method, "url": o.sent.url,
                    "body": o.sent.body,
                },
                "received": None if o.received is None else {
                    "status": o.received.status, "body": o.received.body,
                    "elapsed_ms": o.received.elapsed_ms,
                },
                "status_ok": o.status_ok,
                "schema_findings": [str(f) for f in o.schema_findings],
                "error": o.error,
            }
            for o in outcomes
        ],
        "all_ok": bool(outcomes) and all(
            o.status_ok and not o.schema_findings and not o.error
            for o in outcomes),
    }
