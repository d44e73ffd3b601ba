"""Command line client for the session service.

Every subcommand except serve talks to the HTTP API; nothing here touches
session internals directly, so the CLI and the web client exercise the
same surface. The session id comes from --session, the APIFORGE_SESSION
env var, or the .apiforge-session file written by `new`.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Any

import click
import httpx

SESSION_FILE = ".apiforge-session"
DEFAULT_SERVICE_URL = "http://127.0.0.1:8765"


def build_client(service_url: str) -> httpx.Client:
    """Module-level hook so tests can swap in an in-process transport."""
    return httpx.Client(base_url=service_url, timeout=60.0)


class CliContext:
    def __init__(self, service_url: str, session_id: str | None,
                 as_json: bool):
        self.service_url = service_url
        self.session_id = session_id
        self.as_json = as_json

    def client(self) -> httpx.Client:
        return build_client(self.service_url)

    def resolve_session(self) -> str:
        if self.session_id:
            return self.session_id
        path = Path(SESSION_FILE)
        if path.exists():
            value = path.read_text(encoding="utf-8").strip()
            if value:
                return value
        raise click.ClickException(
            "no session selected; pass --session or run `apiforge new` first")


def _print_json(data: Any) -> None:
    click.echo(json.dumps(data, sort_keys=True, ensure_ascii=True))


def _fail(ctx_obj: CliContext, message: str, payload: Any = None) -> None:
    if ctx_obj.as_json:
        _print_json({"ok": False, "error": message, "detail": payload})
    else:
        click.echo(f"error: {message}", err=True)
        if payload:
            click.echo(json.dumps(payload, sort_keys=True, indent=2),
                       err=True)
    sys.exit(1)


def _request(ctx_obj: CliContext, method: str, path: str,
             **kwargs: Any) -> dict[str, Any]:
    try:
        with ctx_obj.client() as client:
            response = client.request(method, path, **kwargs)
    except httpx.HTTPError as exc:
        _fail(ctx_obj, f"service unreachable at {ctx_obj.service_url}: {exc}")
    if response.status_code >= 400:
        try:
            detail = response.json()
        except ValueError:
            detail = {"detail": response.text}
        _fail(ctx_obj,
              f"{method} {path} -> HTTP {response.status_code}", detail)
    if not response.content:
        return {}
    return response.json()


def render_event(event: dict[str, Any]) -> str:
    kind = event.get("kind")
    payload = event.get("payload", {})
    if kind == "user_msg":
        return f"you> {payload.get('text', '')}"
    if kind == "agent_msg":
        return f"{payload.get('role', 'agent')}> {payload.get('text', '')}"
    if kind == "tool_call":
        return f"  [tool] {payload.get('name')}"
    if kind == "tool_result":
        result = payload.get("result", {})
        ok = "ok" if result.get("ok") else "failed"
        return f"  [{ok}] {payload.get('name')}"
    if kind == "phase_change":
        return f"== phase {payload.get('from')} -> {payload.get('to')} =="
    if kind == "artifact_saved":
        artifact = payload.get("artifact")
        version = payload.get("version")
        suffix = f" v{version}" if version is not None else ""
        return f"  [saved] {artifact}{suffix} -> {payload.get('path')}"
    if kind == "error":
        return f"!! {payload.get('type')}: {payload.get('message')}"
    return f"  [{kind}]"


def _show_events(ctx_obj: CliContext, data: dict[str, Any]) -> None:
    if ctx_obj.as_json:
        _print_json(data)
        return
    for event in data.get("events", []):
        click.echo(render_event(event))
    if "phase" in data:
        click.echo(f"phase: {data['phase']}")


@click.group()
@click.option("--service-url", envvar="APIFORGE_URL",
              default=DEFAULT_SERVICE_URL, show_default=True,
              help="Base URL of the session service.")
@click.option("--session", "session_id", envvar="APIFORGE_SESSION",
              default=None, help="Session id (defaults to .apiforge-session).")
@click.option("--json", "as_json", is_flag=True, default=False,
              help="Machine-readable output.")
@click.pass_context
def main(ctx: click.Context, service_url: str, session_id: str | None,
         as_json: bool) -> None:
    """Drive an apiforge session service from the terminal."""
    ctx.obj = CliContext(service_url, session_id, as_json)


@main.command()
@click.option("--workspace", type=click.Path(), default="./apiforge-data",
              show_default=True, help="Directory that holds session data.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8765, show_default=True, type=int)
def serve(workspace: str, host: str, port: int) -> None:
    """Run the session service (the one subcommand that is the API)."""
    import uvicorn

    from .service import build_default_app

    Path(workspace).mkdir(parents=True, exist_ok=True)
    uvicorn.run(build_default_app(workspace), host=host, port=port)


@main.command()
@click.option("--backend", type=click.Choice(["live", "replay", "scripted"]),
              default=None, help="LLM backend mode.")
@click.option("--cassette", type=click.Path(), default=None,
              help="Cassette file for replay mode.")
@click.option("--endpoint-url", default=None,
              help="Chat-completions endpoint for live mode.")
@click.option("--model", default=None, help="Model identifier.")
@click.option("--service-base-url", default=None,
              help="Base URL the generated service will listen on.")
@click.option("--auto-continue", is_flag=True, default=False,
              help="Let the fix loop iterate up to its bound in one call.")
@click.option("--session-id", default=None,
              help="Explicit session id (otherwise generated).")
@click.option("--no-save-session", is_flag=True, default=False,
              help="Do not write .apiforge-session.")
@click.pass_obj
def new(ctx_obj: CliContext, backend: str | None, cassette: str | None,
        endpoint_url: str | None, model: str | None,
        service_base_url: str | None, auto_continue: bool,
        session_id: str | None, no_save_session: bool) -> None:
    """Create a session."""
    backend_cfg: dict[str, Any] = {}
    if backend:
        backend_cfg["mode"] = backend
    if cassette:
        backend_cfg["cassette_path"] = str(Path(cassette).resolve())
    if endpoint_url:
        backend_cfg["endpoint_url"] = endpoint_url
    if model:
        backend_cfg["model_id"] = model
    config: dict[str, Any] = {}
    if backend_cfg:
        config["backend"] = backend_cfg
    if service_base_url:
        config["service_base_url"] = service_base_url
    if auto_continue:
        config["auto_continue"] = True
    body: dict[str, Any] = {"config": config}
    if session_id:
        body["session_id"] = session_id
    data = _request(ctx_obj, "POST", "/sessions", json=body)
    if not no_save_session:
        Path(SESSION_FILE).write_text(data["session_id"] + "\n",
                                      encoding="utf-8")
    if ctx_obj.as_json:
        _print_json(data)
    else:
        click.echo(f"session {data['session_id']} ({data['phase']})")


@main.command()
@click.pass_obj
def chat(ctx_obj: CliContext) -> None:
    """Interactive conversation with the session's agents."""
    session_id = ctx_obj.resolve_session()
    if not ctx_obj.as_json:
        click.echo("chatting; 'quit' or EOF to leave")
    while True:
        try:
            line = input("> " if not ctx_obj.as_json else "")
        except EOFError:
            break
        line = line.strip()
        if not line:
            continue
        if line.lower() in ("quit", "exit"):
            break
        data = _request(ctx_obj, "POST", f"/sessions/{session_id}/messages",
                        json={"text": line})
        _show_events(ctx_obj, data)


@main.command()
@click.option("--spec-file", type=click.Path(exists=True), default=None,
              help="Save this exact YAML instead of asking the agent.")
@click.pass_obj
def finalize(ctx_obj: CliContext, spec_file: str | None) -> None:
    """Freeze the current specification draft."""
    session_id = ctx_obj.resolve_session()
    spec_text = None
    if spec_file:
        spec_text = Path(spec_file).read_text(encoding="utf-8")
    data = _request(ctx_obj, "POST", f"/sessions/{session_id}/finalize",
                    json={"spec_text": spec_text})
    _show_events(ctx_obj, data)


@main.command()
@click.pass_obj
def generate(ctx_obj: CliContext) -> None:
    """Generate server code from the finalized specification."""
    session_id = ctx_obj.resolve_session()
    data = _request(ctx_obj, "POST", f"/sessions/{session_id}/generate")
    _show_events(ctx_obj, data)
    had_error = any(e.get("kind") == "error"
                    for e in data.get("events", []))
    sys.exit(1 if had_error else 0)


@main.command()
@click.pass_obj
def run(ctx_obj: CliContext) -> None:
    """Launch the generated service in containers."""
    session_id = ctx_obj.resolve_session()
    data = _request(ctx_obj, "POST", f"/sessions/{session_id}/run")
    _show_events(ctx_obj, data)
    launched = any(e.get("kind") == "tool_result"
                   and e.get("payload", {}).get("result", {}).get("ok")
                   for e in data.get("events", []))
    sys.exit(0 if launched else 1)


@main.command()
@click.pass_obj
def status(ctx_obj: CliContext) -> None:
    """Show container states."""
    session_id = ctx_obj.resolve_session()
    data = _request(ctx_obj, "GET", f"/sessions/{session_id}/status")
    if ctx_obj.as_json:
        _print_json(data["services"])
        return
    services = data.get("services", [])
    if not services:
        click.echo("no services")
        return
    click.echo(f"{'SERVICE':<20} {'STATE':<12} {'EXIT':<6} PORTS")
    for svc in services:
        ports = ",".join(f"{h}->{c}" for h, c in svc.get("ports", []))
        exit_code = svc.get("exit_code")
        click.echo(f"{svc['service_name']:<20} {svc['state']:<12} "
                   f"{('' if exit_code is None else exit_code):<6} {ports}")


@main.command()
@click.option("--tail", type=int, default=None,
              help="Lines per service (default: session setting).")
@click.pass_obj
def logs(ctx_obj: CliContext, tail: int | None) -> None:
    """Show container logs and classified error summaries."""
    session_id = ctx_obj.resolve_session()
    params = {"tail": tail} if tail is not None else {}
    data = _request(ctx_obj, "GET", f"/sessions/{session_id}/logs",
                    params=params)
    if ctx_obj.as_json:
        _print_json(data)
        return
    for service, lines in sorted(data.get("logs", {}).items()):
        click.echo(f"--- {service} ---")
        for line in lines:
            click.echo(line)
    summaries = data.get("error_summaries", [])
    if summaries:
        click.echo("detected problems:")
        for summary in summaries:
            click.echo(f"  {summary['category']} in {summary['service']}: "
                       f"{summary['hint']}")


@main.command()
@click.pass_obj
def probe(ctx_obj: CliContext) -> None:
    """Exercise every CRUD endpoint; exit 0 only if all probes are clean."""
    session_id = ctx_obj.resolve_session()
    report = _request(ctx_obj, "POST", f"/sessions/{session_id}/probe")
    if ctx_obj.as_json:
        _print_json(report)
    else:
        click.echo(f"{'#':<3} {'METHOD':<7} {'PATH':<30} "
                   f"{'STATUS':<7} {'OK':<4} FINDINGS")
        steps = report.get("steps", [])
        for outcome in report.get("outcomes", []):
            index = outcome["step_index"]
            step = steps[index]
            received = outcome.get("received") or {}
            status_code = received.get("status", "-")
            ok = "yes" if outcome.get("status_ok") else "NO"
            findings = outcome.get("schema_findings", [])
            note = findings[0] if findings else (outcome.get("error") or "")
            click.echo(f"{index:<3} {step['method']:<7} {step['path']:<30} "
                       f"{str(status_code):<7} {ok:<4} {note}")
        click.echo(f"all_ok: {report.get('all_ok')}")
    sys.exit(0 if report.get("all_ok") else 1)


@main.command()
@click.option("--issue", required=True,
              help="What looks wrong, in your own words.")
@click.pass_obj
def fix(ctx_obj: CliContext, issue: str) -> None:
    """Run the bounded log-driven fix loop; exit 0 only if resolved."""
    session_id = ctx_obj.resolve_session()
    data = _request(ctx_obj, "POST", f"/sessions/{session_id}/fix",
                    json={"issue": issue})
    if ctx_obj.as_json:
        _print_json({"iterations": data["iterations"],
                     "resolved": data["resolved"]})
    else:
        for event in data.get("events", []):
            click.echo(render_event(event))
        click.echo(f"iterations: {data['iterations']} "
                   f"resolved: {data['resolved']}")
    sys.exit(0 if data.get("resolved") else 1)


@main.command()
@click.option("--out", type=click.Path(), default=None,
              help="Write the bundle here instead of stdout.")
@click.pass_obj
def export(ctx_obj: CliContext, out: str | None) -> None:
    """Download the full session bundle (state, events, artifacts)."""
    session_id = ctx_obj.resolve_session()
    data = _request(ctx_obj, "GET", f"/sessions/{session_id}/export")
    rendered = json.dumps(data, sort_keys=True, ensure_ascii=True, indent=2)
    if out:
        Path(out).write_text(rendered + "\n", encoding="utf-8")
        if ctx_obj.as_json:
            _print_json({"ok": True, "path": out})
        else:
            click.echo(f"wrote {out}")
    else:
        click.echo(rendered)


@main.command()
@click.option("--export-file", type=click.Path(exists=True), required=True,
              help="Bundle produced by `export`.")
@click.option("--cassette", type=click.Path(), default=None,
              help="Cassette to replay against (overrides the bundle's).")
@click.option("--session-id", default=None,
              help="Id for the replayed session.")
@click.pass_obj
def replay(ctx_obj: CliContext, export_file: str, cassette: str | None,
           session_id: str | None) -> None:
    """Re-run an exported session's operations against a fresh session."""
    bundle = json.loads(Path(export_file).read_text(encoding="utf-8"))
    config = dict(bundle.get("config", {}))
    backend = dict(config.get("backend", {}))
    backend["mode"] = "replay"
    if cassette:
        backend["cassette_path"] = str(Path(cassette).resolve())
    config["backend"] = backend
    body: dict[str, Any] = {"config": config}
    if session_id:
        body["session_id"] = session_id
    created = _request(ctx_obj, "POST", "/sessions", json=body)
    new_id = created["session_id"]
    applied = 0
    for operation in bundle.get("operations", []):
        op = operation.get("op")
        args = operation.get("args", {})
        if op == "message":
            _request(ctx_obj, "POST", f"/sessions/{new_id}/messages",
                     json={"text": args["text"]})
        elif op == "finalize":
            _request(ctx_obj, "POST", f"/sessions/{new_id}/finalize",
                     json={"spec_text": args.get("spec_text")})
        elif op == "generate":
            _request(ctx_obj, "POST", f"/sessions/{new_id}/generate")
        elif op == "run":
            _request(ctx_obj, "POST", f"/sessions/{new_id}/run")
        elif op == "probe":
            _request(ctx_obj, "POST", f"/sessions/{new_id}/probe")
        elif op == "fix":
            _request(ctx_obj, "POST", f"/sessions/{new_id}/fix",
                     json={"issue": args["issue"]})
        elif op == "close":
            _request(ctx_obj, "POST", f"/sessions/{new_id}/close")
        else:
            _fail(ctx_obj, f"bundle contains unknown operation: {op}")
        applied += 1
    if ctx_obj.as_json:
        _print_json({"ok": True, "session_id": new_id,
                     "operations_applied": applied})
    else:
        click.echo(f"replayed {applied} operations into session {new_id}")


if __name__ == "__main__":
    main()
