from __future__ import annotations

import json
import time
from types import SimpleNamespace

import pytest
from fastapi.testclient import TestClient

from apiforge.service import (OPERATIONS_FILENAME, SessionManager,
                              create_app)
from conftest import (PRODUCT_SPEC_YAML, PRODUCT_TREE, broken_runner,
                      fixed_clock, fixed_timer, healthy_runner,
                      pipeline_script, start_stub_server)


@pytest.fixture
def api(tmp_path):
    """App + client whose sessions run a scripted model and a fake engine.

    Tests call set_script() before POST /sessions; the manager's dependency
    factory picks the script up for the next created session.
    """
    root = tmp_path / "sessions"
    pending: dict[str, object] = {"script": [], "runner": None}

    def deps_factory(config, session_id):
        from apiforge.llm_gateway import Gateway
        script = pending["script"]
        runner = pending["runner"] or healthy_runner(root / session_id)
        return {
            "gateway": Gateway.scripted(
                script if callable(script) else list(script)),
            "runner": runner,
            "clock": fixed_clock(),
            "timer": fixed_timer(),
        }

    manager = SessionManager(root, deps_factory=deps_factory)
    app = create_app(manager)
    client = TestClient(app, raise_server_exceptions=False)

    def set_script(script, runner=None):
        pending["script"] = script
        pending["runner"] = runner

    yield SimpleNamespace(client=client, set_script=set_script, root=root,
                          manager=manager)
    client.close()


def new_session(api, script=None, session_id="s-api", config=None,
                runner=None) -> str:
    api.set_script(script if script is not None else pipeline_script(),
                   runner=runner)
    body = {"session_id": session_id}
    if config:
        body["config"] = config
    response = api.client.post("/sessions", json=body)
    assert response.status_code == 201, response.text
    return response.json()["session_id"]


def drive_to_running(api, session_id):
    api.client.post(f"/sessions/{session_id}/messages",
                    json={"text": "Draft a product service."})
    api.client.post(f"/sessions/{session_id}/finalize", json={})
    api.client.post(f"/sessions/{session_id}/generate")
    response = api.client.post(f"/sessions/{session_id}/run")
    assert response.json()["phase"] == "Running", response.text


class TestServiceBasics:
    def test_root_identifies_the_service(self, api):
        data = api.client.get("/").json()
        assert data["service"] == "apiforge"
        assert data["version"]

    def test_create_session_returns_identity_and_phase(self, api):
        api.set_script([])
        response = api.client.post("/sessions", json={"session_id": "s-one"})
        assert response.status_code == 201
        assert response.json() == {"session_id": "s-one",
                                   "phase": "Drafting"}

    def test_unknown_config_key_is_422(self, api):
        api.set_script([])
        response = api.client.post("/sessions", json={
            "session_id": "s-bad", "config": {"bogus_knob": 3}})
        assert response.status_code == 422
        assert "bogus_knob" in response.json()["detail"]

    def test_bad_nested_config_is_422(self, api):
        api.set_script([])
        response = api.client.post("/sessions", json={
            "session_id": "s-bad", "config": {"backend": {"nope": 1}}})
        assert response.status_code == 422

    def test_config_overrides_apply(self, api):
        session_id = new_session(api, [], session_id="s-conf",
                                 config={"max_fix_iterations": 2,
                                         "auto_continue": True})
        summary = api.client.get(f"/sessions/{session_id}").json()
        assert summary["phase"] == "Drafting"
        session = api.manager.get(session_id)
        assert session.config.max_fix_iterations == 2
        assert session.config.auto_continue is True

    def test_unknown_session_is_404(self, api):
        assert api.client.get("/sessions/s-ghost").status_code == 404
        assert api.client.post("/sessions/s-ghost/messages",
                               json={"text": "x"}).status_code == 404
        assert api.client.post("/sessions/s-ghost/generate")\
            .status_code == 404

    def test_missing_body_field_is_422(self, api):
        session_id = new_session(api, [])
        response = api.client.post(f"/sessions/{session_id}/messages",
                                   json={})
        assert response.status_code == 422

    def test_listing_includes_created_sessions(self, api):
        new_session(api, [], session_id="s-l1")
        new_session(api, [], session_id="s-l2")
        rows = api.client.get("/sessions").json()["sessions"]
        assert [r["session_id"] for r in rows] == ["s-l1", "s-l2"]


class TestPhaseGatesOverHttp:
    def test_generate_while_drafting_is_409(self, api):
        session_id = new_session(api, [])
        response = api.client.post(f"/sessions/{session_id}/generate")
        assert response.status_code == 409
        assert "finalized" in response.json()["detail"]

    def test_probe_before_running_is_409(self, api):
        session_id = new_session(api, [])
        response = api.client.post(f"/sessions/{session_id}/probe")
        assert response.status_code == 409

    def test_fix_before_running_is_409(self, api):
        session_id = new_session(api, [])
        response = api.client.post(f"/sessions/{session_id}/fix",
                                   json={"issue": "nothing yet"})
        assert response.status_code == 409

    def test_failed_operation_still_journals(self, api):
        session_id = new_session(api, [])
        api.client.post(f"/sessions/{session_id}/generate")
        ops_path = api.root / session_id / OPERATIONS_FILENAME
        ops = [json.loads(line)
               for line in ops_path.read_text().splitlines()]
        assert {"op": "generate", "args": {}} in ops


class TestPipelineOverHttp:
    def test_message_returns_the_event_delta(self, api):
        session_id = new_session(api)
        response = api.client.post(f"/sessions/{session_id}/messages",
                                   json={"text": "Draft it."})
        data = response.json()
        assert data["phase"] == "Drafting"
        assert [e["kind"] for e in data["events"]] == ["user_msg",
                                                       "agent_msg"]
        assert data["events"][0]["payload"]["text"] == "Draft it."

    def test_full_pipeline(self, api):
        stub = start_stub_server()
        try:
            session_id = new_session(
                api, config={"service_base_url": stub.base_url})
            api.client.post(f"/sessions/{session_id}/messages",
                            json={"text": "Draft it."})
            finalized = api.client.post(
                f"/sessions/{session_id}/finalize", json={}).json()
            assert finalized["phase"] == "Finalized"
            generated = api.client.post(
                f"/sessions/{session_id}/generate").json()
            assert generated["phase"] == "Generated"
            running = api.client.post(f"/sessions/{session_id}/run").json()
            assert running["phase"] == "Running"
            report = api.client.post(f"/sessions/{session_id}/probe").json()
            assert report["all_ok"] is True
            assert len(report["steps"]) == 4
        finally:
            stub.server.shutdown()

    def test_finalize_with_explicit_text(self, api):
        session_id = new_session(api, [])
        response = api.client.post(f"/sessions/{session_id}/finalize",
                                   json={"spec_text": PRODUCT_SPEC_YAML})
        assert response.json()["phase"] == "Finalized"

    def test_fix_reports_iterations_and_outcome(self, api):
        script = pipeline_script(extra=[patched_tree_turn()])
        session_id = new_session(api, script)
        drive_to_running(api, session_id)
        response = api.client.post(f"/sessions/{session_id}/fix",
                                   json={"issue": "response shape drifted"})
        data = response.json()
        assert data["resolved"] is True
        assert data["iterations"] == 1
        assert any(e["kind"] == "tool_call" for e in data["events"])

    def test_close_ends_the_session(self, api):
        session_id = new_session(api, [])
        response = api.client.post(f"/sessions/{session_id}/close")
        assert response.json() == {"phase": "Closed"}
        followup = api.client.post(f"/sessions/{session_id}/messages",
                                   json={"text": "hello?"}).json()
        assert [e["kind"] for e in followup["events"]] == ["error"]
        assert followup["phase"] == "Closed"

    def test_status_and_logs_endpoints(self, api):
        session_id = new_session(api)
        drive_to_running(api, session_id)
        services = api.client.get(
            f"/sessions/{session_id}/status").json()["services"]
        assert services == [{"service_name": "api", "state": "running",
                             "exit_code": None, "ports": [[3000, 3000]]}]
        logs = api.client.get(f"/sessions/{session_id}/logs",
                              params={"tail": 5}).json()
        assert logs["error_summaries"] == []
        assert any("listening" in line for line in logs["logs"]["api"])


def patched_tree_turn():
    from apiforge.llm_gateway import ChatTurn
    tree = dict(PRODUCT_TREE)
    tree["server/index.js"] = "// fixed\n" + tree["server/index.js"]
    return ChatTurn(role="assistant", content=json.dumps(tree))


class TestEventFeed:
    def test_cursor_pagination(self, api):
        session_id = new_session(api)
        api.client.post(f"/sessions/{session_id}/messages",
                        json={"text": "Draft it."})
        first = api.client.get(f"/sessions/{session_id}/events").json()
        assert [e["seq"] for e in first["events"]] == [1, 2]
        assert first["cursor"] == 2
        empty = api.client.get(f"/sessions/{session_id}/events",
                               params={"after": first["cursor"]}).json()
        assert empty["events"] == []
        assert empty["cursor"] == 2

    def test_stream_replays_everything_once(self, api):
        session_id = new_session(api)
        api.client.post(f"/sessions/{session_id}/messages",
                        json={"text": "Draft it."})
        api.client.post(f"/sessions/{session_id}/finalize", json={})
        expected = api.client.get(
            f"/sessions/{session_id}/events").json()["events"]
        with api.client.stream(
                "GET", f"/sessions/{session_id}/events/stream") as response:
            assert response.headers["content-type"].startswith(
                "application/x-ndjson")
            lines = [json.loads(line) for line in response.iter_lines()
                     if line]
        assert lines == expected

    def test_stream_resumes_from_a_cursor(self, api):
        session_id = new_session(api)
        api.client.post(f"/sessions/{session_id}/messages",
                        json={"text": "Draft it."})
        with api.client.stream(
                "GET", f"/sessions/{session_id}/events/stream",
                params={"after": 1}) as response:
            lines = [json.loads(line) for line in response.iter_lines()
                     if line]
        assert [e["seq"] for e in lines] == [2]

    def test_follow_mode_ends_on_idle_timeout(self, api):
        session_id = new_session(api)
        api.client.post(f"/sessions/{session_id}/messages",
                        json={"text": "Draft it."})
        started = time.monotonic()
        with api.client.stream(
                "GET", f"/sessions/{session_id}/events/stream",
                params={"follow": True, "idle_timeout": 0.4}) as response:
            lines = [line for line in response.iter_lines() if line]
        elapsed = time.monotonic() - started
        assert len(lines) == 2
        assert elapsed < 10

    def test_follow_mode_ends_when_closed(self, api):
        session_id = new_session(api, [])
        api.client.post(f"/sessions/{session_id}/close")
        with api.client.stream(
                "GET", f"/sessions/{session_id}/events/stream",
                params={"follow": True, "idle_timeout": 30}) as response:
            lines = [line for line in response.iter_lines() if line]
        assert len(lines) == 1  # the phase_change to Closed


class TestArtifacts:
    def test_spec_artifact_round_trip(self, api):
        session_id = new_session(api, [])
        api.client.post(f"/sessions/{session_id}/finalize",
                        json={"spec_text": PRODUCT_SPEC_YAML})
        data = api.client.get(
            f"/sessions/{session_id}/artifacts/spec").json()
        assert data["version"] == 1
        assert data["text"].startswith("openapi: 3.0.3")
        assert len(data["digest"]) == 64

    def test_spec_artifact_missing_is_404(self, api):
        session_id = new_session(api, [])
        response = api.client.get(f"/sessions/{session_id}/artifacts/spec")
        assert response.status_code == 404

    def test_spec_artifact_by_version(self, api):
        session_id = new_session(api, [])
        api.client.post(f"/sessions/{session_id}/finalize",
                        json={"spec_text": PRODUCT_SPEC_YAML})
        v2 = PRODUCT_SPEC_YAML.replace('"1.0"', '"2.0"')
        api.client.post(f"/sessions/{session_id}/finalize",
                        json={"spec_text": v2})
        first = api.client.get(f"/sessions/{session_id}/artifacts/spec",
                               params={"version": 1}).json()
        latest = api.client.get(
            f"/sessions/{session_id}/artifacts/spec").json()
        assert first["version"] == 1 and latest["version"] == 2
        assert first["text"] != latest["text"]
        missing = api.client.get(f"/sessions/{session_id}/artifacts/spec",
                                 params={"version": 9})
        assert missing.status_code == 404

    def test_tree_artifact_contains_entries(self, api):
        session_id = new_session(api)
        api.client.post(f"/sessions/{session_id}/messages",
                        json={"text": "Draft it."})
        api.client.post(f"/sessions/{session_id}/finalize", json={})
        api.client.post(f"/sessions/{session_id}/generate")
        data = api.client.get(
            f"/sessions/{session_id}/artifacts/tree").json()
        assert data["version"] == 1
        assert data["entries"] == PRODUCT_TREE

    def test_probe_report_available_after_probing(self, api):
        stub = start_stub_server()
        try:
            session_id = new_session(
                api, config={"service_base_url": stub.base_url})
            assert api.client.get(
                f"/sessions/{session_id}/artifacts/probe-report")\
                .status_code == 404
            drive_to_running(api, session_id)
            api.client.post(f"/sessions/{session_id}/probe")
            report = api.client.get(
                f"/sessions/{session_id}/artifacts/probe-report").json()
            assert report["all_ok"] is True
        finally:
            stub.server.shutdown()

    def test_artifact_index_flags(self, api):
        session_id = new_session(api, [])
        index = api.client.get(f"/sessions/{session_id}/artifacts").json()
        assert index == {"spec_versions": [], "tree_versions": [],
                         "probe_report": False}


class TestExportAndReload:
    def test_export_carries_the_whole_session(self, api):
        stub = start_stub_server()
        try:
            session_id = new_session(
                api, config={"service_base_url": stub.base_url})
            api.client.post(f"/sessions/{session_id}/messages",
                            json={"text": "Draft it."})
            api.client.post(f"/sessions/{session_id}/finalize", json={})
            api.client.post(f"/sessions/{session_id}/generate")
            api.client.post(f"/sessions/{session_id}/run")
            api.client.post(f"/sessions/{session_id}/probe")
            bundle = api.client.get(
                f"/sessions/{session_id}/export").json()
        finally:
            stub.server.shutdown()
        assert bundle["state"]["phase"] == "Running"
        assert [op["op"] for op in bundle["operations"]] == [
            "message", "finalize", "generate", "run", "probe"]
        assert "openapi_spec.v1.yml" in bundle["artifacts"]["specs"]
        assert "tree.v1.json" in bundle["artifacts"]["trees"]
        assert bundle["artifacts"]["probe_report"]["all_ok"] is True
        assert [e["seq"] for e in bundle["events"]] == \
            list(range(1, len(bundle["events"]) + 1))

    def test_sessions_reload_from_disk_after_restart(self, api, tmp_path):
        session_id = new_session(api)
        drive_to_running(api, session_id)

        def reload_deps(config, sid):
            return {"runner": healthy_runner(api.root / sid),
                    "gateway": object(), "clock": fixed_clock(),
                    "timer": fixed_timer()}

        fresh_manager = SessionManager(api.root, deps_factory=reload_deps)
        fresh_client = TestClient(create_app(fresh_manager))
        summary = fresh_client.get(f"/sessions/{session_id}").json()
        assert summary["phase"] == "Running"
        listed = fresh_client.get("/sessions").json()["sessions"]
        assert {"session_id": session_id, "phase": "Running"} in listed
        events = fresh_client.get(
            f"/sessions/{session_id}/events").json()["events"]
        assert [e["seq"] for e in events] == \
            list(range(1, len(events) + 1))
        fresh_client.close()
