from __future__ import annotations

import http.server
import itertools
import json
import re
import threading
from types import SimpleNamespace

import pytest

from apiforge.llm_gateway import ChatTurn, Gateway, ToolCall
from apiforge.runtime_tools import FakeProcessRunner, RunResult
from apiforge.session import SessionConfig, create_session

PRODUCT_SPEC_YAML = """\
openapi: 3.0.3
info:
  title: Product Catalog
  version: "1.0"
paths:
  /products:
    post:
      operationId: createProduct
      requestBody:
        required: true
        content:
          application/json:
            schema:
              $ref: '#/components/schemas/ProductInput'
      responses:
        "201":
          description: Created
          content:
            application/json:
              schema:
                $ref: '#/components/schemas/Product'
    get:
      operationId: listProducts
      responses:
        "200":
          description: All products
          content:
            application/json:
              schema:
                type: array
                items:
                  $ref: '#/components/schemas/Product'
  /products/{id}:
    put:
      operationId: replaceProduct
      parameters:
        - name: id
          in: path
          required: true
          schema:
            type: integer
      requestBody:
        required: true
        content:
          application/json:
            schema:
              $ref: '#/components/schemas/ProductInput'
      responses:
        "200":
          description: Updated product
          content:
            application/json:
              schema:
                $ref: '#/components/schemas/Product'
    delete:
      operationId: deleteProduct
      parameters:
        - name: id
          in: path
          required: true
          schema:
            type: integer
      responses:
        "204":
          description: Deleted
components:
  schemas:
    ProductInput:
      type: object
      required: [name, description, price, quantity]
      properties:
        name:
          type: string
        description:
          type: string
        price:
          type: number
        quantity:
          type: integer
    Product:
      type: object
      required: [id, name, description, price, quantity]
      properties:
        id:
          type: integer
        name:
          type: string
        description:
          type: string
        price:
          type: number
        quantity:
          type: integer
"""

PRODUCT_TREE = {
    "package.json": '{\n  "name": "product-api",\n'
                    '  "main": "server/index.js"\n}\n',
    "Dockerfile": "FROM node:20-alpine\nWORKDIR /app\nCOPY . .\n"
                  'CMD ["node", "server/index.js"]\n',
    "docker-compose.yml": 'services:\n  api:\n    build: .\n    ports:\n'
                          '      - "3000:3000"\n',
    "server/index.js": "const http = require('http');\n"
                       "http.createServer((q, s) => s.end('ok'))"
                       ".listen(3000);\n",
}
PRODUCT_TREE_JSON = json.dumps(PRODUCT_TREE, indent=2)

HEALTHY_PS = json.dumps({
    "Service": "api", "State": "running",
    "Publishers": [{"PublishedPort": 3000, "TargetPort": 3000}],
}) + "\n"
EXITED_PS = json.dumps({"Service": "api", "State": "exited",
                        "ExitCode": 1}) + "\n"
HEALTHY_LOGS = ("api  | 2024-01-01T00:00:00.000000000Z "
                "Server listening on port 3000\n")
CRASH_LOGS = (
    "api  | 2024-01-01T00:00:01.000000000Z "
    "Error: Cannot find module 'express'\n"
    "api  | 2024-01-01T00:00:01.100000000Z "
    "    at Function.Module._load (node:internal/modules/cjs/loader:933:19)\n"
)


def fixed_clock():
    counter = itertools.count(0)

    def clock() -> str:
        tick = next(counter)
        return (f"2024-01-01T{tick // 3600:02d}:"
                f"{tick % 3600 // 60:02d}:{tick % 60:02d}+00:00")

    return clock


def fixed_timer():
    counter = itertools.count(0)

    def timer() -> float:
        return float(next(counter))

    return timer


def healthy_runner(workspace) -> FakeProcessRunner:
    runner = FakeProcessRunner(["docker"], workspace)
    runner.respond("ps", RunResult(0, HEALTHY_PS), sticky=True)
    runner.respond("logs", RunResult(0, HEALTHY_LOGS), sticky=True)
    return runner


def broken_runner(workspace) -> FakeProcessRunner:
    runner = FakeProcessRunner(["docker"], workspace)
    runner.respond("ps", RunResult(0, EXITED_PS), sticky=True)
    runner.respond("logs", RunResult(0, CRASH_LOGS), sticky=True)
    return runner


def save_spec_turn(spec_yaml: str, call_id: str = "c-spec") -> ChatTurn:
    return ChatTurn(role="assistant", content="", tool_calls=(
        ToolCall(id=call_id, name="save_openapi_spec",
                 arguments=json.dumps({"spec_text": spec_yaml})),))


def pipeline_script(spec_yaml: str = PRODUCT_SPEC_YAML,
                    tree_json: str = PRODUCT_TREE_JSON,
                    extra: list[ChatTurn] | None = None) -> list[ChatTurn]:
    """Turns for draft -> finalize -> generate, in gateway call order."""
    return [
        ChatTurn(role="assistant",
                 content="Here is a draft contract for the product catalog."),
        save_spec_turn(spec_yaml),
        ChatTurn(role="assistant", content="Saved the contract."),
        ChatTurn(role="assistant", content=tree_json),
        *(extra or []),
    ]


def make_session(tmp_path, script, *, session_id: str = "s-test",
                 runner: FakeProcessRunner | None = None,
                 config: SessionConfig | None = None,
                 clock=None, timer=None, gateway=None):
    workspace_root = tmp_path / "sessions"
    workspace_root.mkdir(parents=True, exist_ok=True)
    config = config or SessionConfig()
    workspace = workspace_root / session_id
    if runner is None:
        runner = healthy_runner(workspace)
    session = create_session(
        config, workspace_root, session_id=session_id,
        gateway=gateway or Gateway.scripted(
            script if callable(script) else list(script)),
        runner=runner, clock=clock or fixed_clock(),
        timer=timer or fixed_timer())
    return session


def advance_to_generated(session) -> None:
    session.handle_user_message("Please draft a product catalog service.")
    session.finalize_spec()
    session.generate_code()
    assert session.phase == "Generated", session.phase


def advance_to_running(session) -> None:
    advance_to_generated(session)
    session.launch()
    assert session.phase == "Running", session.phase


class _StubCrudBase(http.server.BaseHTTPRequestHandler):
    """In-process CRUD server over /products, the probe target."""

    store: dict[int, dict]
    ids: itertools.count
    drop_price_on_put = False

    def log_message(self, *args):  # keep test output quiet
        pass

    def _send(self, status: int, payload=None) -> None:
        body = b"" if payload is None else json.dumps(payload).encode()
        self.send_response(status)
        if body:
            self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        if body:
            self.wfile.write(body)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        return json.loads(raw) if raw else {}

    def do_POST(self):
        if self.path == "/products":
            item = self._read_body()
            item["id"] = next(self.ids)
            self.store[item["id"]] = item
            self._send(201, item)
        else:
            self._send(404, {"detail": "not found"})

    def do_GET(self):
        if self.path == "/products":
            self._send(200, list(self.store.values()))
        else:
            self._send(404, {"detail": "not found"})

    def do_PUT(self):
        match = re.fullmatch(r"/products/(\d+)", self.path)
        if not match:
            self._send(404, {"detail": "not found"})
            return
        key = int(match.group(1))
        item = self._read_body()
        item["id"] = key
        self.store[key] = item
        shown = dict(item)
        if type(self).drop_price_on_put:
            shown.pop("price", None)
        self._send(200, shown)

    def do_DELETE(self):
        match = re.fullmatch(r"/products/(\d+)", self.path)
        if match and int(match.group(1)) in self.store:
            del self.store[int(match.group(1))]
            self._send(204)
        else:
            self._send(404, {"detail": "not found"})


def start_stub_server():
    handler = type("StubCrud", (_StubCrudBase,),
                   {"store": {}, "ids": itertools.count(1),
                    "drop_price_on_put": False})
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    host, port = server.server_address
    return SimpleNamespace(server=server, handler=handler,
                           base_url=f"http://{host}:{port}")


@pytest.fixture
def stub_server():
    stub = start_stub_server()
    yield stub
    stub.server.shutdown()
