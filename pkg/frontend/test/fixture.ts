/** A real session's event log, captured from the backend test rig: draft,
 * finalize, generate, launch, probe, one unresolved fix round (through the
 * Fixing phase and back), close, and one refused message after closing.
 * It walks every phase and every event kind. */

import type { SessionEvent } from "../src/events.js";

export const FIXTURE: SessionEvent[] = [
  {
    "at": "2024-01-01T00:00:00+00:00",
    "kind": "user_msg",
    "payload": {
      "text": "Draft a product catalog service."
    },
    "seq": 1
  },
  {
    "at": "2024-01-01T00:00:01+00:00",
    "kind": "agent_msg",
    "payload": {
      "role": "spec_generator",
      "text": "Here is a draft contract for the product catalog."
    },
    "seq": 2
  },
  {
    "at": "2024-01-01T00:00:02+00:00",
    "kind": "user_msg",
    "payload": {
      "text": "The specification is final. Save it now."
    },
    "seq": 3
  },
  {
    "at": "2024-01-01T00:00:03+00:00",
    "kind": "tool_call",
    "payload": {
      "actor": "spec_generator",
      "arguments": {
        "spec_text": "openapi: 3.0.3\ninfo:\n  title: Product Catalog\n  version: \"1.0\"\npaths:\n  /products:\n    post:\n      operationId: createProduct\n      requestBody:\n        required: true\n        content:\n          application/json:\n            schema:\n              $ref: '#/components/schemas/ProductInput'\n      responses:\n        \"201\":\n          description: Created\n          content:\n            application/json:\n              schema:\n                $ref: '#/components/schemas/Product'\n    get:\n      operationId: listProducts\n      responses:\n        \"200\":\n          description: All products\n          content:\n            application/json:\n              schema:\n                type: array\n                items:\n                  $ref: '#/components/schemas/Product'\n  /products/{id}:\n    put:\n      operationId: replaceProduct\n      parameters:\n        - name: id\n          in: path\n          required: true\n          schema:\n            type: integer\n      requestBody:\n        required: true\n        content:\n          application/json:\n            schema:\n              $ref: '#/components/schemas/ProductInput'\n      responses:\n        \"200\":\n          description: Updated product\n          content:\n            application/json:\n              schema:\n                $ref: '#/components/schemas/Product'\n    delete:\n      operationId: deleteProduct\n      parameters:\n        - name: id\n          in: path\n          required: true\n          schema:\n            type: integer\n      responses:\n        \"204\":\n          description: Deleted\ncomponents:\n  schemas:\n    ProductInput:\n      type: object\n      required: [name, description, price, quantity]\n      properties:\n        name:\n          type: string\n        description:\n          type: string\n        price:\n          type: number\n        quantity:\n          type: integer\n    Product:\n      type: object\n      required: [id, name, description, price, quantity]\n      properties:\n        id:\n          type: integer\n        name:\n          type: string\n        description:\n          type: string\n        price:\n          type: number\n        quantity:\n          type: integer\n"
      },
      "name": "save_openapi_spec"
    },
    "seq": 4
  },
  {
    "at": "2024-01-01T00:00:05+00:00",
    "kind": "artifact_saved",
    "payload": {
      "artifact": "spec",
      "digest": "201fb46dd30455dd67b48e3bf4873a30b4bdf0f8ea028a8954b5c3f544e4990e",
      "path": "openapi_spec.v1.yml",
      "version": 1
    },
    "seq": 5
  },
  {
    "at": "2024-01-01T00:00:06+00:00",
    "kind": "phase_change",
    "payload": {
      "from": "Drafting",
      "to": "Finalized"
    },
    "seq": 6
  },
  {
    "at": "2024-01-01T00:00:07+00:00",
    "kind": "tool_result",
    "payload": {
      "name": "save_openapi_spec",
      "result": {
        "digest": "201fb46dd30455dd67b48e3bf4873a30b4bdf0f8ea028a8954b5c3f544e4990e",
        "ok": true,
        "path": "openapi_spec.v1.yml",
        "version": 1
      }
    },
    "seq": 7
  },
  {
    "at": "2024-01-01T00:00:08+00:00",
    "kind": "agent_msg",
    "payload": {
      "role": "spec_generator",
      "text": "Saved the contract."
    },
    "seq": 8
  },
  {
    "at": "2024-01-01T00:00:09+00:00",
    "kind": "artifact_saved",
    "payload": {
      "artifact": "tree",
      "digest": "a817052f06a2efdbf5283b7636b763d0244c4d5104c1c06c9646713c76477fd7",
      "files_written": 4,
      "path": "tree.v1.json",
      "skipped_identical": 0,
      "version": 1
    },
    "seq": 9
  },
  {
    "at": "2024-01-01T00:00:10+00:00",
    "kind": "phase_change",
    "payload": {
      "from": "Finalized",
      "to": "Generated"
    },
    "seq": 10
  },
  {
    "at": "2024-01-01T00:00:11+00:00",
    "kind": "tool_call",
    "payload": {
      "actor": "user",
      "arguments": {},
      "name": "run_docker_compose"
    },
    "seq": 11
  },
  {
    "at": "2024-01-01T00:00:12+00:00",
    "kind": "phase_change",
    "payload": {
      "from": "Generated",
      "to": "Running"
    },
    "seq": 12
  },
  {
    "at": "2024-01-01T00:00:13+00:00",
    "kind": "tool_result",
    "payload": {
      "name": "run_docker_compose",
      "result": {
        "exit_code": 0,
        "ok": true,
        "output_tail": ""
      }
    },
    "seq": 13
  },
  {
    "at": "2024-01-01T00:00:14+00:00",
    "kind": "artifact_saved",
    "payload": {
      "all_ok": true,
      "artifact": "probe_report",
      "path": "probe_report.json"
    },
    "seq": 14
  },
  {
    "at": "2024-01-01T00:00:15+00:00",
    "kind": "tool_call",
    "payload": {
      "actor": "fix_loop",
      "arguments": {
        "issue": "the container keeps crashing"
      },
      "name": "update_json"
    },
    "seq": 15
  },
  {
    "at": "2024-01-01T00:00:16+00:00",
    "kind": "artifact_saved",
    "payload": {
      "artifact": "tree",
      "digest": "29579093dc2dd69f616f94c4d46b62edc6ce490e7dd72d514212e66273516357",
      "files_written": 1,
      "path": "tree.v2.json",
      "skipped_identical": 3,
      "version": 2
    },
    "seq": 16
  },
  {
    "at": "2024-01-01T00:00:17+00:00",
    "kind": "phase_change",
    "payload": {
      "from": "Running",
      "to": "Fixing"
    },
    "seq": 17
  },
  {
    "at": "2024-01-01T00:00:18+00:00",
    "kind": "tool_result",
    "payload": {
      "name": "update_json",
      "result": {
        "changed_paths": [
          "server/index.js"
        ],
        "files_written": 1,
        "ok": true,
        "skipped_identical": 3,
        "version": 2
      }
    },
    "seq": 18
  },
  {
    "at": "2024-01-01T00:00:19+00:00",
    "kind": "tool_call",
    "payload": {
      "actor": "fix_loop",
      "arguments": {},
      "name": "run_docker_compose"
    },
    "seq": 19
  },
  {
    "at": "2024-01-01T00:00:20+00:00",
    "kind": "phase_change",
    "payload": {
      "from": "Fixing",
      "to": "Running"
    },
    "seq": 20
  },
  {
    "at": "2024-01-01T00:00:21+00:00",
    "kind": "tool_result",
    "payload": {
      "name": "run_docker_compose",
      "result": {
        "exit_code": 0,
        "ok": true,
        "output_tail": ""
      }
    },
    "seq": 21
  },
  {
    "at": "2024-01-01T00:00:22+00:00",
    "kind": "tool_call",
    "payload": {
      "actor": "fix_loop",
      "arguments": {},
      "name": "check_docker_compose_status"
    },
    "seq": 22
  },
  {
    "at": "2024-01-01T00:00:23+00:00",
    "kind": "tool_result",
    "payload": {
      "name": "check_docker_compose_status",
      "result": {
        "ok": true,
        "services": [
          {
            "exit_code": 1,
            "ports": [],
            "service_name": "api",
            "state": "exited"
          }
        ]
      }
    },
    "seq": 23
  },
  {
    "at": "2024-01-01T00:00:24+00:00",
    "kind": "tool_call",
    "payload": {
      "actor": "fix_loop",
      "arguments": {
        "tail": 200
      },
      "name": "get_docker_compose_logs"
    },
    "seq": 24
  },
  {
    "at": "2024-01-01T00:00:25+00:00",
    "kind": "tool_result",
    "payload": {
      "name": "get_docker_compose_logs",
      "result": {
        "error_summaries": [
          {
            "category": "dependency_missing",
            "evidence": [
              "Error: Cannot find module 'express'",
              "    at Function.Module._load (node:internal/modules/cjs/loader:933:19)"
            ],
            "hint": "a required module or package is missing; add it to the dependency manifest or fix the import path",
            "service": "api"
          }
        ],
        "logs": {
          "per_service": {
            "api": [
              {
                "stream": "stdout",
                "text": "Error: Cannot find module 'express'",
                "timestamp": "2024-01-01T00:00:01.000000000Z"
              },
              {
                "stream": "stdout",
                "text": "    at Function.Module._load (node:internal/modules/cjs/loader:933:19)",
                "timestamp": "2024-01-01T00:00:01.100000000Z"
              }
            ]
          },
          "tail_limit": 200
        },
        "ok": true
      }
    },
    "seq": 25
  },
  {
    "at": "2024-01-01T00:00:26+00:00",
    "kind": "phase_change",
    "payload": {
      "from": "Running",
      "to": "Closed"
    },
    "seq": 26
  },
  {
    "at": "2024-01-01T00:00:27+00:00",
    "kind": "error",
    "payload": {
      "message": "session is closed",
      "type": "phase"
    },
    "seq": 27
  }
];
