"""apiforge: describe a REST service in plain language, get an OpenAPI
contract, generated CRUD server code, a containerized launch, endpoint
probes, and a bounded log-driven fix loop."""

from __future__ import annotations

__version__ = "0.1.0"

__all__ = ["__version__"]
