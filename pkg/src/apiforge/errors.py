"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations


class ForgeError(Exception):
    """Base class for all errors raised by this package."""


class GatewayError(ForgeError):
    """Chat-completion backend failure (network, timeout, cassette miss).

    Carries the request fingerprint when one could be computed.
    """

    def __init__(self, message: str, *, fingerprint: str | None = None):
        super().__init__(message)
        self.fingerprint = fingerprint


class ProtocolError(GatewayError):
    """The model emitted a turn that violates the function-calling contract.

    ``turn`` holds the offending assistant turn so the orchestrator can
    feed an error result back to the model instead of crashing.
    """

    def __init__(self, message: str, *, turn=None, fingerprint: str | None = None):
        super().__init__(message, fingerprint=fingerprint)
        self.turn = turn


class SpecError(ForgeError):
    """OpenAPI document could not be parsed; ``findings`` pinpoint why."""

    def __init__(self, message: str, findings=()):
        super().__init__(message)
        self.findings = list(findings)


class TreeError(ForgeError):
    """File-tree violation (bad path, type conflict, non-string content)."""

    def __init__(self, message: str, *, key: str | None = None):
        super().__init__(message)
        self.key = key


class CommandError(ForgeError):
    """A process spawn was rejected (allow-list, working dir) or failed in a
    way that is not an ordinary nonzero exit (timeout, missing binary)."""


class CleanFailure(ForgeError):
    """JSON stayed unparseable after deterministic repair and the bounded
    LLM fallback. ``last_candidate`` is the final repaired text."""

    def __init__(self, message: str, *, last_candidate: str = ""):
        super().__init__(message)
        self.last_candidate = last_candidate


class DerivationError(ForgeError):
    """A probe plan could not be derived (typically an unbindable path
    parameter). ``parameter`` names it."""

    def __init__(self, message: str, *, parameter: str | None = None):
        super().__init__(message)
        self.parameter = parameter


class PhaseError(ForgeError):
    """Operation attempted in a session phase that does not allow it."""


class SessionStoreError(ForgeError):
    """Persisted session state is corrupt; message names the failing record."""
