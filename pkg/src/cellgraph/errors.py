"""Exception hierarchy shared across the engine.

Every error carries a stable ``code`` string used by the service layer to
build structured error responses and by the CLI for ``--format json``.
"""

from __future__ import annotations


class CellGraphError(Exception):
    """Base class for all domain errors."""

    code = "error"

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message, "details": self.details}


# -- notebook store ----------------------------------------------------------

class ParseError(CellGraphError):
    code = "parse_error"


class SchemaError(CellGraphError):
    code = "schema_error"


class VersionError(CellGraphError):
    code = "version_error"


class DuplicateIdError(CellGraphError):
    code = "duplicate_id"


class MetadataVersionError(CellGraphError):
    code = "metadata_version"


class DanglingRefError(CellGraphError):
    code = "dangling_ref"


# -- graph -------------------------------------------------------------------

class UnknownNodeError(CellGraphError):
    code = "unknown_node"


class UnknownLinkError(CellGraphError):
    code = "unknown_link"


class UnknownCellError(CellGraphError):
    code = "unknown_cell"


class SelfLoopError(CellGraphError):
    code = "self_loop"


class CycleError(CellGraphError):
    code = "cycle"

    def __init__(self, message: str, cycle: list | None = None, **details):
        super().__init__(message, cycle=cycle or [], **details)
        self.cycle = cycle or []


class DuplicateLinkError(CellGraphError):
    code = "duplicate_link"


class NotCodeCellError(CellGraphError):
    code = "not_code_cell"


# -- execution session -------------------------------------------------------

class KernelUnavailableError(CellGraphError):
    code = "kernel_unavailable"


class FixtureError(CellGraphError):
    code = "fixture_error"


# -- context selection -------------------------------------------------------

class InvariantViolation(CellGraphError):
    code = "invariant_violation"


class UnknownTargetError(CellGraphError):
    code = "unknown_target"


class StaleSelectionError(CellGraphError):
    code = "stale_selection"


# -- LLM gateway -------------------------------------------------------------

class LlmError(CellGraphError):
    code = "llm_error"


class AuthError(LlmError):
    code = "llm_auth"


class RateLimitError(LlmError):
    code = "llm_rate_limit"


class TransportError(LlmError):
    code = "llm_transport"


class BackendError(LlmError):
    code = "llm_backend"
