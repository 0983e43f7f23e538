"""Cell execution against a pluggable kernel adapter.

The session owns everything the views derive from runs: the per-cell latest
result, the set of names currently bound at the kernel's top level (folded
from each successful run's defines/deletes), and a monotone run counter.
"In memory" is defined by this run log, not by live namespace inspection,
so the mock adapter makes the whole surface deterministic.

Statuses persisted in the notebook (hash + ok/error per cell) can seed a new
session via ``restored``; they answer status queries and the skip rule but
never enter the memory fold — a fresh kernel holds nothing.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Optional, Protocol

from .analysis import analyze_cell
from .errors import FixtureError, KernelUnavailableError, NotCodeCellError, UnknownCellError
from .notebook import ExecMeta, Notebook, Output, source_hash

PREVIEW_LIMIT = 512


@dataclass
class VariableSchema:
    """Lightweight structure description shown on variable hover."""

    name: str
    kind: str  # table | sequence | mapping | scalar | other
    shape: Optional[tuple[int, ...]] = None
    columns: Optional[list[tuple[str, str]]] = None  # (name, dtype), tables only
    preview: Optional[str] = None

    def __post_init__(self):
        if (self.kind == "table") != (self.columns is not None):
            raise FixtureError(
                f"schema for {self.name!r}: columns are required for tables and only tables"
            )
        if self.preview is not None:
            self.preview = self.preview[:PREVIEW_LIMIT]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "shape": list(self.shape) if self.shape else None,
            "columns": [[n, t] for n, t in self.columns] if self.columns is not None else None,
            "preview": self.preview,
        }

    @classmethod
    def from_dict(cls, name: str, d: dict) -> "VariableSchema":
        if not isinstance(d, dict) or "kind" not in d:
            raise FixtureError(f"schema for {name!r} must be an object with a 'kind'")
        columns = d.get("columns")
        return cls(
            name=name,
            kind=d["kind"],
            shape=tuple(d["shape"]) if d.get("shape") else None,
            columns=[(c[0], c[1]) for c in columns] if columns is not None else None,
            preview=d.get("preview"),
        )


@dataclass
class ExecOutcome:
    """What an adapter reports for one execute() call."""

    status: str  # ok | error
    outputs: list[Output] = field(default_factory=list)
    error: Optional[tuple[str, str, list[str]]] = None  # (name, message, traceback)
    duration_ms: float = 0.0


@dataclass
class CellRunResult:
    cell_id: str
    source_hash: str
    status: str
    outputs: list[Output] = field(default_factory=list)
    error: Optional[tuple[str, str, list[str]]] = None
    duration_ms: float = 0.0

    def to_dict(self) -> dict:
        return {
            "cell_id": self.cell_id,
            "source_hash": self.source_hash,
            "status": self.status,
            "outputs": [o.to_dict() for o in self.outputs],
            "error": (
                {"name": self.error[0], "message": self.error[1], "traceback": self.error[2]}
                if self.error
                else None
            ),
            "duration_ms": self.duration_ms,
        }


class KernelAdapter(Protocol):
    """Behavioral contract every execution backend satisfies."""

    def execute(self, source: str) -> ExecOutcome: ...

    def introspect(self, name: str) -> Optional[VariableSchema]: ...

    def interrupt(self) -> None: ...

    def reset(self) -> None: ...


# ---------------------------------------------------------------------------
# Mock kernel


def _validate_fixture(data: dict) -> None:
    if not isinstance(data, dict) or not isinstance(data.get("cells"), list):
        raise FixtureError("fixture must be an object with a 'cells' list")
    for i, entry in enumerate(data["cells"]):
        if not isinstance(entry, dict):
            raise FixtureError(f"fixture entry {i} is not an object")
        match = entry.get("match")
        if not isinstance(match, dict) or len(match) != 1 or not (
            "source_hash" in match or "ordinal" in match
        ):
            raise FixtureError(
                f"fixture entry {i}: 'match' needs exactly one of source_hash | ordinal"
            )
        if entry.get("status") not in ("ok", "error"):
            raise FixtureError(f"fixture entry {i}: status must be 'ok' or 'error'")
        for out in entry.get("outputs", []):
            if not isinstance(out, dict) or out.get("kind") not in (
                "stream_text",
                "display_image",
                "display_table_text",
                "error",
            ):
                raise FixtureError(f"fixture entry {i}: bad output {out!r}")
        err = entry.get("error")
        if err is not None and not isinstance(err, dict):
            raise FixtureError(f"fixture entry {i}: 'error' must be an object")
        for name, schema in (entry.get("schemas") or {}).items():
            VariableSchema.from_dict(name, schema)  # raises FixtureError


class MockKernel:
    """Deterministic scripted kernel.

    Fixture entries are matched first by the executed source's hash, then by
    the ordinal (1-based) number of the execute() call. Unmatched sources
    succeed silently. Schemas declared on an entry become introspectable
    once that entry has executed.
    """

    def __init__(self, fixture: Optional[dict] = None):
        fixture = fixture or {"cells": []}
        _validate_fixture(fixture)
        self._entries = fixture["cells"]
        self._by_hash = {
            e["match"]["source_hash"]: e for e in self._entries if "source_hash" in e["match"]
        }
        self._by_ordinal = {
            e["match"]["ordinal"]: e for e in self._entries if "ordinal" in e["match"]
        }
        self._calls = 0
        self._schemas: dict[str, VariableSchema] = {}

    @classmethod
    def from_file(cls, path) -> "MockKernel":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except ValueError as exc:
                raise FixtureError(f"fixture is not valid JSON: {exc}") from None
        return cls(data)

    def execute(self, source: str) -> ExecOutcome:
        self._calls += 1
        entry = self._by_hash.get(source_hash(source)) or self._by_ordinal.get(self._calls)
        if entry is None:
            return ExecOutcome(status="ok")
        for name, schema in (entry.get("schemas") or {}).items():
            self._schemas[name] = VariableSchema.from_dict(name, schema)
        outputs = [Output.from_dict(o) for o in entry.get("outputs", [])]
        error = None
        if entry["status"] == "error":
            err = entry.get("error") or {}
            error = (
                err.get("name", "Error"),
                err.get("message", ""),
                list(err.get("traceback", [])),
            )
        return ExecOutcome(status=entry["status"], outputs=outputs, error=error)

    def introspect(self, name: str) -> Optional[VariableSchema]:
        return self._schemas.get(name)

    def interrupt(self) -> None:  # nothing in flight, ever
        pass

    def reset(self) -> None:
        self._calls = 0
        self._schemas.clear()


def mock_kernel_from_fixture(fixture) -> MockKernel:
    """Build a MockKernel from a parsed fixture dict or a file path."""
    if isinstance(fixture, dict):
        return MockKernel(fixture)
    return MockKernel.from_file(fixture)


# ---------------------------------------------------------------------------
# Session


class Session:
    """Latest run per cell, memory fold, and schema introspection."""

    def __init__(
        self,
        adapter: Optional[KernelAdapter] = None,
        restored: Optional[dict[str, ExecMeta]] = None,
    ):
        self.adapter = adapter
        self.runs: dict[str, CellRunResult] = {}
        self.run_log: list[CellRunResult] = []
        self.memory: set[str] = set()
        self.run_counter = 0
        self.restored: dict[str, ExecMeta] = dict(restored or {})

    # -- status -------------------------------------------------------------

    def result_for(self, cell_id: str) -> Optional[tuple[str, str]]:
        """(source_hash at execution, status) — live runs first, then the
        statuses restored from notebook metadata."""
        run = self.runs.get(cell_id)
        if run is not None:
            return (run.source_hash, run.status)
        meta = self.restored.get(cell_id)
        if meta is not None:
            return (meta.source_hash, meta.status)
        return None

    def last_exec_table(self) -> dict[str, ExecMeta]:
        """What gets persisted back into the notebook metadata."""
        table = dict(self.restored)
        for cid, run in self.runs.items():
            table[cid] = ExecMeta(source_hash=run.source_hash, status=run.status)
        return table

    # -- execution ------------------------------------------------------------

    def run_cells(self, nb: Notebook, order: list[str], force: bool = False) -> list[CellRunResult]:
        """Run the given cells in order through the adapter.

        Cells already ok with unchanged source are skipped unless ``force``.
        The first error stops the run. The notebook's outputs and execution
        counts are updated in place; memory folds each successful cell's
        defines minus deletes.
        """
        cells = {}
        for cid in order:
            cell = nb.cell_by_id(cid)
            if cell is None:
                raise UnknownCellError(f"no cell {cid!r}", cell_id=cid)
            if cell.kind != "code":
                raise NotCodeCellError(f"cell {cid!r} is {cell.kind}, not code", cell_id=cid)
            cells[cid] = cell

        results: list[CellRunResult] = []
        for cid in order:
            cell = cells[cid]
            current_hash = cell.source_hash
            if not force and self.result_for(cid) == (current_hash, "ok"):
                continue
            if self.adapter is None:
                raise KernelUnavailableError("no kernel adapter configured")
            started = time.monotonic()
            outcome = self.adapter.execute(cell.source)
            duration = outcome.duration_ms or (time.monotonic() - started) * 1000.0
            self.run_counter += 1
            result = CellRunResult(
                cell_id=cid,
                source_hash=current_hash,
                status=outcome.status,
                outputs=list(outcome.outputs),
                error=outcome.error,
                duration_ms=duration,
            )
            self.runs[cid] = result
            self.run_log.append(result)
            cell.set_outputs(result.outputs)
            cell.set_exec_count(self.run_counter)
            results.append(result)
            if outcome.status == "ok":
                record = analyze_cell(cid, cell.source)
                self.memory.update(record.defines)
                self.memory.difference_update(record.deletes)
            else:
                break
        return results

    # -- introspection ----------------------------------------------------------

    def introspect_variable(self, name: str) -> Optional[VariableSchema]:
        """Schema for a name, or None when it is not in memory."""
        if name not in self.memory:
            return None
        if self.adapter is None:
            raise KernelUnavailableError("no kernel adapter configured")
        return self.adapter.introspect(name)
