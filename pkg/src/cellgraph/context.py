"""Task-relevant context selection for the assistant.

The default suggestion is exactly the active cell's direct in-neighbors in
the mental-model graph plus the variables those cells define; the user then
edits the selection, and :func:`resolve_material` gathers the actual texts,
schemas, errors, and outputs that prompt assembly will render.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

from .analysis import VariableIndex
from .errors import InvariantViolation, StaleSelectionError, UnknownNodeError, UnknownTargetError
from .graph import GraphState
from .notebook import Notebook
from .session import Session, VariableSchema


class TaskType(str, Enum):
    GEN_CODE = "gen_code"
    MODIFY_CODE = "modify_code"
    FIX = "fix"
    EXPLAIN = "explain"
    WRITE_TEXT = "write_text"
    EDIT_TEXT = "edit_text"


CODE_TASKS = {TaskType.GEN_CODE, TaskType.MODIFY_CODE, TaskType.FIX, TaskType.EXPLAIN}
TEXT_TASKS = {TaskType.WRITE_TEXT, TaskType.EDIT_TEXT}


@dataclass(frozen=True)
class ContextSelection:
    """The editable context set sent to prompt assembly."""

    active_cell: str
    task: TaskType
    context_cells: tuple[str, ...] = ()
    context_variables: tuple[str, ...] = ()
    include_error: bool = False
    include_output: bool = False
    condense: bool = False
    selected_span: Optional[tuple[int, int]] = None
    user_prompt: str = ""

    def to_dict(self) -> dict:
        return {
            "active_cell": self.active_cell,
            "task": self.task.value,
            "context_cells": list(self.context_cells),
            "context_variables": list(self.context_variables),
            "include_error": self.include_error,
            "include_output": self.include_output,
            "condense": self.condense,
            "selected_span": list(self.selected_span) if self.selected_span else None,
            "user_prompt": self.user_prompt,
        }


def validate_selection(
    sel: ContextSelection,
    nb: Notebook,
    session: Optional[Session] = None,
    index: Optional[VariableIndex] = None,
) -> ContextSelection:
    """Check every selection invariant; returns the normalized selection.

    An empty span collapses to None. Violations raise InvariantViolation;
    references to things that never existed raise UnknownTargetError.
    """
    cell = nb.cell_by_id(sel.active_cell)
    if cell is None:
        raise UnknownTargetError(f"no cell {sel.active_cell!r}", cell_id=sel.active_cell)
    if cell.kind == "code" and sel.task not in CODE_TASKS:
        raise InvariantViolation(f"task {sel.task.value} is not valid for code cells")
    if cell.kind != "code" and sel.task not in TEXT_TASKS:
        raise InvariantViolation(f"task {sel.task.value} is not valid for {cell.kind} cells")
    if sel.active_cell in sel.context_cells:
        raise InvariantViolation("the active cell cannot be part of its own context")
    for cid in sel.context_cells:
        if nb.cell_by_id(cid) is None:
            raise UnknownTargetError(f"context cell {cid!r} does not exist", cell_id=cid)
    if index is not None:
        for name in sel.context_variables:
            if name not in index.entries:
                raise UnknownTargetError(f"variable {name!r} is not defined in any cell", name=name)
    if sel.include_error:
        if sel.task is not TaskType.FIX:
            raise InvariantViolation("include_error is only valid for the fix task")
        last = session.result_for(sel.active_cell) if session is not None else None
        if last is None or last[1] != "error":
            raise InvariantViolation("include_error requires the active cell's last run to have errored")
    if sel.condense and sel.task is not TaskType.EXPLAIN:
        raise InvariantViolation("condense is only meaningful for the explain task")
    span = sel.selected_span
    if span is not None:
        start, end = span
        if not (0 <= start <= end <= len(cell.source)):
            raise InvariantViolation(
                f"selected span {span!r} is out of bounds for a {len(cell.source)}-char source"
            )
        if start == end:
            return replace(sel, selected_span=None)
    return sel


def default_task_for(nb: Notebook, cell_id: str) -> TaskType:
    cell = nb.cell_by_id(cell_id)
    return TaskType.GEN_CODE if cell is not None and cell.kind == "code" else TaskType.WRITE_TEXT


def suggest_context(
    g: GraphState, nb: Notebook, index: VariableIndex, active: str
) -> ContextSelection:
    """Default context: direct predecessors plus the variables they define.

    Both sets come back in notebook order, deduplicated; the variables a
    predecessor defines keep their source order. Names defined in the active
    cell itself are not suggested (its full text travels separately).
    """
    if active not in g.nodes:
        raise UnknownNodeError(f"no node for cell {active!r}", cell_id=active)
    preds = sorted(set(g.predecessors(active)), key=nb.order_of)
    variables: dict[str, None] = {}
    for cid in preds:
        for name in index.defined_in_cell(cid):
            variables.setdefault(name)
    return ContextSelection(
        active_cell=active,
        task=default_task_for(nb, active),
        context_cells=tuple(preds),
        context_variables=tuple(variables),
    )


def edit_selection(
    sel: ContextSelection,
    op: str,
    target: str,
    nb: Notebook,
    index: Optional[VariableIndex] = None,
) -> ContextSelection:
    """Add/remove one cell or variable; adds and removes are idempotent."""
    if op == "add_cell":
        if nb.cell_by_id(target) is None:
            raise UnknownTargetError(f"no cell {target!r}", cell_id=target)
        if target == sel.active_cell:
            raise InvariantViolation("the active cell cannot be added to its own context")
        if target in sel.context_cells:
            return sel
        return replace(sel, context_cells=sel.context_cells + (target,))
    if op == "remove_cell":
        return replace(sel, context_cells=tuple(c for c in sel.context_cells if c != target))
    if op == "add_variable":
        if index is not None and target not in index.entries:
            raise UnknownTargetError(f"variable {target!r} is not defined in any cell", name=target)
        if target in sel.context_variables:
            return sel
        return replace(sel, context_variables=sel.context_variables + (target,))
    if op == "remove_variable":
        return replace(
            sel, context_variables=tuple(v for v in sel.context_variables if v != target)
        )
    raise InvariantViolation(f"unknown edit op {op!r}")


# ---------------------------------------------------------------------------
# Material resolution


@dataclass(frozen=True)
class ContextMaterial:
    """Everything prompt assembly interpolates, already stringified."""

    full_text: str = ""
    selected_text: str = ""
    context_cell_texts: tuple[str, ...] = ()
    context_data: tuple[str, ...] = ()
    error_text: str = ""
    output_texts: tuple[str, ...] = ()
    images: tuple[tuple[str, str], ...] = ()  # (mime, base64)


def format_schema(name: str, schema: Optional[VariableSchema]) -> str:
    """One deterministic line per variable for the prompt's data section."""
    if schema is None:
        return f"{name} (not loaded)"
    parts = [f"{name}: {schema.kind}"]
    if schema.kind == "table":
        if schema.shape:
            parts[0] += " " + "x".join(str(d) for d in schema.shape)
        cols = ", ".join(f"{n} ({t})" for n, t in schema.columns or [])
        parts.append(f"columns: {cols}")
    elif schema.shape:
        parts[0] += f" ({schema.shape[0]} items)"
    if schema.preview:
        parts.append(f"preview: {schema.preview}")
    return "; ".join(parts)


def resolve_material(
    sel: ContextSelection,
    nb: Notebook,
    session: Optional[Session] = None,
    index: Optional[VariableIndex] = None,
) -> ContextMaterial:
    """Gather texts, schemas, error, and outputs for a validated selection."""
    active = nb.cell_by_id(sel.active_cell)
    if active is None:
        raise StaleSelectionError(
            f"active cell {sel.active_cell!r} no longer exists", cell_id=sel.active_cell
        )
    missing = [cid for cid in sel.context_cells if nb.cell_by_id(cid) is None]
    if missing:
        raise StaleSelectionError(
            f"context cells deleted since selection: {', '.join(missing)}", cell_ids=missing
        )

    full_text = active.source
    selected_text = ""
    if sel.selected_span is not None:
        start, end = sel.selected_span
        if not (0 <= start <= end <= len(full_text)):
            raise InvariantViolation(f"selected span {sel.selected_span!r} is out of bounds")
        selected_text = full_text[start:end]

    cell_texts = []
    for cid in sel.context_cells:
        cell = nb.cell_by_id(cid)
        cell_texts.append(f"--- cell {nb.order_of(cid)} ---\n{cell.source}")

    data_lines = []
    for name in sel.context_variables:
        schema = session.introspect_variable(name) if session is not None else None
        data_lines.append(format_schema(name, schema))

    error_text = ""
    if sel.include_error and session is not None:
        run = session.runs.get(sel.active_cell)
        if run is not None and run.error is not None:
            name, message, tb = run.error
            error_text = f"{name}: {message}"
            if tb:
                error_text += "\n" + "\n".join(tb)

    output_texts: list[str] = []
    images: list[tuple[str, str]] = []
    if sel.include_output:
        for out in active.outputs:
            if out.kind in ("stream_text", "display_table_text") and out.text:
                output_texts.append(out.text)
            elif out.kind == "display_image" and out.image_data:
                images.append((out.image_mime or "image/png", out.image_data))

    return ContextMaterial(
        full_text=full_text,
        selected_text=selected_text,
        context_cell_texts=tuple(cell_texts),
        context_data=tuple(data_lines),
        error_text=error_text,
        output_texts=tuple(output_texts),
        images=tuple(images),
    )
