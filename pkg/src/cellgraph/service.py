"""HTTP + server-sent-events surface over one notebook.

One process serves one notebook file. Mutations take the engine's writer
lock, are idempotent under retry when the client sends an ``X-Request-Id``
header, emit an event on the stream, and (by default) write straight back
to the ipynb file; ``?autosave=false`` opts out per request.

Event kinds: graph_changed, cell_status, variables_changed, active_changed,
run_progress. Payloads carry full sub-state (graph_changed carries the whole
graph view), so replaying the event log over a snapshot reconstructs the
current GET /graph response exactly.
"""

from __future__ import annotations

import json
import queue
import threading
from collections import OrderedDict
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response, StreamingResponse
from pydantic import BaseModel

from . import analysis, context, gateway, graph, prompts
from .errors import (
    AuthError,
    BackendError,
    CellGraphError,
    CycleError,
    DuplicateLinkError,
    KernelUnavailableError,
    RateLimitError,
    StaleSelectionError,
    TransportError,
    UnknownCellError,
    UnknownLinkError,
    UnknownNodeError,
    UnknownTargetError,
)
from .notebook import Notebook, ensure_cell_ids, load_notebook, read_graph_metadata, save_notebook, write_graph_metadata
from .session import Session

EVENT_BUFFER = 1000

_NOT_FOUND = (UnknownNodeError, UnknownLinkError, UnknownCellError, UnknownTargetError)
_CONFLICT = (CycleError, DuplicateLinkError, StaleSelectionError)
_BAD_GATEWAY = (AuthError, RateLimitError, TransportError, BackendError)


def _status_for(exc: CellGraphError) -> int:
    if isinstance(exc, _NOT_FOUND):
        return 404
    if isinstance(exc, _CONFLICT):
        return 409
    if isinstance(exc, _BAD_GATEWAY):
        return 502
    if isinstance(exc, KernelUnavailableError):
        return 503
    return 400


class EventBus:
    """Sequenced fan-out with a full in-process log.

    Sequence numbers are gapless; slow subscribers (bounded queue overrun)
    are dropped rather than blocking the writer.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._seq = 0
        self._log: list[dict] = []
        self._subscribers: list[queue.Queue] = []

    def emit(self, kind: str, payload: dict) -> dict:
        with self._lock:
            self._seq += 1
            event = {"seq": self._seq, "kind": kind, "payload": payload}
            self._log.append(event)
            dead = []
            for q in self._subscribers:
                try:
                    q.put_nowait(event)
                except queue.Full:
                    dead.append(q)
            for q in dead:  # drop slow subscribers; poison pill closes their stream
                self._subscribers.remove(q)
                try:
                    q.get_nowait()
                    q.put_nowait(None)
                except (queue.Empty, queue.Full):
                    pass
            return event

    def subscribe(self, since: int = 0) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=EVENT_BUFFER)
        with self._lock:
            for event in self._log:
                if event["seq"] > since:
                    q.put_nowait(event)
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def events_since(self, since: int = 0) -> list[dict]:
        with self._lock:
            return [e for e in self._log if e["seq"] > since]


class Engine:
    """All live state for one served notebook."""

    def __init__(
        self,
        path: str,
        kernel=None,
        llm=None,
        autosave: bool = True,
        model: str = gateway.DEFAULT_MODEL,
    ):
        self.path = Path(path)
        nb = load_notebook(self.path.read_bytes())
        self.nb: Notebook = ensure_cell_ids(nb)
        self.graph = graph.from_notebook(self.nb, prune=True)
        meta = read_graph_metadata(self.nb, strict=False)
        self.session = Session(kernel, restored=meta.last_exec if meta else {})
        self.index = analysis.build_variable_index(self.nb)
        self.llm = llm
        self.model = model
        self.autosave = autosave
        self.bus = EventBus()
        self.lock = threading.RLock()
        self.request_cache: OrderedDict[str, tuple[int, bytes]] = OrderedDict()

    # -- helpers -------------------------------------------------------------

    def resolve_cell(self, ref) -> str:
        """Accept a stable id or a 1-based order number."""
        if isinstance(ref, int) or (isinstance(ref, str) and ref.isdigit()):
            order = int(ref)
            cells = self.nb.cells
            if 1 <= order <= len(cells) and not any(c.id == str(ref) for c in cells):
                return cells[order - 1].id
        cell = self.nb.cell_by_id(str(ref))
        if cell is None:
            raise UnknownCellError(f"no cell {ref!r}", cell_id=str(ref))
        return cell.id

    def recompute_index(self) -> None:
        self.index = analysis.build_variable_index(self.nb)

    def save(self) -> None:
        nb = write_graph_metadata(
            self.nb, graph.to_metadata(self.graph, self.session.last_exec_table())
        )
        self.path.write_bytes(save_notebook(nb))
        self.nb = nb

    def maybe_save(self, autosave_flag: bool) -> None:
        if self.autosave and autosave_flag:
            self.save()

    # -- views ----------------------------------------------------------------

    def graph_json(self) -> dict:
        return graph.graph_view(self.graph, self.nb, self.session, self.index)

    def variables_json(self, with_schemas: bool = True) -> dict:
        variables = []
        for record in self.index.entries.values():
            state = analysis.variable_status(record, self.session)
            schema = None
            if with_schemas and self.session.adapter is not None:
                found = self.session.introspect_variable(record.name)
                schema = found.to_dict() if found else None
            variables.append(
                {
                    "name": record.name,
                    "defined_in": list(record.defined_in),
                    "used_in": list(record.used_in),
                    "deleted_in": list(record.deleted_in),
                    "state": state.value,
                    "schema": schema,
                }
            )
        return {
            "variables": variables,
            "diagnostics": [
                {"cell_id": cid, "line": line, "message": message}
                for cid, line, message in self.index.diagnostics
            ],
        }

    def cell_json(self, cell_id: str) -> dict:
        cell = self.nb.cell_by_id(cell_id)
        record = self.index.records.get(cell_id)
        status = None
        if cell.kind == "code":
            status = graph.node_status(cell, self.session).value
        return {
            "cell_id": cell_id,
            "order": self.nb.order_of(cell_id),
            "kind": cell.kind,
            "source": cell.source,
            "exec_count": cell.exec_count,
            "status": status,
            "outputs": [o.to_dict() for o in cell.outputs],
            "defines": list(record.defines) if record else [],
            "uses": list(record.uses) if record else [],
            "used_variables": list(self.index.used_in_cell(cell_id)),
        }

    # -- selections -------------------------------------------------------------

    def selection_from_payload(self, payload: "SelectionIn") -> context.ContextSelection:
        active = self.resolve_cell(payload.active_cell)
        task = context.TaskType(payload.task) if payload.task else context.default_task_for(self.nb, active)
        sel = context.ContextSelection(
            active_cell=active,
            task=task,
            context_cells=tuple(self.resolve_cell(c) for c in payload.context_cells),
            context_variables=tuple(payload.context_variables),
            include_error=payload.include_error,
            include_output=payload.include_output,
            condense=payload.condense,
            selected_span=tuple(payload.selected_span) if payload.selected_span else None,
            user_prompt=payload.user_prompt,
        )
        return context.validate_selection(sel, self.nb, self.session, self.index)

    def bundle_for(self, sel: context.ContextSelection, timestamp: Optional[str]) -> prompts.PromptBundle:
        material = context.resolve_material(sel, self.nb, self.session, self.index)
        now = prompts.parse_timestamp(timestamp) if timestamp else datetime.now(timezone.utc)
        return prompts.assemble(material, sel, now)


# ---------------------------------------------------------------------------
# Request bodies


class LinkIn(BaseModel):
    src: str | int
    dst: str | int


class NodeIn(BaseModel):
    src: str | int
    x: float = 0.0
    y: float = 0.0
    kind: str = "code"


class NodePatch(BaseModel):
    x: Optional[float] = None
    y: Optional[float] = None
    collapsed: Optional[bool] = None


class ActiveIn(BaseModel):
    cell_id: str | int


class RunPathIn(BaseModel):
    cell_id: str | int
    force: bool = False
    direction: str = "up"


class SuggestIn(BaseModel):
    active: str | int


class SelectionIn(BaseModel):
    active_cell: str | int
    task: Optional[str] = None
    context_cells: list[str | int] = []
    context_variables: list[str] = []
    include_error: bool = False
    include_output: bool = False
    condense: bool = False
    selected_span: Optional[tuple[int, int]] = None
    user_prompt: str = ""
    timestamp: Optional[str] = None
    model: Optional[str] = None


class ApplyIn(BaseModel):
    text: str
    mode: str = "replace"
    span: Optional[tuple[int, int]] = None
    original_source: Optional[str] = None


# ---------------------------------------------------------------------------
# App factory


def create_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="cellgraph", version="0.1.0")
    app.state.engine = engine

    @app.exception_handler(CellGraphError)
    async def domain_error(_request: Request, exc: CellGraphError):
        return JSONResponse(status_code=_status_for(exc), content=exc.to_dict())

    @app.exception_handler(RequestValidationError)
    async def validation_error(_request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={"code": "validation", "message": "invalid request", "details": exc.errors()},
        )

    @app.middleware("http")
    async def idempotency(request: Request, call_next):
        request_id = request.headers.get("X-Request-Id")
        if not request_id or request.method not in ("POST", "PATCH", "DELETE"):
            return await call_next(request)
        key = f"{request.method} {request.url.path} {request_id}"
        cached = engine.request_cache.get(key)
        if cached is not None:
            status, body = cached
            return Response(content=body, status_code=status, media_type="application/json")
        response = await call_next(request)
        body = b"".join([chunk async for chunk in response.body_iterator])
        if response.status_code < 500:
            engine.request_cache[key] = (response.status_code, body)
            while len(engine.request_cache) > 256:
                engine.request_cache.popitem(last=False)
        return Response(
            content=body,
            status_code=response.status_code,
            headers=dict(response.headers),
            media_type=response.media_type,
        )

    def autosave_flag(request: Request) -> bool:
        return request.query_params.get("autosave", "true").lower() != "false"

    # -- reads -----------------------------------------------------------------

    @app.get("/graph")
    def get_graph():
        return engine.graph_json()

    @app.get("/cells/{ref}")
    def get_cell(ref: str):
        return engine.cell_json(engine.resolve_cell(ref))

    @app.get("/variables")
    def get_variables():
        return engine.variables_json()

    @app.get("/variables/{name}")
    def get_variable(name: str):
        record = engine.index.entries.get(name)
        if record is None:
            raise UnknownTargetError(f"variable {name!r} is not defined in any cell", name=name)
        state = analysis.variable_status(record, engine.session)
        schema = engine.session.introspect_variable(name) if engine.session.adapter else None
        return {
            "name": name,
            "defined_in": list(record.defined_in),
            "used_in": list(record.used_in),
            "deleted_in": list(record.deleted_in),
            "state": state.value,
            "schema": schema.to_dict() if schema else None,
        }

    # -- graph mutations ---------------------------------------------------------

    @app.post("/links", status_code=201)
    def post_link(body: LinkIn, request: Request):
        with engine.lock:
            src = engine.resolve_cell(body.src)
            dst = engine.resolve_cell(body.dst)
            engine.graph = graph.add_link(engine.graph, src, dst)
            link = engine.graph.links[-1]
            engine.bus.emit("graph_changed", {"graph": engine.graph_json()})
            engine.maybe_save(autosave_flag(request))
            return {"link": {"id": link.id, "src": link.src, "dst": link.dst}}

    @app.delete("/links/{link_id}")
    def delete_link(link_id: str, request: Request):
        with engine.lock:
            engine.graph = graph.remove_link(engine.graph, link_id)
            engine.bus.emit("graph_changed", {"graph": engine.graph_json()})
            engine.maybe_save(autosave_flag(request))
            return {"removed": link_id}

    @app.post("/nodes", status_code=201)
    def post_node(body: NodeIn, request: Request):
        with engine.lock:
            src = engine.resolve_cell(body.src)
            engine.graph, engine.nb, new_id = graph.create_linked_node(
                engine.graph, engine.nb, src, (body.x, body.y), body.kind
            )
            engine.recompute_index()
            engine.bus.emit("active_changed", {"active_cell": new_id})
            engine.bus.emit("graph_changed", {"graph": engine.graph_json()})
            engine.maybe_save(autosave_flag(request))
            return {"cell_id": new_id}

    @app.patch("/nodes/{ref}")
    def patch_node(ref: str, body: NodePatch, request: Request):
        with engine.lock:
            cell_id = engine.resolve_cell(ref)
            engine.graph = graph.update_node(
                engine.graph, cell_id, x=body.x, y=body.y, collapsed=body.collapsed
            )
            engine.bus.emit("graph_changed", {"graph": engine.graph_json()})
            engine.maybe_save(autosave_flag(request))
            node = engine.graph.nodes[cell_id]
            return {"cell_id": cell_id, "x": node.x, "y": node.y, "collapsed": node.collapsed}

    @app.post("/active")
    def post_active(body: ActiveIn, request: Request):
        with engine.lock:
            cell_id = engine.resolve_cell(body.cell_id)
            engine.graph = graph.set_active(engine.graph, cell_id)
            engine.bus.emit("active_changed", {"active_cell": cell_id})
            engine.maybe_save(autosave_flag(request))
            return {"active_cell": cell_id}

    # -- execution -----------------------------------------------------------------

    @app.post("/run-path")
    def run_path(body: RunPathIn, request: Request):
        with engine.lock:
            target = engine.resolve_cell(body.cell_id)
            path = graph.execution_path(engine.graph, engine.nb, target, body.direction)
            code_path = [cid for cid in path if engine.nb.cell_by_id(cid).kind == "code"]
            total = len(code_path)
            results = []
            executed = set()
            for i, cid in enumerate(code_path, start=1):
                engine.bus.emit("run_progress", {"cell_id": cid, "index": i, "total": total})
                step = engine.session.run_cells(engine.nb, [cid], force=body.force)
                for result in step:
                    executed.add(result.cell_id)
                    results.append(result)
                    engine.bus.emit(
                        "cell_status", {"cell_id": result.cell_id, "status": result.status}
                    )
                if step and step[-1].status == "error":
                    break
            engine.bus.emit("variables_changed", {"variables": _variable_states(engine)})
            engine.bus.emit("graph_changed", {"graph": engine.graph_json()})
            engine.maybe_save(autosave_flag(request))
            return {
                "path": path,
                "results": [r.to_dict() for r in results],
                "skipped": [cid for cid in code_path if cid not in executed],
            }

    # -- assistant ---------------------------------------------------------------

    @app.post("/assist/suggest")
    def assist_suggest(body: SuggestIn):
        active = engine.resolve_cell(body.active)
        sel = context.suggest_context(engine.graph, engine.nb, engine.index, active)
        return {
            "active_cell": active,
            "task": sel.task.value,
            "cells": list(sel.context_cells),
            "variables": list(sel.context_variables),
        }

    @app.post("/assist/preview")
    def assist_preview(body: SelectionIn):
        sel = engine.selection_from_payload(body)
        return engine.bundle_for(sel, body.timestamp).to_dict()

    @app.post("/assist/ask")
    def assist_ask(body: SelectionIn):
        sel = engine.selection_from_payload(body)
        bundle = engine.bundle_for(sel, body.timestamp)
        if engine.llm is None:
            raise BackendError("no LLM adapter configured")
        request_obj = gateway.LlmRequest(
            model=body.model or engine.model,
            system_text=bundle.system_text,
            user_text=bundle.user_text,
            attachments=bundle.attachments,
        )
        response = gateway.send(request_obj, engine.llm)
        cell = engine.nb.cell_by_id(sel.active_cell)
        if sel.selected_span is not None:
            start, end = sel.selected_span
            baseline = cell.source[start:end]
        else:
            baseline = cell.source
        changed = prompts.diff_changed_lines(baseline, response.text)
        return {
            "response": response.to_dict(),
            "changed_lines": sorted(changed),
            "request_hash": gateway.request_hash(bundle.system_text, bundle.user_text),
        }

    @app.post("/cells/{ref}/apply")
    def apply_to_cell(ref: str, body: ApplyIn, request: Request):
        with engine.lock:
            cell_id = engine.resolve_cell(ref)
            engine.nb, changed, affected = gateway.apply_response(
                engine.nb,
                cell_id,
                body.text,
                mode=body.mode,
                original_source=body.original_source,
                span=tuple(body.span) if body.span else None,
            )
            if affected not in engine.graph.nodes:
                source_node = engine.graph.nodes[cell_id]
                engine.graph = graph.update_node(
                    graph.GraphState(
                        nodes={**engine.graph.nodes, affected: graph.Node(cell_id=affected)},
                        links=engine.graph.links,
                        active_cell=engine.graph.active_cell,
                    ),
                    affected,
                    x=source_node.x,
                    y=source_node.y + graph.DEFAULT_ROW_HEIGHT,
                )
            engine.recompute_index()
            engine.bus.emit("variables_changed", {"variables": _variable_states(engine)})
            engine.bus.emit("graph_changed", {"graph": engine.graph_json()})
            engine.maybe_save(autosave_flag(request))
            status = None
            cell = engine.nb.cell_by_id(affected)
            if cell.kind == "code":
                status = graph.node_status(cell, engine.session).value
            return {"cell_id": affected, "changed_lines": sorted(changed), "status": status}

    # -- event stream ----------------------------------------------------------------

    @app.get("/events")
    def get_events(request: Request, since: int = 0, once: bool = False):
        if once:
            body = "".join(_sse_frame(e) for e in engine.bus.events_since(since))
            return Response(content=body, media_type="text/event-stream")

        def stream():
            q = engine.bus.subscribe(since=since)
            try:
                while True:
                    try:
                        event = q.get(timeout=15.0)
                    except queue.Empty:
                        yield ": ping\n\n"
                        continue
                    if event is None:  # dropped for falling behind
                        return
                    yield _sse_frame(event)
            finally:
                engine.bus.unsubscribe(q)

        return StreamingResponse(stream(), media_type="text/event-stream")

    return app


def _variable_states(engine: Engine) -> list[dict]:
    return [
        {"name": rec.name, "state": analysis.variable_status(rec, engine.session).value}
        for rec in engine.index.entries.values()
    ]


def _sse_frame(event: dict) -> str:
    data = json.dumps({"kind": event["kind"], "payload": event["payload"], "seq": event["seq"]})
    return f"id: {event['seq']}\nevent: {event['kind']}\ndata: {data}\n\n"
