"""Command-line entry point.

Subcommands: analyze | graph | suggest | prompt | run-path | serve.
Exit codes: 0 success, 1 domain error, 2 usage error. With --format json,
domain errors print as structured JSON on stderr.
"""

from __future__ import annotations

import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import click

from . import analysis, context, gateway, graph, prompts
from .config import load_config
from .errors import CellGraphError, UnknownCellError
from .notebook import ensure_cell_ids, load_notebook, read_graph_metadata, save_notebook, write_graph_metadata
from .session import MockKernel, Session


def _load_engine_state(path: str):
    nb = ensure_cell_ids(load_notebook(Path(path).read_bytes()))
    g = graph.from_notebook(nb, prune=True)
    meta = read_graph_metadata(nb, strict=False)
    index = analysis.build_variable_index(nb)
    return nb, g, meta, index


def _kernel_adapter(spec: str | None):
    if spec is None:
        return None
    if spec.startswith("mock:"):
        return MockKernel.from_file(spec[len("mock:"):])
    if spec == "real":
        from .jupyter_kernel import JupyterKernelAdapter

        return JupyterKernelAdapter()
    raise click.UsageError(f"--kernel must be 'mock:<fixture>' or 'real', got {spec!r}")


def _llm_adapter(spec: str | None, config: dict):
    if spec is None or spec == "live":
        return gateway.OpenAICompatAdapter(base_url=config["api_base"])
    if spec.startswith("replay:"):
        return gateway.ReplayAdapter.from_file(spec[len("replay:"):])
    raise click.UsageError(f"--llm must be 'replay:<file>' or 'live', got {spec!r}")


def _resolve_cell(nb, ref: str) -> str:
    if ref.isdigit():
        order = int(ref)
        cells = nb.cells
        if 1 <= order <= len(cells) and not any(c.id == ref for c in cells):
            return cells[order - 1].id
    cell = nb.cell_by_id(ref)
    if cell is None:
        raise UnknownCellError(f"no cell {ref!r}", cell_id=ref)
    return cell.id


def _emit_error(err: CellGraphError, fmt: str) -> None:
    if fmt == "json":
        click.echo(json.dumps(err.to_dict()), err=True)
    else:
        click.echo(f"error: {err.message}", err=True)


def _json(data) -> str:
    return json.dumps(data, indent=2)


@click.group()
def main():
    """Notebook dependency-graph engine: inspect, plan, prompt, serve."""


@main.command()
@click.argument("notebook", type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["json", "text"]), default="json")
def analyze(notebook, fmt):
    """Print the variable index (defined/used/deleted per name)."""
    try:
        nb, _, meta, index = _load_engine_state(notebook)
        session = Session(None, restored=meta.last_exec if meta else {})
        variables = []
        for rec in index.entries.values():
            variables.append(
                {
                    "name": rec.name,
                    "defined_in": list(rec.defined_in),
                    "used_in": list(rec.used_in),
                    "deleted_in": list(rec.deleted_in),
                    "state": analysis.variable_status(rec, session).value,
                }
            )
        diagnostics = [
            {"cell_id": cid, "line": line, "message": message}
            for cid, line, message in index.diagnostics
        ]
        if fmt == "json":
            click.echo(_json({"variables": variables, "diagnostics": diagnostics}))
        else:
            for var in variables:
                defined = ", ".join(str(nb.order_of(c)) for c in var["defined_in"])
                used = ", ".join(str(nb.order_of(c)) for c in var["used_in"])
                click.echo(f"{var['name']}: defined in [{defined}] used in [{used}] ({var['state']})")
            for diag in diagnostics:
                click.echo(f"warning {diag['cell_id']}:{diag['line']}: {diag['message']}")
    except CellGraphError as err:
        _emit_error(err, fmt)
        sys.exit(1)


@main.command("graph")
@click.argument("notebook", type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["json", "dot"]), default="json")
def graph_cmd(notebook, fmt):
    """Export the dependency graph (persisted schema + order/status)."""
    try:
        nb, g, meta, _ = _load_engine_state(notebook)
        session = Session(None, restored=meta.last_exec if meta else {})
        if fmt == "dot":
            click.echo(graph.to_dot(g, nb, session), nl=False)
            return
        exported = graph.to_metadata(g, session.last_exec_table()).to_dict()
        status_by_id = {}
        for cell in nb.cells:
            if cell.kind == "code":
                status_by_id[cell.id] = graph.node_status(cell, session).value
        for node in exported["nodes"]:
            node["order"] = nb.order_of(node["cell_id"])
            node["status"] = status_by_id.get(node["cell_id"])
        click.echo(_json(exported))
    except CellGraphError as err:
        _emit_error(err, fmt if fmt == "json" else "text")
        sys.exit(1)


@main.command()
@click.argument("notebook", type=click.Path(exists=True))
@click.option("--cell", required=True, help="active cell: 1-based order or stable id")
@click.option("--format", "fmt", type=click.Choice(["json", "text"]), default="json")
def suggest(notebook, cell, fmt):
    """Suggested context for a cell: incoming-link cells + their variables."""
    try:
        nb, g, _, index = _load_engine_state(notebook)
        active = _resolve_cell(nb, cell)
        sel = context.suggest_context(g, nb, index, active)
        orders = [nb.order_of(c) for c in sel.context_cells]
        if fmt == "json":
            click.echo(_json({"cells": orders, "variables": list(sel.context_variables)}))
        else:
            click.echo(f"cells: {orders}")
            click.echo(f"variables: {list(sel.context_variables)}")
    except CellGraphError as err:
        _emit_error(err, fmt)
        sys.exit(1)


@main.command("prompt")
@click.argument("notebook", type=click.Path(exists=True))
@click.option("--cell", required=True)
@click.option("--task", type=click.Choice([t.value for t in context.TaskType]), default=None)
@click.option("--prompt", "user_prompt", default="", help="the instruction sent to the model")
@click.option("--selected", default=None, help="span START:END into the active cell source")
@click.option("--context-cell", "context_cells", multiple=True, help="replaces the suggestion")
@click.option("--context-var", "context_vars", multiple=True, help="replaces the suggestion")
@click.option("--no-suggest", is_flag=True, help="start from an empty context")
@click.option("--include-output", is_flag=True)
@click.option("--include-error", is_flag=True)
@click.option("--condense", is_flag=True)
@click.option("--timestamp", default=None, help="RFC 3339 override for reproducible output")
@click.option("--kernel", "kernel_spec", default=None, help="mock:<fixture> or real")
@click.option("--deterministic", is_flag=True, help="require mock kernel + pinned timestamp")
@click.option("--format", "fmt", type=click.Choice(["json", "text"]), default="text")
def prompt_cmd(
    notebook, cell, task, user_prompt, selected, context_cells, context_vars,
    no_suggest, include_output, include_error, condense, timestamp, kernel_spec,
    deterministic, fmt,
):
    """Assemble (but do not send) the prompt bundle for a cell."""
    if deterministic:
        if timestamp is None:
            raise click.UsageError("--deterministic requires --timestamp")
        if kernel_spec is not None and not kernel_spec.startswith("mock:"):
            raise click.UsageError("--deterministic requires a mock kernel")
    try:
        nb, g, meta, index = _load_engine_state(notebook)
        session = Session(_kernel_adapter(kernel_spec), restored=meta.last_exec if meta else {})
        active = _resolve_cell(nb, cell)
        if context_cells or context_vars or no_suggest:
            sel = context.ContextSelection(
                active_cell=active,
                task=context.default_task_for(nb, active),
                context_cells=tuple(_resolve_cell(nb, c) for c in context_cells),
                context_variables=tuple(context_vars),
            )
        else:
            sel = context.suggest_context(g, nb, index, active)
        from dataclasses import replace

        sel = replace(
            sel,
            task=context.TaskType(task) if task else sel.task,
            include_output=include_output,
            include_error=include_error,
            condense=condense,
            user_prompt=user_prompt,
            selected_span=_parse_span(selected),
        )
        sel = context.validate_selection(sel, nb, session, index)
        material = context.resolve_material(sel, nb, session, index)
        now = prompts.parse_timestamp(timestamp) if timestamp else datetime.now(timezone.utc)
        bundle = prompts.assemble(material, sel, now)
        if fmt == "json":
            click.echo(_json(bundle.to_dict()))
        else:
            click.echo(render_bundle_text(bundle), nl=False)
    except CellGraphError as err:
        _emit_error(err, fmt)
        sys.exit(1)


def render_bundle_text(bundle: prompts.PromptBundle) -> str:
    parts = [f"=== SYSTEM ===\n{bundle.system_text}\n=== USER ===\n{bundle.user_text}\n"]
    if bundle.attachments:
        parts.append(f"=== ATTACHMENTS: {len(bundle.attachments)} image(s) ===\n")
    return "".join(parts)


def _parse_span(spec: str | None):
    if spec is None:
        return None
    try:
        start, _, end = spec.partition(":")
        return (int(start), int(end))
    except ValueError:
        raise click.UsageError(f"--selected must be START:END, got {spec!r}") from None


@main.command("run-path")
@click.argument("notebook", type=click.Path(exists=True))
@click.option("--cell", required=True)
@click.option("--force", is_flag=True, help="re-run cells that are already ok")
@click.option("--direction", type=click.Choice(["up", "down"]), default="up")
@click.option("--kernel", "kernel_spec", default=None, help="mock:<fixture> or real")
@click.option("--save/--no-save", "save", default=True, help="write results back to the file")
@click.option("--deterministic", is_flag=True)
@click.option("--format", "fmt", type=click.Choice(["json", "text"]), default="json")
def run_path_cmd(notebook, cell, force, direction, kernel_spec, save, deterministic, fmt):
    """Execute the ancestor path of a cell with the configured kernel."""
    if deterministic and (kernel_spec is None or not kernel_spec.startswith("mock:")):
        raise click.UsageError("--deterministic requires --kernel mock:<fixture>")
    try:
        nb, g, meta, _ = _load_engine_state(notebook)
        session = Session(_kernel_adapter(kernel_spec), restored=meta.last_exec if meta else {})
        target = _resolve_cell(nb, cell)
        path = graph.execution_path(g, nb, target, direction)
        code_path = [cid for cid in path if nb.cell_by_id(cid).kind == "code"]
        results = session.run_cells(nb, code_path, force=force)
        if save:
            out = write_graph_metadata(nb, graph.to_metadata(g, session.last_exec_table()))
            Path(notebook).write_bytes(save_notebook(out))
        executed = {r.cell_id for r in results}
        payload = {
            "path": path,
            "results": [r.to_dict() for r in results],
            "skipped": [cid for cid in code_path if cid not in executed],
        }
        if fmt == "json":
            click.echo(_json(payload))
        else:
            for r in results:
                click.echo(f"{nb.order_of(r.cell_id)} [{r.status}]")
            for cid in payload["skipped"]:
                click.echo(f"{nb.order_of(cid)} [skipped]")
        if any(r.status == "error" for r in results):
            sys.exit(1)
    except CellGraphError as err:
        _emit_error(err, fmt)
        sys.exit(1)


@main.command()
@click.argument("notebook", type=click.Path(exists=True))
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.option("--kernel", "kernel_spec", default=None, help="mock:<fixture> or real")
@click.option("--llm", "llm_spec", default=None, help="replay:<file> or live")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--autosave/--no-autosave", default=True)
def serve(notebook, host, port, kernel_spec, llm_spec, config_path, autosave):
    """Serve the engine API (and event stream) for one notebook."""
    import uvicorn

    from .service import Engine, create_app

    config = load_config(config_path)
    try:
        engine = Engine(
            notebook,
            kernel=_kernel_adapter(kernel_spec),
            llm=_llm_adapter(llm_spec, config),
            autosave=autosave,
            model=config["model"],
        )
    except CellGraphError as err:
        _emit_error(err, "text")
        sys.exit(1)
    uvicorn.run(
        create_app(engine),
        host=host or config["host"],
        port=port or int(config["port"]),
        log_level="info",
    )


if __name__ == "__main__":
    main()
