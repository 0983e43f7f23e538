"""The user-asserted dependency DAG over notebook cells.

Nodes mirror cells one-to-one (layout position + collapse flag); links are
directed and acyclic by construction. Everything here is a value: mutating
operations return new :class:`GraphState` instances.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field, replace
from enum import Enum
from heapq import heappop, heappush
from typing import Optional

from .errors import (
    CycleError,
    DanglingRefError,
    DuplicateLinkError,
    NotCodeCellError,
    SelfLoopError,
    UnknownCellError,
    UnknownLinkError,
    UnknownNodeError,
)
from .notebook import (
    Cell,
    ExecMeta,
    GraphMetadata,
    LinkMeta,
    NodeMeta,
    Notebook,
    generate_cell_id,
    new_cell_dict,
    read_graph_metadata,
)

#: Vertical spacing for cells that have no persisted position yet.
DEFAULT_ROW_HEIGHT = 120.0

SNIPPET_CHARS = 120
PREVIEW_CHARS = 200


class ExecStatus(str, Enum):
    ERROR = "error"  # red: last run raised
    STALE = "stale"  # orange: never run, or source changed since last run
    OK = "ok"        # green: last run succeeded with the current source


@dataclass(frozen=True)
class Node:
    cell_id: str
    x: float = 0.0
    y: float = 0.0
    collapsed: bool = False


@dataclass(frozen=True)
class Link:
    id: str
    src: str
    dst: str


def _new_link_id() -> str:
    return uuid.uuid4().hex[:16]


@dataclass(frozen=True)
class GraphState:
    """Immutable snapshot of the dependency graph."""

    nodes: dict[str, Node] = field(default_factory=dict)
    links: tuple[Link, ...] = ()
    active_cell: Optional[str] = None

    def link_by_id(self, link_id: str) -> Optional[Link]:
        for link in self.links:
            if link.id == link_id:
                return link
        return None

    def predecessors(self, cell_id: str) -> list[str]:
        return [l.src for l in self.links if l.dst == cell_id]

    def successors(self, cell_id: str) -> list[str]:
        return [l.dst for l in self.links if l.src == cell_id]

    def endpoint_pairs(self) -> set[tuple[str, str]]:
        return {(l.src, l.dst) for l in self.links}


# ---------------------------------------------------------------------------
# Construction / persistence


def from_notebook(nb: Notebook, prune: bool = False) -> GraphState:
    """Build the graph from the notebook's persisted metadata.

    Every cell gets a node; cells without persisted layout are stacked at
    x=0. With ``prune`` the graph drops metadata referencing deleted cells,
    otherwise such references raise DanglingRefError.
    """
    gm = read_graph_metadata(nb, strict=not prune) or GraphMetadata()
    known = [cid for cid in nb.cell_ids() if cid]
    known_set = set(known)
    by_id = {n.cell_id: n for n in gm.nodes if n.cell_id in known_set}
    nodes: dict[str, Node] = {}
    for i, cid in enumerate(known):
        meta = by_id.get(cid)
        if meta is not None:
            nodes[cid] = Node(cell_id=cid, x=meta.x, y=meta.y, collapsed=meta.collapsed)
        else:
            nodes[cid] = Node(cell_id=cid, x=0.0, y=i * DEFAULT_ROW_HEIGHT)
    links = tuple(
        Link(id=l.id, src=l.src, dst=l.dst)
        for l in gm.links
        if l.src in known_set and l.dst in known_set
    )
    active = gm.active_cell if gm.active_cell in known_set else None
    g = GraphState(nodes=nodes, links=links, active_cell=active)
    cycle = _find_any_cycle(g)
    if cycle:
        raise CycleError(
            f"persisted graph metadata contains a cycle: {' -> '.join(cycle)}", cycle=cycle
        )
    return g


def to_metadata(g: GraphState, last_exec: Optional[dict[str, ExecMeta]] = None) -> GraphMetadata:
    return GraphMetadata(
        nodes=[NodeMeta(cell_id=n.cell_id, x=n.x, y=n.y, collapsed=n.collapsed) for n in g.nodes.values()],
        links=[LinkMeta(id=l.id, src=l.src, dst=l.dst) for l in g.links],
        active_cell=g.active_cell,
        last_exec=dict(last_exec or {}),
    )


# ---------------------------------------------------------------------------
# Cycle detection


def _path_between(g: GraphState, start: str, goal: str) -> Optional[list[str]]:
    """A directed path start -> ... -> goal along existing links, if any."""
    if start == goal:
        return [start]
    stack = [start]
    parent: dict[str, str] = {}
    seen = {start}
    while stack:
        current = stack.pop()
        for nxt in g.successors(current):
            if nxt in seen:
                continue
            parent[nxt] = current
            if nxt == goal:
                path = [goal]
                while path[-1] != start:
                    path.append(parent[path[-1]])
                return list(reversed(path))
            seen.add(nxt)
            stack.append(nxt)
    return None


def _find_any_cycle(g: GraphState) -> Optional[list[str]]:
    for link in g.links:
        back = _path_between(g, link.dst, link.src)
        if back is not None:
            return back + [link.dst]
    return None


# ---------------------------------------------------------------------------
# Mutations


def _require_node(g: GraphState, cell_id: str) -> None:
    if cell_id not in g.nodes:
        raise UnknownNodeError(f"no node for cell {cell_id!r}", cell_id=cell_id)


def add_link(g: GraphState, src: str, dst: str) -> GraphState:
    """Add a mental-model dependency; rejects self-loops, duplicates, cycles."""
    _require_node(g, src)
    _require_node(g, dst)
    if src == dst:
        raise SelfLoopError(f"cannot link cell {src!r} to itself", cell_id=src)
    if (src, dst) in g.endpoint_pairs():
        raise DuplicateLinkError(f"link {src!r} -> {dst!r} already exists", src=src, dst=dst)
    back = _path_between(g, dst, src)
    if back is not None:
        cycle = back + [dst]
        raise CycleError(
            f"link {src!r} -> {dst!r} would create a cycle: {' -> '.join(cycle)}",
            cycle=cycle,
        )
    link = Link(id=_new_link_id(), src=src, dst=dst)
    return replace(g, links=g.links + (link,))


def remove_link(g: GraphState, link_id: str) -> GraphState:
    if g.link_by_id(link_id) is None:
        raise UnknownLinkError(f"no link with id {link_id!r}", link_id=link_id)
    return replace(g, links=tuple(l for l in g.links if l.id != link_id))


def set_active(g: GraphState, cell_id: Optional[str]) -> GraphState:
    if cell_id is not None:
        _require_node(g, cell_id)
    return replace(g, active_cell=cell_id)


def update_node(
    g: GraphState,
    cell_id: str,
    x: Optional[float] = None,
    y: Optional[float] = None,
    collapsed: Optional[bool] = None,
) -> GraphState:
    _require_node(g, cell_id)
    node = g.nodes[cell_id]
    new = Node(
        cell_id=cell_id,
        x=node.x if x is None else float(x),
        y=node.y if y is None else float(y),
        collapsed=node.collapsed if collapsed is None else bool(collapsed),
    )
    nodes = dict(g.nodes)
    nodes[cell_id] = new
    return replace(g, nodes=nodes)


def create_linked_node(
    g: GraphState,
    nb: Notebook,
    src: str,
    position: tuple[float, float],
    kind: str = "code",
) -> tuple[GraphState, Notebook, str]:
    """Drop-to-create: new empty cell right after the source cell, linked
    from it, and made active."""
    _require_node(g, src)
    new_id = generate_cell_id()
    nb_out = nb.copy()
    nb_out.insert_cell(nb_out.index_of(src) + 1, new_cell_dict(kind, "", cell_id=new_id))
    nodes = dict(g.nodes)
    nodes[new_id] = Node(cell_id=new_id, x=float(position[0]), y=float(position[1]))
    link = Link(id=_new_link_id(), src=src, dst=new_id)
    g_out = GraphState(nodes=nodes, links=g.links + (link,), active_cell=new_id)
    return g_out, nb_out, new_id


def delete_cell(g: GraphState, nb: Notebook, cell_id: str) -> tuple[GraphState, Notebook]:
    """Remove a cell, its node, and all incident links."""
    if nb.cell_by_id(cell_id) is None:
        raise UnknownCellError(f"no cell {cell_id!r}", cell_id=cell_id)
    nb_out = nb.copy()
    del nb_out.data["cells"][nb_out.index_of(cell_id)]
    nodes = {cid: n for cid, n in g.nodes.items() if cid != cell_id}
    links = tuple(l for l in g.links if l.src != cell_id and l.dst != cell_id)
    active = g.active_cell if g.active_cell != cell_id else None
    return GraphState(nodes=nodes, links=links, active_cell=active), nb_out


# ---------------------------------------------------------------------------
# Path execution


def execution_path(g: GraphState, nb: Notebook, target: str, direction: str = "up") -> list[str]:
    """Cells to run so the target is up to date.

    Default direction "up": all transitive predecessors plus the target, in
    topological order, ties broken by ascending notebook position. The
    non-default "down" gives the downstream closure instead.
    """
    _require_node(g, target)
    neighbors = g.predecessors if direction == "up" else g.successors
    member = {target}
    frontier = [target]
    while frontier:
        current = frontier.pop()
        for nxt in neighbors(current):
            if nxt not in member:
                member.add(nxt)
                frontier.append(nxt)

    order = {cid: nb.order_of(cid) for cid in member}
    indegree = {cid: 0 for cid in member}
    forward: dict[str, list[str]] = {cid: [] for cid in member}
    for link in g.links:
        if link.src in member and link.dst in member:
            indegree[link.dst] += 1
            forward[link.src].append(link.dst)

    ready = [(order[cid], cid) for cid, deg in indegree.items() if deg == 0]
    ready.sort()
    heap = list(ready)
    result: list[str] = []
    while heap:
        _, cid = heappop(heap)
        result.append(cid)
        for nxt in forward[cid]:
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                heappush(heap, (order[nxt], nxt))
    return result


# ---------------------------------------------------------------------------
# Status and hover


def node_status(cell: Cell, session) -> ExecStatus:
    """Execution color of a code cell against the session's run record."""
    if cell.kind != "code":
        raise NotCodeCellError(f"cell {cell.id!r} is {cell.kind}, not code", cell_id=cell.id)
    record = session.result_for(cell.id) if session is not None else None
    if record is None:
        return ExecStatus.STALE
    run_hash, status = record
    if run_hash != cell.source_hash:
        return ExecStatus.STALE
    return ExecStatus.ERROR if status == "error" else ExecStatus.OK


def hover_info(g: GraphState, nb: Notebook, index, cell_id: str, session=None) -> dict:
    """Status plus the indexed variables this cell uses (colored-bar hover)."""
    _require_node(g, cell_id)
    cell = nb.cell_by_id(cell_id)
    if cell is None:
        raise UnknownNodeError(f"no cell {cell_id!r}", cell_id=cell_id)
    status = node_status(cell, session) if cell.kind == "code" else None
    used = set(index.used_in_cell(cell_id)) if index is not None else set()
    return {"status": status, "used_variables": used}


# ---------------------------------------------------------------------------
# Views / export


def _output_preview(cell: Cell) -> Optional[dict]:
    for out in cell.outputs:
        if out.kind == "display_image":
            return {"kind": "image", "mime": out.image_mime, "data": out.image_data}
    for out in cell.outputs:
        if out.kind in ("stream_text", "display_table_text") and out.text:
            return {"kind": "text", "text": out.text[:PREVIEW_CHARS]}
        if out.kind == "error":
            return {"kind": "text", "text": (out.error_name or "error")[:PREVIEW_CHARS]}
    return None


def graph_view(g: GraphState, nb: Notebook, session=None, index=None) -> dict:
    """JSON-ready snapshot: persisted fields plus derived order/status."""
    nodes = []
    for cell in nb.cells:
        cid = cell.id
        if cid is None or cid not in g.nodes:
            continue
        node = g.nodes[cid]
        status = None
        if cell.kind == "code":
            status = node_status(cell, session).value if session is not None else ExecStatus.STALE.value
        nodes.append(
            {
                "cell_id": cid,
                "x": node.x,
                "y": node.y,
                "collapsed": node.collapsed,
                "order": nb.order_of(cid),
                "kind": cell.kind,
                "status": status,
                "snippet": cell.source[:SNIPPET_CHARS],
                "output_preview": _output_preview(cell),
                "active": cid == g.active_cell,
            }
        )
    return {
        "nodes": nodes,
        "links": [{"id": l.id, "src": l.src, "dst": l.dst} for l in g.links],
        "active_cell": g.active_cell,
    }


def to_dot(g: GraphState, nb: Notebook, session=None) -> str:
    """Graphviz export; node labels carry the 1-based order number."""
    lines = ["digraph cells {"]
    color = {ExecStatus.ERROR: "red", ExecStatus.STALE: "orange", ExecStatus.OK: "green"}
    for cell in nb.cells:
        cid = cell.id
        if cid is None or cid not in g.nodes:
            continue
        label = f"{nb.order_of(cid)}"
        snippet = cell.source.splitlines()[0][:40] if cell.source else ""
        if snippet:
            label += f": {snippet}"
        attrs = [f'label="{_dot_escape(label)}"']
        if cell.kind == "code":
            status = node_status(cell, session) if session is not None else ExecStatus.STALE
            attrs.append(f'color="{color[status]}"')
        else:
            attrs.append('shape="note"')
        lines.append(f'  "{cid}" [{", ".join(attrs)}];')
    for link in g.links:
        lines.append(f'  "{link.src}" -> "{link.dst}";')
    lines.append("}")
    return "\n".join(lines) + "\n"


def _dot_escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')
