"""Lossless ipynb document model.

The notebook is kept as the parsed JSON tree; cells are live views over the
cell dicts. Anything the engine does not understand stays in the tree
verbatim, so load -> save round trips are JSON-equal. The engine owns a
single reserved metadata key (:data:`METADATA_KEY`) holding the persisted
graph: node layout, links, the active cell, and the per-cell record of the
last execution (source hash + ok/error).
"""

from __future__ import annotations

import copy
import hashlib
import json
import uuid
from dataclasses import dataclass, field
from typing import Any, Iterator, Optional

from .errors import (
    DanglingRefError,
    DuplicateIdError,
    MetadataVersionError,
    ParseError,
    SchemaError,
    VersionError,
)

#: Reserved key inside the document-level ``metadata`` object.
METADATA_KEY = "cellgraph"

#: Cell-metadata key used to persist engine-generated cell ids (files older
#: than nbformat 4.5 have no top-level ``id`` field to write to).
CELL_ID_KEY = "cellgraph_id"

#: Schema version written under :data:`METADATA_KEY`.
SCHEMA_VERSION = 1

CELL_KINDS = ("code", "markdown", "raw")


def source_hash(source: str) -> str:
    """Digest of the exact source text; the engine's change detector."""
    return hashlib.sha256(source.encode("utf-8")).hexdigest()


def _join_source(value) -> str:
    if isinstance(value, list):
        return "".join(value)
    return value or ""


def _split_source(text: str) -> list[str]:
    # ipynb convention: list of lines, each keeping its trailing newline.
    return text.splitlines(keepends=True) or []


# ---------------------------------------------------------------------------
# Outputs


@dataclass
class Output:
    """Parsed view of one cell output.

    Exactly the fields of the declared kind are populated:
    ``stream_text`` / ``display_table_text`` carry ``text``,
    ``display_image`` carries ``image_data`` + ``image_mime``, and ``error``
    carries the error triple.
    """

    kind: str
    text: Optional[str] = None
    image_data: Optional[str] = None
    image_mime: Optional[str] = None
    error_name: Optional[str] = None
    error_message: Optional[str] = None
    traceback: Optional[list[str]] = None

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind}
        if self.kind in ("stream_text", "display_table_text"):
            out["text"] = self.text or ""
        elif self.kind == "display_image":
            out["image_data"] = self.image_data or ""
            out["image_mime"] = self.image_mime or "image/png"
        elif self.kind == "error":
            out["error_name"] = self.error_name or ""
            out["error_message"] = self.error_message or ""
            out["traceback"] = list(self.traceback or [])
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Output":
        return cls(
            kind=d["kind"],
            text=d.get("text"),
            image_data=d.get("image_data"),
            image_mime=d.get("image_mime"),
            error_name=d.get("error_name"),
            error_message=d.get("error_message"),
            traceback=list(d["traceback"]) if d.get("traceback") else None,
        )


def parse_ipynb_output(raw: dict) -> Optional[Output]:
    """Map one ipynb output object onto the engine's output model.

    Unknown output types yield ``None`` (they still survive in the raw tree).
    """
    otype = raw.get("output_type")
    if otype == "stream":
        return Output(kind="stream_text", text=_join_source(raw.get("text")))
    if otype == "error":
        return Output(
            kind="error",
            error_name=raw.get("ename", ""),
            error_message=raw.get("evalue", ""),
            traceback=list(raw.get("traceback") or []),
        )
    if otype in ("display_data", "execute_result"):
        data = raw.get("data") or {}
        for mime, payload in data.items():
            if mime.startswith("image/"):
                return Output(
                    kind="display_image",
                    image_data=_join_source(payload),
                    image_mime=mime,
                )
        for mime in ("text/plain", "text/html", "text/markdown"):
            if mime in data:
                return Output(kind="display_table_text", text=_join_source(data[mime]))
    return None


def output_to_ipynb(out: Output) -> dict:
    """Serialize an engine output back to ipynb form (used after runs)."""
    if out.kind == "stream_text":
        return {
            "output_type": "stream",
            "name": "stdout",
            "text": _split_source(out.text or ""),
        }
    if out.kind == "display_image":
        return {
            "output_type": "display_data",
            "data": {out.image_mime or "image/png": out.image_data or ""},
            "metadata": {},
        }
    if out.kind == "display_table_text":
        return {
            "output_type": "display_data",
            "data": {"text/plain": _split_source(out.text or "")},
            "metadata": {},
        }
    if out.kind == "error":
        return {
            "output_type": "error",
            "ename": out.error_name or "",
            "evalue": out.error_message or "",
            "traceback": list(out.traceback or []),
        }
    raise SchemaError(f"unknown output kind {out.kind!r}")


# ---------------------------------------------------------------------------
# Cells and notebook


class Cell:
    """Live view over one cell dict inside the notebook tree."""

    __slots__ = ("raw",)

    def __init__(self, raw: dict):
        self.raw = raw

    @property
    def id(self) -> Optional[str]:
        cid = self.raw.get("id")
        if cid:
            return cid
        return (self.raw.get("metadata") or {}).get(CELL_ID_KEY)

    @property
    def kind(self) -> str:
        return self.raw["cell_type"]

    @property
    def source(self) -> str:
        return _join_source(self.raw.get("source"))

    def set_source(self, text: str) -> None:
        self.raw["source"] = _split_source(text)

    @property
    def source_hash(self) -> str:
        return source_hash(self.source)

    @property
    def outputs(self) -> list[Output]:
        if self.kind != "code":
            return []
        parsed = (parse_ipynb_output(o) for o in self.raw.get("outputs") or [])
        return [o for o in parsed if o is not None]

    def set_outputs(self, outputs: list[Output]) -> None:
        self.raw["outputs"] = [output_to_ipynb(o) for o in outputs]

    @property
    def exec_count(self) -> Optional[int]:
        return self.raw.get("execution_count")

    def set_exec_count(self, n: Optional[int]) -> None:
        self.raw["execution_count"] = n

    @property
    def metadata(self) -> dict:
        return self.raw.setdefault("metadata", {})

    def __repr__(self) -> str:  # pragma: no cover
        return f"Cell(id={self.id!r}, kind={self.kind!r})"


def new_cell_dict(kind: str, source: str = "", cell_id: Optional[str] = None) -> dict:
    if kind not in CELL_KINDS:
        raise SchemaError(f"unknown cell kind {kind!r}")
    raw: dict[str, Any] = {
        "cell_type": kind,
        "metadata": {CELL_ID_KEY: cell_id or generate_cell_id()},
        "source": _split_source(source),
    }
    if kind == "code":
        raw["outputs"] = []
        raw["execution_count"] = None
    return raw


def generate_cell_id() -> str:
    """Random 128-bit id, lowercase hex."""
    return uuid.uuid4().hex


class Notebook:
    """An ipynb document plus engine conveniences.

    ``data`` is the full JSON tree; mutating operations below return fresh
    copies so callers can treat notebooks as values. A single instance must
    not be mutated concurrently.
    """

    def __init__(self, data: dict):
        self.data = data

    # -- structure ---------------------------------------------------------

    @property
    def format_version(self) -> tuple[int, int]:
        return (self.data.get("nbformat", 0), self.data.get("nbformat_minor", 0))

    @property
    def cells(self) -> list[Cell]:
        return [Cell(raw) for raw in self.data["cells"]]

    @property
    def doc_metadata(self) -> dict:
        return self.data.setdefault("metadata", {})

    @property
    def graph_meta(self) -> Optional["GraphMetadata"]:
        return read_graph_metadata(self)

    def cell_ids(self) -> list[Optional[str]]:
        return [c.id for c in self.cells]

    def cell_by_id(self, cell_id: str) -> Optional[Cell]:
        for cell in self.cells:
            if cell.id == cell_id:
                return cell
        return None

    def index_of(self, cell_id: str) -> int:
        for i, cell in enumerate(self.cells):
            if cell.id == cell_id:
                return i
        raise KeyError(cell_id)

    def order_of(self, cell_id: str) -> int:
        """1-based notebook position of a cell."""
        return self.index_of(cell_id) + 1

    def insert_cell(self, index: int, raw: dict) -> None:
        self.data["cells"].insert(index, raw)

    def copy(self) -> "Notebook":
        return Notebook(copy.deepcopy(self.data))

    def __eq__(self, other) -> bool:
        return isinstance(other, Notebook) and self.data == other.data

    def __repr__(self) -> str:  # pragma: no cover
        return f"Notebook({len(self.data.get('cells', []))} cells)"


# ---------------------------------------------------------------------------
# Load / save


def load_notebook(raw: bytes | str) -> Notebook:
    """Parse ipynb bytes into a :class:`Notebook`.

    Raises ParseError for malformed JSON, SchemaError for structural
    problems, VersionError for pre-v4 files.
    """
    try:
        data = json.loads(raw)
    except (ValueError, TypeError) as exc:
        raise ParseError(f"not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise SchemaError("notebook document must be a JSON object")
    cells = data.get("cells")
    if not isinstance(cells, list):
        raise SchemaError("missing or non-list 'cells' array")
    major = data.get("nbformat")
    if not isinstance(major, int):
        raise SchemaError("missing integer 'nbformat' field")
    if major < 4:
        raise VersionError(f"nbformat {major} unsupported; need >= 4")
    for i, cell in enumerate(cells):
        if not isinstance(cell, dict):
            raise SchemaError(f"cell {i} is not an object")
        if cell.get("cell_type") not in CELL_KINDS:
            raise SchemaError(f"cell {i} has unknown cell_type {cell.get('cell_type')!r}")
    return Notebook(data)


def save_notebook(nb: Notebook) -> bytes:
    """Serialize back to ipynb JSON (UTF-8)."""
    return (json.dumps(nb.data, ensure_ascii=False, indent=1) + "\n").encode("utf-8")


def ensure_cell_ids(nb: Notebook) -> Notebook:
    """Return a copy in which every cell has a unique stable id.

    Existing ids are preserved; missing ones get random 128-bit hex ids
    stored under the engine's cell-metadata key. Idempotent.
    """
    seen: dict[str, int] = {}
    for i, cell in enumerate(nb.cells):
        cid = cell.id
        if cid is not None:
            if cid in seen:
                raise DuplicateIdError(
                    f"cells {seen[cid]} and {i} declare the same id {cid!r}",
                    cell_id=cid,
                )
            seen[cid] = i
    out = nb.copy()
    for cell in out.cells:
        if cell.id is None:
            cell.metadata[CELL_ID_KEY] = generate_cell_id()
    return out


# ---------------------------------------------------------------------------
# Persisted graph metadata


@dataclass
class NodeMeta:
    cell_id: str
    x: float = 0.0
    y: float = 0.0
    collapsed: bool = False


@dataclass
class LinkMeta:
    id: str
    src: str
    dst: str


@dataclass
class ExecMeta:
    source_hash: str
    status: str  # "ok" | "error"


@dataclass
class GraphMetadata:
    """The JSON the engine persists under :data:`METADATA_KEY`."""

    nodes: list[NodeMeta] = field(default_factory=list)
    links: list[LinkMeta] = field(default_factory=list)
    active_cell: Optional[str] = None
    last_exec: dict[str, ExecMeta] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "nodes": [
                {"cell_id": n.cell_id, "x": n.x, "y": n.y, "collapsed": n.collapsed}
                for n in self.nodes
            ],
            "links": [{"id": l.id, "src": l.src, "dst": l.dst} for l in self.links],
            "active_cell": self.active_cell,
            "last_exec": {
                cid: {"source_hash": e.source_hash, "status": e.status}
                for cid, e in self.last_exec.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GraphMetadata":
        version = d.get("version")
        if version != SCHEMA_VERSION:
            raise MetadataVersionError(
                f"unsupported graph metadata version {version!r}", version=version
            )
        nodes = [
            NodeMeta(
                cell_id=n["cell_id"],
                x=float(n.get("x", 0.0)),
                y=float(n.get("y", 0.0)),
                collapsed=bool(n.get("collapsed", False)),
            )
            for n in d.get("nodes", [])
        ]
        links = [LinkMeta(id=l["id"], src=l["src"], dst=l["dst"]) for l in d.get("links", [])]
        last = {
            cid: ExecMeta(source_hash=e["source_hash"], status=e["status"])
            for cid, e in (d.get("last_exec") or {}).items()
        }
        return cls(nodes=nodes, links=links, active_cell=d.get("active_cell"), last_exec=last)

    def referenced_cell_ids(self) -> Iterator[str]:
        for n in self.nodes:
            yield n.cell_id
        for l in self.links:
            yield l.src
            yield l.dst
        if self.active_cell:
            yield self.active_cell
        yield from self.last_exec.keys()


def read_graph_metadata(nb: Notebook, strict: bool = True) -> Optional[GraphMetadata]:
    """Parse the reserved metadata key, or return None when absent.

    With ``strict`` (the default) any reference to a cell id not present in
    the notebook raises DanglingRefError listing the offending ids; callers
    that prefer pruning pass ``strict=False`` and decide themselves.
    """
    raw = (nb.data.get("metadata") or {}).get(METADATA_KEY)
    if raw is None:
        return None
    gm = GraphMetadata.from_dict(raw)
    if strict:
        known = {cid for cid in nb.cell_ids() if cid}
        missing = sorted({cid for cid in gm.referenced_cell_ids() if cid not in known})
        if missing:
            raise DanglingRefError(
                f"graph metadata references unknown cell ids: {', '.join(missing)}",
                cell_ids=missing,
            )
    return gm


def write_graph_metadata(nb: Notebook, gm: GraphMetadata) -> Notebook:
    """Return a copy with the reserved key replaced wholesale."""
    known = {cid for cid in nb.cell_ids() if cid}
    missing = sorted({cid for cid in gm.referenced_cell_ids() if cid not in known})
    if missing:
        raise DanglingRefError(
            f"graph metadata references unknown cell ids: {', '.join(missing)}",
            cell_ids=missing,
        )
    out = nb.copy()
    out.doc_metadata[METADATA_KEY] = gm.to_dict()
    return out
