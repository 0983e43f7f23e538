"""Static def/use analysis of cell source at the kernel's top level.

The analyzer answers one question per cell: which names does this cell bind
into, read from, or delete from the kernel's top-level namespace. Scope
handling is deliberately shallow — exactly one rule: function, lambda, class
and comprehension bodies hide their locals, while names they read that
escape every enclosing local scope count as top-level reads.

Pinned conventions (mirrored by the test oracle):

* bindings: assignment (plain, chained, unpacking, starred), augmented
  assignment (also a use), annotated assignment with a value, ``for`` /
  ``with ... as`` targets, ``def`` / ``class`` names, ``import`` bound
  names, walrus targets (leaking out of comprehensions), ``match`` captures;
* not bindings at top level: ``except ... as e`` (unbound after the block),
  bare annotations (``x: int``), attribute / subscript stores (a use of the
  base instead), comprehension targets, anything inside a def/class body;
* ``del x`` records a delete; ``del d[k]`` / ``del o.a`` is a use of the base;
* ``from m import *`` binds nothing and emits a diagnostic;
* every ``Load`` of a name that reaches module scope is a use, builtins
  included (the variable index only keys on names defined in some cell, so
  builtins never surface there).

Unparseable regions degrade per line: the longest parseable block wins, the
offending line is skipped and reported in the record's diagnostics.
"""

from __future__ import annotations

import ast
import textwrap
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

from .notebook import Notebook


@dataclass(frozen=True)
class Diagnostic:
    line: int
    message: str


@dataclass(frozen=True)
class DefUseRecord:
    """Top-level defines / uses / deletes of one cell, in source order."""

    cell_id: str
    defines: tuple[str, ...] = ()
    uses: tuple[str, ...] = ()
    deletes: tuple[str, ...] = ()
    diagnostics: tuple[Diagnostic, ...] = ()


# ---------------------------------------------------------------------------
# Parsing with line-based recovery


def _try_parse(chunk: str) -> Optional[ast.Module]:
    try:
        return ast.parse(chunk)
    except (SyntaxError, ValueError):
        pass
    try:
        return ast.parse(textwrap.dedent(chunk))
    except (SyntaxError, ValueError):
        return None


def _parse_blocks(source: str) -> tuple[list[ast.stmt], list[Diagnostic]]:
    try:
        return list(ast.parse(source).body), []
    except (SyntaxError, ValueError):
        pass
    lines = source.split("\n")
    stmts: list[ast.stmt] = []
    diags: list[Diagnostic] = []
    i = 0
    while i < len(lines):
        parsed = None
        upto = i
        for j in range(len(lines), i, -1):  # longest parseable block wins
            parsed = _try_parse("\n".join(lines[i:j]))
            if parsed is not None:
                upto = j
                break
        if parsed is None:
            diags.append(
                Diagnostic(line=i + 1, message=f"skipped unparseable line: {lines[i].strip()[:60]}")
            )
            i += 1
            continue
        for node in parsed.body:
            ast.increment_lineno(node, i)
        stmts.extend(parsed.body)
        i = upto
    return stmts, diags


# ---------------------------------------------------------------------------
# Scope machinery


_COMPREHENSIONS = (ast.ListComp, ast.SetComp, ast.DictComp, ast.GeneratorExp)
_NEW_SCOPES = (ast.FunctionDef, ast.AsyncFunctionDef, ast.Lambda, ast.ClassDef) + _COMPREHENSIONS


def _target_names(node: ast.expr) -> Iterable[str]:
    """Plain names bound by an assignment-like target."""
    if isinstance(node, ast.Name):
        yield node.id
    elif isinstance(node, (ast.Tuple, ast.List)):
        for elt in node.elts:
            yield from _target_names(elt)
    elif isinstance(node, ast.Starred):
        yield from _target_names(node.value)
    # Attribute / Subscript targets bind nothing


def _match_captures(pattern: ast.AST) -> Iterable[str]:
    for node in ast.walk(pattern):
        if isinstance(node, ast.MatchAs) and node.name:
            yield node.name
        elif isinstance(node, ast.MatchStar) and node.name:
            yield node.name
        elif isinstance(node, ast.MatchMapping) and node.rest:
            yield node.rest


def _local_bindings(body: Iterable[ast.AST], *, include_walrus: bool = True) -> set[str]:
    """Names a function/class/lambda body binds locally.

    Walks statements without descending into nested def/class/lambda scopes.
    Comprehensions are entered only to pick up walrus targets, which bind in
    the surrounding scope.
    """
    bound: set[str] = set()

    def scan(node: ast.AST, in_comprehension: bool = False) -> None:
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            bound.add(node.name)
            for dec in node.decorator_list:
                scan(dec, in_comprehension)
            for default in list(node.args.defaults) + [d for d in node.args.kw_defaults if d]:
                scan(default, in_comprehension)
            return
        if isinstance(node, ast.ClassDef):
            bound.add(node.name)
            for dec in node.decorator_list:
                scan(dec, in_comprehension)
            for base in list(node.bases) + [kw.value for kw in node.keywords]:
                scan(base, in_comprehension)
            return
        if isinstance(node, ast.Lambda):
            for default in list(node.args.defaults) + [d for d in node.args.kw_defaults if d]:
                scan(default, in_comprehension)
            return
        if isinstance(node, _COMPREHENSIONS):
            if include_walrus:
                for child in ast.iter_child_nodes(node):
                    scan(child, True)
            return
        if isinstance(node, ast.Assign):
            for target in node.targets:
                bound.update(_target_names(target))
        elif isinstance(node, ast.AugAssign):
            bound.update(_target_names(node.target))
        elif isinstance(node, ast.AnnAssign):
            if node.value is not None:
                bound.update(_target_names(node.target))
        elif isinstance(node, (ast.For, ast.AsyncFor)):
            bound.update(_target_names(node.target))
        elif isinstance(node, (ast.With, ast.AsyncWith)):
            for item in node.items:
                if item.optional_vars is not None:
                    bound.update(_target_names(item.optional_vars))
        elif isinstance(node, ast.Import):
            for alias in node.names:
                bound.add(alias.asname or alias.name.split(".")[0])
        elif isinstance(node, ast.ImportFrom):
            for alias in node.names:
                if alias.name != "*":
                    bound.add(alias.asname or alias.name)
        elif isinstance(node, ast.Delete):
            for target in node.targets:
                bound.update(_target_names(target))
        elif isinstance(node, ast.ExceptHandler):
            if node.name:
                bound.add(node.name)
        elif isinstance(node, ast.NamedExpr):
            bound.update(_target_names(node.target))
        elif isinstance(node, ast.Match):
            for case in node.cases:
                bound.update(_match_captures(case.pattern))
        for child in ast.iter_child_nodes(node):
            scan(child, in_comprehension)

    for stmt in body:
        scan(stmt)
    return bound


def _declarations(body: Iterable[ast.AST], kind: type) -> set[str]:
    """global/nonlocal declarations directly in this scope."""
    names: set[str] = set()

    def scan(node: ast.AST) -> None:
        if isinstance(node, _NEW_SCOPES):
            return
        if isinstance(node, kind):
            names.update(node.names)
        for child in ast.iter_child_nodes(node):
            scan(child)

    for stmt in body:
        scan(stmt)
    return names


@dataclass
class _Scope:
    kind: str  # module | function | class | comprehension
    bound: set[str] = field(default_factory=set)
    globals: set[str] = field(default_factory=set)
    nonlocals: set[str] = field(default_factory=set)


class _Analyzer:
    """Single walk over the (recovered) module body."""

    def __init__(self) -> None:
        self.defines: dict[str, None] = {}
        self.uses: dict[str, None] = {}
        self.deletes: dict[str, None] = {}
        self.diagnostics: list[Diagnostic] = []
        self.scopes: list[_Scope] = [_Scope("module")]

    # -- recording ----------------------------------------------------------

    def _at_module(self) -> bool:
        return self.scopes[-1].kind == "module"

    def _nearest_non_comprehension(self) -> _Scope:
        for scope in reversed(self.scopes):
            if scope.kind != "comprehension":
                return scope
        return self.scopes[0]

    def _define(self, name: str) -> None:
        if self._at_module():
            self.defines.setdefault(name)

    def _load(self, name: str) -> None:
        innermost = self.scopes[-1]
        for scope in reversed(self.scopes):
            if scope.kind == "module":
                self.uses.setdefault(name)
                return
            if name in scope.globals:
                self.uses.setdefault(name)
                return
            if name in scope.nonlocals:
                return  # resolved by an enclosing function scope
            if scope.kind == "class" and scope is not innermost:
                continue  # class scopes are invisible to nested scopes
            if name in scope.bound:
                return

    # -- expressions ---------------------------------------------------------

    def _expr(self, node: Optional[ast.AST]) -> None:
        if node is None:
            return
        if isinstance(node, ast.Name):
            if isinstance(node.ctx, ast.Load):
                self._load(node.id)
            return
        if isinstance(node, ast.NamedExpr):
            self._expr(node.value)
            owner = self._nearest_non_comprehension()
            for name in _target_names(node.target):
                if owner.kind == "module":
                    self.defines.setdefault(name)
                else:
                    owner.bound.add(name)
            return
        if isinstance(node, ast.Lambda):
            for default in list(node.args.defaults) + [d for d in node.args.kw_defaults if d]:
                self._expr(default)
            bound = self._param_names(node.args) | _local_bindings([node.body])
            self.scopes.append(_Scope("function", bound))
            self._expr(node.body)
            self.scopes.pop()
            return
        if isinstance(node, _COMPREHENSIONS):
            self._comprehension(node)
            return
        if isinstance(node, (ast.Attribute, ast.Subscript)):
            # stores and deletes through attributes/subscripts read the base
            self._expr(node.value)
            if isinstance(node, ast.Subscript):
                self._expr(node.slice)
            return
        for child in ast.iter_child_nodes(node):
            if isinstance(child, ast.expr):
                self._expr(child)
            elif isinstance(child, (ast.comprehension, ast.keyword, ast.FormattedValue)):
                self._expr_children(child)

    def _expr_children(self, node: ast.AST) -> None:
        for child in ast.iter_child_nodes(node):
            if isinstance(child, ast.expr):
                self._expr(child)

    @staticmethod
    def _param_names(args: ast.arguments) -> set[str]:
        names = {a.arg for a in args.posonlyargs + args.args + args.kwonlyargs}
        if args.vararg:
            names.add(args.vararg.arg)
        if args.kwarg:
            names.add(args.kwarg.arg)
        return names

    def _comprehension(self, node: ast.AST) -> None:
        generators = node.generators
        self._expr(generators[0].iter)  # first iterable evaluates outside
        bound: set[str] = set()
        for gen in generators:
            bound.update(_target_names(gen.target))
        self.scopes.append(_Scope("comprehension", bound))
        for i, gen in enumerate(generators):
            if i > 0:
                self._expr(gen.iter)
            for cond in gen.ifs:
                self._expr(cond)
        if isinstance(node, ast.DictComp):
            self._expr(node.key)
            self._expr(node.value)
        else:
            self._expr(node.elt)
        self.scopes.pop()

    # -- assignment targets ---------------------------------------------------

    def _bind_target(self, target: ast.expr) -> None:
        if isinstance(target, ast.Name):
            self._define(target.id)
        elif isinstance(target, (ast.Tuple, ast.List)):
            for elt in target.elts:
                self._bind_target(elt)
        elif isinstance(target, ast.Starred):
            self._bind_target(target.value)
        elif isinstance(target, (ast.Attribute, ast.Subscript)):
            self._expr(target)  # use of the base; no binding

    # -- statements ------------------------------------------------------------

    def _stmt(self, node: ast.stmt) -> None:
        if isinstance(node, ast.Assign):
            self._expr(node.value)
            for target in node.targets:
                self._bind_target(target)
        elif isinstance(node, ast.AugAssign):
            self._expr(node.value)
            if isinstance(node.target, ast.Name):
                if self._at_module():
                    self.uses.setdefault(node.target.id)
                    self._define(node.target.id)
                else:
                    self._load(node.target.id)
            else:
                self._expr(node.target)
        elif isinstance(node, ast.AnnAssign):
            self._expr(node.annotation)
            if node.value is not None:
                self._expr(node.value)
                self._bind_target(node.target)
            elif isinstance(node.target, (ast.Attribute, ast.Subscript)):
                self._expr(node.target)
        elif isinstance(node, (ast.For, ast.AsyncFor)):
            self._expr(node.iter)
            self._bind_target(node.target)
            for stmt in node.body + node.orelse:
                self._stmt(stmt)
        elif isinstance(node, (ast.With, ast.AsyncWith)):
            for item in node.items:
                self._expr(item.context_expr)
                if item.optional_vars is not None:
                    self._bind_target(item.optional_vars)
            for stmt in node.body:
                self._stmt(stmt)
        elif isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            for dec in node.decorator_list:
                self._expr(dec)
            for default in list(node.args.defaults) + [d for d in node.args.kw_defaults if d]:
                self._expr(default)
            for ann in self._annotations(node):
                self._expr(ann)
            self._define(node.name)
            # the def's own name binds in the containing scope, not in its body:
            # a module-level recursive call reads the module namespace
            bound = self._param_names(node.args) | _local_bindings(node.body)
            scope = _Scope(
                "function",
                bound
                - _declarations(node.body, ast.Global)
                - _declarations(node.body, ast.Nonlocal),
                globals=_declarations(node.body, ast.Global),
                nonlocals=_declarations(node.body, ast.Nonlocal),
            )
            self.scopes.append(scope)
            for stmt in node.body:
                self._stmt(stmt)
            self.scopes.pop()
        elif isinstance(node, ast.ClassDef):
            for dec in node.decorator_list:
                self._expr(dec)
            for base in node.bases:
                self._expr(base)
            for kw in node.keywords:
                self._expr(kw.value)
            self._define(node.name)
            scope = _Scope("class", _local_bindings(node.body))
            self.scopes.append(scope)
            for stmt in node.body:
                self._stmt(stmt)
            self.scopes.pop()
        elif isinstance(node, ast.Import):
            for alias in node.names:
                self._define(alias.asname or alias.name.split(".")[0])
        elif isinstance(node, ast.ImportFrom):
            for alias in node.names:
                if alias.name == "*":
                    self.diagnostics.append(
                        Diagnostic(
                            line=node.lineno,
                            message=f"wildcard import from {node.module or '.'} binds an unknowable set; ignored",
                        )
                    )
                else:
                    self._define(alias.asname or alias.name)
        elif isinstance(node, ast.Delete):
            for target in node.targets:
                if isinstance(target, ast.Name):
                    if self._at_module():
                        self.deletes.setdefault(target.id)
                else:
                    self._expr(target)
        elif isinstance(node, ast.Try):
            for stmt in node.body:
                self._stmt(stmt)
            for handler in node.handlers:
                self._expr(handler.type)
                for stmt in handler.body:
                    self._stmt(stmt)
            for stmt in node.orelse + node.finalbody:
                self._stmt(stmt)
        elif isinstance(node, (ast.If, ast.While)):
            self._expr(node.test)
            for stmt in node.body + node.orelse:
                self._stmt(stmt)
        elif isinstance(node, ast.Match):
            self._expr(node.subject)
            for case in node.cases:
                if self._at_module():
                    for name in _match_captures(case.pattern):
                        self.defines.setdefault(name)
                if case.guard is not None:
                    self._expr(case.guard)
                for stmt in case.body:
                    self._stmt(stmt)
        elif isinstance(node, (ast.Global, ast.Nonlocal, ast.Pass, ast.Break, ast.Continue)):
            pass
        else:
            # Expr, Return, Raise, Assert, ... : visit child expressions
            for child in ast.iter_child_nodes(node):
                if isinstance(child, ast.expr):
                    self._expr(child)
                elif isinstance(child, ast.stmt):
                    self._stmt(child)

    @staticmethod
    def _annotations(node) -> list[ast.expr]:
        args = node.args
        anns = [a.annotation for a in args.posonlyargs + args.args + args.kwonlyargs]
        anns.append(args.vararg.annotation if args.vararg else None)
        anns.append(args.kwarg.annotation if args.kwarg else None)
        anns.append(node.returns)
        return [a for a in anns if a is not None]


def analyze_cell(cell_id: str, source: str) -> DefUseRecord:
    """Best-effort def/use/delete sets for one cell's source."""
    stmts, diags = _parse_blocks(source)
    analyzer = _Analyzer()
    analyzer.diagnostics.extend(diags)
    for stmt in stmts:
        analyzer._stmt(stmt)
    return DefUseRecord(
        cell_id=cell_id,
        defines=tuple(analyzer.defines),
        uses=tuple(analyzer.uses),
        deletes=tuple(analyzer.deletes),
        diagnostics=tuple(analyzer.diagnostics),
    )


# ---------------------------------------------------------------------------
# Notebook-wide variable index


class VarState(str, Enum):
    USED_NOT_IN_MEMORY = "used_not_in_memory"  # red
    USED_IN_MEMORY = "used_in_memory"          # purple
    NOT_USED = "not_used"                      # black


@dataclass(frozen=True)
class VariableRecord:
    name: str
    defined_in: tuple[str, ...] = ()
    used_in: tuple[str, ...] = ()
    deleted_in: tuple[str, ...] = ()


@dataclass
class VariableIndex:
    """Name -> provenance map over every code cell, in notebook order."""

    entries: dict[str, VariableRecord] = field(default_factory=dict)
    records: dict[str, DefUseRecord] = field(default_factory=dict)
    diagnostics: tuple[tuple[str, int, str], ...] = ()

    def used_in_cell(self, cell_id: str) -> tuple[str, ...]:
        """Indexed variables a given cell uses."""
        rec = self.records.get(cell_id)
        if rec is None:
            return ()
        return tuple(n for n in rec.uses if n in self.entries)

    def defined_in_cell(self, cell_id: str) -> tuple[str, ...]:
        rec = self.records.get(cell_id)
        if rec is None:
            return ()
        return tuple(rec.defines)


def build_variable_index(nb: Notebook) -> VariableIndex:
    """Aggregate analyze_cell over all code cells.

    Markdown/raw cells contribute nothing. The index keys on names defined
    in at least one code cell; defined_in/used_in/deleted_in are ordered by
    notebook position.
    """
    records: dict[str, DefUseRecord] = {}
    diagnostics: list[tuple[str, int, str]] = []
    ordered_cells = [c for c in nb.cells if c.kind == "code" and c.id]
    for cell in ordered_cells:
        rec = analyze_cell(cell.id, cell.source)
        records[cell.id] = rec
        diagnostics.extend((cell.id, d.line, d.message) for d in rec.diagnostics)

    defined: dict[str, None] = {}
    for cell in ordered_cells:
        for name in records[cell.id].defines:
            defined.setdefault(name)

    entries: dict[str, VariableRecord] = {}
    for name in defined:
        entries[name] = VariableRecord(
            name=name,
            defined_in=tuple(c.id for c in ordered_cells if name in records[c.id].defines),
            used_in=tuple(c.id for c in ordered_cells if name in records[c.id].uses),
            deleted_in=tuple(c.id for c in ordered_cells if name in records[c.id].deletes),
        )
    return VariableIndex(entries=entries, records=records, diagnostics=tuple(diagnostics))


def variable_status(rec: VariableRecord, session=None) -> VarState:
    """Status color of one variable given the session's memory set.

    Used somewhere but not in memory -> red; used and in memory -> purple;
    used nowhere -> black regardless of memory.
    """
    memory = getattr(session, "memory", None) or set()
    if not rec.used_in:
        return VarState.NOT_USED
    if rec.name in memory:
        return VarState.USED_IN_MEMORY
    return VarState.USED_NOT_IN_MEMORY
