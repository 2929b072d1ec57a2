"""Text subset assembler and source maps.

The accepted text is the flat (non-folded) WebAssembly text format restricted
to the binary subset::

    module   := "(" "module" [$id] field* ")"
    field    := "(" "type" [$id] "(" "func" param* result* ")" ")"
              | "(" "import" "\"env\"" "\"tcpa_assert\"" "(" "func" [$id] typeuse ")" ")"
              | "(" "func" [$id] inline-export* typeuse local* instr* ")"
              | "(" "table" [$id] n [m] "funcref" ")"
              | "(" "memory" [$id] inline-export* n [m] ")"
              | "(" "global" [$id] inline-export* gtype "(" ("i32.const"|"i64.const") int ")" ")"
              | "(" "export" string "(" ("func"|"memory"|"global"|"table") idx ")" ")"
              | "(" "start" idx ")"
              | "(" "elem" "(" "i32.const" int ")" ["func"] idx* ")"
    typeuse  := ["(" "type" idx ")"] param* result*
    param    := "(" "param" $id valtype ")" | "(" "param" valtype* ")"
    local    := "(" "local" $id valtype ")" | "(" "local" valtype* ")"
    gtype    := valtype | "(" "mut" valtype ")"
    instr    := mnemonic immediate*
              | ("block"|"loop"|"if") [$label] ["(" "result" valtype ")"]
              | "else" [$label] | "end" [$label]
              | "call_indirect" "(" "type" idx ")"
              | load/store mnemonic ["offset=" n] ["align=" n]

Comments are ``;; to end of line`` and ``(; block ;)``. Function bodies do not
spell their final ``end``; it is emitted implicitly and mapped to the
function's closing parenthesis. Numeric literals accept a sign, ``0x`` hex and
``_`` separators. The type section lists explicit ``(type)`` declarations
first, then every other signature in order of first use. Output is a pure
function of the input text.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from . import opcodes as ops
from .wasm import (
    ASSERT_IMPORT,
    BLOCK_EMPTY,
    EXPORT_FUNC,
    EXPORT_GLOBAL,
    EXPORT_MEMORY,
    EXPORT_TABLE,
    I32,
    VALTYPES_BY_NAME,
    ElementSegment,
    Export,
    Function,
    FunctionType,
    GlobalSpec,
    Import,
    Instruction,
    MemorySpec,
    Module,
    TableSpec,
    ValidationFailure,
    WasmError,
    encode_module_with_offsets,
    to_signed,
    validate_module,
)

logger = logging.getLogger(__name__)


class AssemblySyntaxError(WasmError):
    """Malformed text; carries the 1-based line and column."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{line}:{column}: {message}")
        self.message = message
        self.line = line
        self.column = column


class UnsupportedConstruct(WasmError):
    def __init__(self, construct: str, line: int, column: int):
        super().__init__(f"{line}:{column}: unsupported construct: {construct}")
        self.construct = construct
        self.line = line
        self.column = column


# ---------------------------------------------------------------------------
# Source maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SourceLocation:
    line: int
    column: int

    def __str__(self) -> str:
        return f"{self.line}:{self.column}"


class SourceMap:
    """Bijection between instruction byte offsets and source locations.

    Offsets are relative to the start of the code section contents, the same
    convention as ``Instruction.byte_offset``.
    """

    def __init__(self, entries: list[tuple[int, int, int]]):
        self.entries: tuple[tuple[int, int, int], ...] = tuple(sorted(entries))
        self._by_offset: dict[int, SourceLocation] = {}
        self._by_location: dict[SourceLocation, int] = {}
        for offset, line, col in self.entries:
            loc = SourceLocation(line, col)
            if offset in self._by_offset:
                raise ValueError(f"offset {offset} mapped twice")
            if loc in self._by_location:
                raise ValueError(f"location {loc} mapped twice")
            self._by_offset[offset] = loc
            self._by_location[loc] = offset

    def location_of(self, offset: int) -> SourceLocation:
        return self._by_offset[offset]

    def offset_of(self, location: SourceLocation) -> int:
        return self._by_location[location]

    def covers(self, module: Module) -> bool:
        return all(ins.byte_offset in self._by_offset for f in module.functions for ins in f.body)

    def __contains__(self, offset: object) -> bool:
        return offset in self._by_offset

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SourceMap) and self.entries == other.entries

    def __hash__(self) -> int:
        return hash(self.entries)

    def to_text(self) -> str:
        return "".join(f"{o}\t{line}\t{col}\n" for o, line, col in self.entries)

    @classmethod
    def from_text(cls, text: str) -> "SourceMap":
        entries = []
        for n, raw in enumerate(text.splitlines(), start=1):
            if not raw.strip():
                continue
            parts = raw.split("\t")
            if len(parts) != 3 or not all(p.isdigit() for p in parts):
                raise ValueError(f"source map line {n} is not offset<TAB>line<TAB>col")
            entries.append((int(parts[0]), int(parts[1]), int(parts[2])))
        return cls(entries)

    @classmethod
    def synthetic(cls, module: Module) -> "SourceMap":
        """Map for a module without source: line = function index, column = instruction index."""
        entries = []
        for fi, f in enumerate(module.functions):
            for ii, ins in enumerate(f.body):
                entries.append((ins.byte_offset, module.num_imported_functions + fi, ii))
        return cls(entries)


# ---------------------------------------------------------------------------
# Reader: tokens and s-expressions
# ---------------------------------------------------------------------------

@dataclass
class Atom:
    text: str
    line: int
    col: int
    quoted: bool = False


@dataclass
class SList:
    items: list["Node"]
    line: int
    col: int
    end_line: int = 0
    end_col: int = 0

    @property
    def head(self) -> Optional[str]:
        if self.items and isinstance(self.items[0], Atom) and not self.items[0].quoted:
            return self.items[0].text
        return None


Node = Union[Atom, SList]

_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "\\": "\\", '"': '"', "'": "'"}
_DELIMS = set("() \t\r\n;\"")


def _tokens(source: str) -> Iterator[tuple[str, str, int, int]]:
    """Yield (kind, text, line, col) with kind in ``( ) atom string``."""
    i, line, col = 0, 1, 1
    n = len(source)

    def advance(k: int) -> None:
        nonlocal i, line, col
        for _ in range(k):
            if source[i] == "\n":
                line, col = line + 1, 1
            else:
                col += 1
            i += 1

    while i < n:
        ch = source[i]
        if ch in " \t\r\n":
            advance(1)
        elif source.startswith(";;", i):
            while i < n and source[i] != "\n":
                advance(1)
        elif source.startswith("(;", i):
            start = (line, col)
            depth = 0
            while True:
                if i >= n:
                    raise AssemblySyntaxError("unterminated block comment", *start)
                if source.startswith("(;", i):
                    depth += 1
                    advance(2)
                elif source.startswith(";)", i):
                    depth -= 1
                    advance(2)
                    if depth == 0:
                        break
                else:
                    advance(1)
        elif ch in "()":
            yield ch, ch, line, col
            advance(1)
        elif ch == '"':
            start_line, start_col = line, col
            advance(1)
            out = []
            while True:
                if i >= n or source[i] == "\n":
                    raise AssemblySyntaxError("unterminated string", start_line, start_col)
                c = source[i]
                if c == '"':
                    advance(1)
                    break
                if c == "\\":
                    nxt = source[i + 1:i + 2]
                    if nxt in _ESCAPES:
                        out.append(_ESCAPES[nxt])
                        advance(2)
                        continue
                    hexpair = source[i + 1:i + 3]
                    if re.fullmatch(r"[0-9a-fA-F]{2}", hexpair):
                        out.append(chr(int(hexpair, 16)))
                        advance(3)
                        continue
                    raise AssemblySyntaxError("bad string escape", line, col)
                out.append(c)
                advance(1)
            yield "string", "".join(out), start_line, start_col
        elif ch == ";":
            raise AssemblySyntaxError("stray ';'", line, col)
        else:
            start_line, start_col, j = line, col, i
            while j < n and source[j] not in _DELIMS:
                j += 1
            text = source[i:j]
            advance(j - i)
            yield "atom", text, start_line, start_col


def read_sexprs(source: str) -> list[Node]:
    top: list[Node] = []
    stack: list[SList] = []
    for kind, text, line, col in _tokens(source):
        if kind == "(":
            stack.append(SList([], line, col))
        elif kind == ")":
            if not stack:
                raise AssemblySyntaxError("unbalanced ')'", line, col)
            done = stack.pop()
            done.end_line, done.end_col = line, col
            (stack[-1].items if stack else top).append(done)
        else:
            node = Atom(text, line, col, quoted=kind == "string")
            (stack[-1].items if stack else top).append(node)
    if stack:
        open_list = stack[-1]
        raise AssemblySyntaxError("unclosed '('", open_list.line, open_list.col)
    return top


_INT_RE = re.compile(r"[+-]?(0x[0-9a-fA-F](_?[0-9a-fA-F])*|[0-9](_?[0-9])*)")


def _int(atom: Node, what: str = "integer") -> int:
    if not isinstance(atom, Atom) or atom.quoted or not _INT_RE.fullmatch(atom.text):
        line, col = atom.line, atom.col
        raise AssemblySyntaxError(f"expected {what}", line, col)
    return int(atom.text.replace("_", ""), 0)


def _is_id(node: Node) -> bool:
    return isinstance(node, Atom) and not node.quoted and node.text.startswith("$") and len(node.text) > 1


def _is_index(node: Node) -> bool:
    return _is_id(node) or (isinstance(node, Atom) and not node.quoted and bool(_INT_RE.fullmatch(node.text)))


def _valtype(node: Node) -> int:
    if isinstance(node, Atom) and not node.quoted and node.text in ("i32", "i64"):
        return VALTYPES_BY_NAME[node.text]
    if isinstance(node, Atom) and node.text in ("f32", "f64"):
        raise UnsupportedConstruct(f"{node.text} value type", node.line, node.col)
    raise AssemblySyntaxError("expected value type i32 or i64", node.line, node.col)


_UNSUPPORTED_PREFIXES = ("f32.", "f64.", "i32.", "i64.", "memory.", "table.", "ref.", "v128.", "data.", "elem.")
_UNSUPPORTED_FIELDS = {"data", "rec", "tag"}


# ---------------------------------------------------------------------------
# Assembler
# ---------------------------------------------------------------------------

@dataclass
class _FuncDecl:
    node: SList
    name: Optional[str]
    type_index: int
    param_names: list[Optional[str]]
    local_types: list[int]
    local_names: list[Optional[str]]
    body_start: int


@dataclass
class _State:
    types: list[FunctionType] = field(default_factory=list)
    type_names: dict[str, int] = field(default_factory=dict)
    func_names: dict[str, int] = field(default_factory=dict)
    global_names: dict[str, int] = field(default_factory=dict)
    globals: list[GlobalSpec] = field(default_factory=list)


class _Assembler:
    def __init__(self, module_node: SList):
        self.node = module_node
        self.s = _State()
        self.imports: list[Import] = []
        self.decls: list[_FuncDecl] = []
        self.tables: list[TableSpec] = []
        self.memories: list[MemorySpec] = []
        self.exports: list[Export] = []
        self.start: Optional[int] = None
        self.elements: list[ElementSegment] = []
        # mnemonic token of every emitted instruction, per function
        self.tokens: list[list[Atom]] = []
        # deferred until every function has an index
        self.pending_exports: list[tuple[str, int, Node, Atom]] = []
        self.pending_start: Optional[Node] = None
        self.pending_elems: list[tuple[int, list[Node]]] = []

    # -- helpers ---------------------------------------------------------

    def _type_of(self, ft: FunctionType) -> int:
        for i, t in enumerate(self.s.types):
            if t == ft:
                return i
        self.s.types.append(ft)
        return len(self.s.types) - 1

    def _resolve(self, node: Node, names: dict[str, int], bound: int, what: str) -> int:
        if _is_id(node):
            if node.text not in names:
                raise AssemblySyntaxError(f"undefined {what} {node.text}", node.line, node.col)
            return names[node.text]
        value = _int(node, f"{what} index")
        if not 0 <= value < bound:
            raise AssemblySyntaxError(f"{what} index {value} out of range", node.line, node.col)
        return value

    def _typeuse(self, items: list[Node], pos: int, allow_names: bool) -> tuple[int, list[Optional[str]], int]:
        """Parse ``(type i)? (param)* (result)*``; returns (type index, param names, next position)."""
        explicit: Optional[int] = None
        params: list[int] = []
        names: list[Optional[str]] = []
        results: list[int] = []
        if pos < len(items) and isinstance(items[pos], SList) and items[pos].head == "type":
            ref = items[pos]
            if len(ref.items) != 2:
                raise AssemblySyntaxError("expected (type index)", ref.line, ref.col)
            explicit = self._resolve(ref.items[1], self.s.type_names, len(self.s.types), "type")
            pos += 1
        while pos < len(items) and isinstance(items[pos], SList) and items[pos].head == "param":
            p = items[pos]
            if len(p.items) == 3 and _is_id(p.items[1]):
                if not allow_names:
                    raise AssemblySyntaxError("named parameter not allowed here", p.line, p.col)
                names.append(p.items[1].text)
                params.append(_valtype(p.items[2]))
            else:
                for t in p.items[1:]:
                    names.append(None)
                    params.append(_valtype(t))
            pos += 1
        while pos < len(items) and isinstance(items[pos], SList) and items[pos].head == "result":
            r = items[pos]
            results.extend(_valtype(t) for t in r.items[1:])
            pos += 1
        if len(results) > 1:
            raise UnsupportedConstruct("multiple results", items[pos - 1].line, items[pos - 1].col)
        ft = FunctionType(tuple(params), tuple(results))
        if explicit is not None:
            declared = self.s.types[explicit]
            if (params or results) and declared != ft:
                raise AssemblySyntaxError("inline signature does not match (type)", self.node.line, self.node.col)
            if not names:
                names = [None] * len(declared.params)
            return explicit, names, pos
        return self._type_of(ft), names, pos

    def _inline_exports(self, items: list[Node], pos: int, kind: int, index: int) -> int:
        while pos < len(items) and isinstance(items[pos], SList) and items[pos].head == "export":
            e = items[pos]
            if len(e.items) != 2 or not isinstance(e.items[1], Atom) or not e.items[1].quoted:
                raise AssemblySyntaxError('expected (export "name")', e.line, e.col)
            self.exports.append(Export(e.items[1].text, kind, index))
            pos += 1
        return pos

    def _optional_id(self, items: list[Node], pos: int, names: dict[str, int], index: int) -> tuple[Optional[str], int]:
        if pos < len(items) and _is_id(items[pos]):
            name = items[pos].text
            if name in names:
                raise AssemblySyntaxError(f"duplicate identifier {name}", items[pos].line, items[pos].col)
            names[name] = index
            return name, pos + 1
        return None, pos

    # -- module fields ---------------------------------------------------

    def assemble(self) -> Module:
        items = self.node.items[1:]
        if items and _is_id(items[0]):
            items = items[1:]
        fields = []
        for item in items:
            if not isinstance(item, SList) or item.head is None:
                raise AssemblySyntaxError("expected a module field", item.line, item.col)
            if item.head in _UNSUPPORTED_FIELDS:
                raise UnsupportedConstruct(f"({item.head})", item.line, item.col)
            if item.head not in ("type", "import", "func", "table", "memory", "global", "export", "start", "elem"):
                raise AssemblySyntaxError(f"unknown module field {item.head}", item.line, item.col)
            fields.append(item)

        for f in fields:
            if f.head == "type":
                self._type_field(f)
        for f in fields:
            if f.head == "import":
                self._import_field(f)
        nimports = len(self.imports)
        for f in fields:
            if f.head == "func":
                self._func_header(f, nimports + len(self.decls))
        for f in fields:
            if f.head == "table":
                self._table_field(f)
            elif f.head == "memory":
                self._memory_field(f)
            elif f.head == "global":
                self._global_field(f)
            elif f.head == "export":
                self._export_field(f)
            elif f.head == "start":
                if self.pending_start is not None:
                    raise AssemblySyntaxError("multiple start fields", f.line, f.col)
                if len(f.items) != 2:
                    raise AssemblySyntaxError("expected (start index)", f.line, f.col)
                self.pending_start = f.items[1]
            elif f.head == "elem":
                self._elem_field(f)

        nfuncs = nimports + len(self.decls)
        for name, kind, ref, _ in self.pending_exports:
            if kind == EXPORT_FUNC:
                index = self._resolve(ref, self.s.func_names, nfuncs, "function")
            elif kind == EXPORT_GLOBAL:
                index = self._resolve(ref, self.s.global_names, len(self.s.globals), "global")
            elif kind == EXPORT_MEMORY:
                index = self._resolve(ref, {}, len(self.memories), "memory")
            else:
                index = self._resolve(ref, {}, len(self.tables), "table")
            self.exports.append(Export(name, kind, index))
        if self.pending_start is not None:
            self.start = self._resolve(self.pending_start, self.s.func_names, nfuncs, "function")
        for offset, refs in self.pending_elems:
            indices = tuple(self._resolve(r, self.s.func_names, nfuncs, "function") for r in refs)
            self.elements.append(ElementSegment(offset, indices))

        functions = [self._func_body(d) for d in self.decls]
        return Module(
            types=tuple(self.s.types),
            imports=tuple(self.imports),
            functions=tuple(functions),
            tables=tuple(self.tables),
            memories=tuple(self.memories),
            globals=tuple(self.s.globals),
            exports=tuple(self.exports),
            start=self.start,
            elements=tuple(self.elements),
        )

    def _type_field(self, f: SList) -> None:
        items = f.items[1:]
        name = None
        if items and _is_id(items[0]):
            name = items[0].text
            items = items[1:]
        if len(items) != 1 or not isinstance(items[0], SList) or items[0].head != "func":
            raise AssemblySyntaxError("expected (type (func ...))", f.line, f.col)
        inner = items[0].items
        params: list[int] = []
        results: list[int] = []
        for node in inner[1:]:
            if not isinstance(node, SList) or node.head not in ("param", "result"):
                raise AssemblySyntaxError("expected (param) or (result)", node.line, node.col)
            vals = node.items[1:]
            if node.head == "param" and len(vals) == 2 and _is_id(vals[0]):
                vals = vals[1:]
            (params if node.head == "param" else results).extend(_valtype(v) for v in vals)
        if len(results) > 1:
            raise UnsupportedConstruct("multiple results", f.line, f.col)
        self.s.types.append(FunctionType(tuple(params), tuple(results)))
        if name is not None:
            if name in self.s.type_names:
                raise AssemblySyntaxError(f"duplicate identifier {name}", f.line, f.col)
            self.s.type_names[name] = len(self.s.types) - 1

    def _import_field(self, f: SList) -> None:
        items = f.items
        if len(items) != 4 or not all(isinstance(x, Atom) and x.quoted for x in items[1:3]):
            raise AssemblySyntaxError('expected (import "module" "name" (func ...))', f.line, f.col)
        module, name = items[1].text, items[2].text
        if (module, name) != ASSERT_IMPORT:
            raise UnsupportedConstruct(f"import {module}.{name}", f.line, f.col)
        desc = items[3]
        if not isinstance(desc, SList) or desc.head != "func":
            raise UnsupportedConstruct("non-function import", f.line, f.col)
        index = len(self.imports)
        _, pos = self._optional_id(desc.items, 1, self.s.func_names, index)
        type_index, _, pos = self._typeuse(desc.items, pos, allow_names=True)
        if pos != len(desc.items):
            node = desc.items[pos]
            raise AssemblySyntaxError("unexpected item in import", node.line, node.col)
        self.imports.append(Import(module, name, type_index))

    def _func_header(self, f: SList, index: int) -> None:
        items = f.items
        name, pos = self._optional_id(items, 1, self.s.func_names, index)
        pos = self._inline_exports(items, pos, EXPORT_FUNC, index)
        if pos < len(items) and isinstance(items[pos], SList) and items[pos].head == "import":
            raise UnsupportedConstruct("inline import", items[pos].line, items[pos].col)
        type_index, param_names, pos = self._typeuse(items, pos, allow_names=True)
        local_types: list[int] = []
        local_names: list[Optional[str]] = []
        while pos < len(items) and isinstance(items[pos], SList) and items[pos].head == "local":
            loc = items[pos]
            if len(loc.items) == 3 and _is_id(loc.items[1]):
                local_names.append(loc.items[1].text)
                local_types.append(_valtype(loc.items[2]))
            else:
                for t in loc.items[1:]:
                    local_names.append(None)
                    local_types.append(_valtype(t))
            pos += 1
        self.decls.append(_FuncDecl(f, name, type_index, param_names, local_types, local_names, pos))

    def _limits(self, items: list[Node], node: SList) -> tuple[int, Optional[int]]:
        if not items or len(items) > 2:
            raise AssemblySyntaxError("expected limits", node.line, node.col)
        initial = _int(items[0], "limit")
        maximum = _int(items[1], "limit") if len(items) == 2 else None
        if initial < 0 or (maximum is not None and maximum < 0):
            raise AssemblySyntaxError("limits must be non-negative", node.line, node.col)
        return initial, maximum

    def _table_field(self, f: SList) -> None:
        items = f.items[1:]
        if items and _is_id(items[0]):
            items = items[1:]
        if not items or not isinstance(items[-1], Atom) or items[-1].text != "funcref":
            raise UnsupportedConstruct("table element type other than funcref", f.line, f.col)
        self.tables.append(TableSpec(*self._limits(items[:-1], f)))

    def _memory_field(self, f: SList) -> None:
        index = len(self.memories)
        _, pos = self._optional_id(f.items, 1, {}, index)
        pos = self._inline_exports(f.items, pos, EXPORT_MEMORY, index)
        self.memories.append(MemorySpec(*self._limits(f.items[pos:], f)))

    def _global_field(self, f: SList) -> None:
        index = len(self.s.globals)
        _, pos = self._optional_id(f.items, 1, self.s.global_names, index)
        pos = self._inline_exports(f.items, pos, EXPORT_GLOBAL, index)
        if len(f.items) - pos != 2:
            raise AssemblySyntaxError("expected global type and initializer", f.line, f.col)
        gt, init = f.items[pos], f.items[pos + 1]
        if isinstance(gt, SList) and gt.head == "mut" and len(gt.items) == 2:
            vt, mutable = _valtype(gt.items[1]), True
        else:
            vt, mutable = _valtype(gt), False
        expected = "i32.const" if vt == I32 else "i64.const"
        if not isinstance(init, SList) or init.head != expected or len(init.items) != 2:
            raise AssemblySyntaxError(f"initializer must be ({expected} value)", f.line, f.col)
        self.s.globals.append(GlobalSpec(vt, mutable, _const_value(init.items[1], 32 if vt == I32 else 64)))

    def _export_field(self, f: SList) -> None:
        items = f.items
        if len(items) != 3 or not isinstance(items[1], Atom) or not items[1].quoted:
            raise AssemblySyntaxError('expected (export "name" (kind index))', f.line, f.col)
        desc = items[2]
        kinds = {"func": EXPORT_FUNC, "memory": EXPORT_MEMORY, "global": EXPORT_GLOBAL, "table": EXPORT_TABLE}
        if not isinstance(desc, SList) or desc.head not in kinds or len(desc.items) != 2:
            raise AssemblySyntaxError("expected (func|memory|global|table index)", f.line, f.col)
        self.pending_exports.append((items[1].text, kinds[desc.head], desc.items[1], items[1]))

    def _elem_field(self, f: SList) -> None:
        items = f.items[1:]
        if not items or not isinstance(items[0], SList) or items[0].head != "i32.const" or len(items[0].items) != 2:
            raise UnsupportedConstruct("element segment without (i32.const offset)", f.line, f.col)
        offset = _int(items[0].items[1], "element offset")
        if offset < 0:
            raise AssemblySyntaxError("element offset must be non-negative", f.line, f.col)
        refs = items[1:]
        if refs and isinstance(refs[0], Atom) and refs[0].text == "func":
            refs = refs[1:]
        for r in refs:
            if not _is_index(r):
                raise AssemblySyntaxError("expected function index", r.line, r.col)
        self.pending_elems.append((offset, refs))

    # -- function bodies -------------------------------------------------

    def _func_body(self, d: _FuncDecl) -> Function:
        ft = self.s.types[d.type_index]
        local_names: dict[str, int] = {}
        for i, name in enumerate(d.param_names + d.local_names):
            if name is None:
                continue
            if name in local_names:
                raise AssemblySyntaxError(f"duplicate local {name}", d.node.line, d.node.col)
            local_names[name] = i
        nlocals = len(ft.params) + len(d.local_types)
        body = _BodyAssembler(self, d, local_names, nlocals).run()
        self.tokens.append([tok for _, tok in body])
        return Function(d.type_index, ft, tuple(d.local_types), tuple(ins for ins, _ in body))


def _const_value(node: Node, bits: int) -> int:
    value = _int(node, f"i{bits} literal")
    if not -(1 << (bits - 1)) <= value < (1 << bits):
        raise AssemblySyntaxError(f"literal out of range for i{bits}", node.line, node.col)
    return to_signed(value, bits)


class _BodyAssembler:
    def __init__(self, asm: _Assembler, decl: _FuncDecl, local_names: dict[str, int], nlocals: int):
        self.asm = asm
        self.decl = decl
        self.items = decl.node.items
        self.pos = decl.body_start
        self.local_names = local_names
        self.nlocals = nlocals
        # open blocks: (opener opcode, label name)
        self.labels: list[tuple[int, Optional[str]]] = []
        self.out: list[tuple[Instruction, Atom]] = []

    def _next(self) -> Optional[Node]:
        return self.items[self.pos] if self.pos < len(self.items) else None

    def _take_atom(self, what: str, at: Atom) -> Atom:
        node = self._next()
        if not isinstance(node, Atom) or node.quoted:
            raise AssemblySyntaxError(f"expected {what}", at.line, at.col)
        self.pos += 1
        return node

    def _label_depth(self, node: Atom) -> int:
        if _is_id(node):
            for depth, (_, name) in enumerate(reversed(self.labels)):
                if name == node.text:
                    return depth
            raise AssemblySyntaxError(f"undefined label {node.text}", node.line, node.col)
        depth = _int(node, "label")
        if not 0 <= depth <= len(self.labels):
            raise AssemblySyntaxError(f"label depth {depth} out of range", node.line, node.col)
        return depth

    def _blocktype(self) -> int:
        node = self._next()
        if isinstance(node, SList) and node.head == "param":
            raise UnsupportedConstruct("block parameters", node.line, node.col)
        if isinstance(node, SList) and node.head == "type":
            raise UnsupportedConstruct("block type index", node.line, node.col)
        if isinstance(node, SList) and node.head == "result":
            self.pos += 1
            if len(node.items) == 1:
                return BLOCK_EMPTY
            if len(node.items) > 2:
                raise UnsupportedConstruct("multiple block results", node.line, node.col)
            return _valtype(node.items[1])
        return BLOCK_EMPTY

    def _memarg(self, info: ops.OpInfo) -> tuple[int, int]:
        offset, align = 0, info.size
        node = self._next()
        if isinstance(node, Atom) and node.text.startswith("offset="):
            offset = _int(Atom(node.text[7:], node.line, node.col), "offset")
            if not 0 <= offset < (1 << 32):
                raise AssemblySyntaxError("offset out of range", node.line, node.col)
            self.pos += 1
            node = self._next()
        if isinstance(node, Atom) and node.text.startswith("align="):
            align = _int(Atom(node.text[6:], node.line, node.col), "alignment")
            if align <= 0 or align & (align - 1) or align > info.size:
                raise AssemblySyntaxError("alignment must be a power of two no larger than the access", node.line, node.col)
            self.pos += 1
        return align.bit_length() - 1, offset

    def run(self) -> list[tuple[Instruction, Atom]]:
        while self.pos < len(self.items):
            node = self.items[self.pos]
            self.pos += 1
            if isinstance(node, SList):
                raise UnsupportedConstruct("folded instruction", node.line, node.col)
            if node.quoted:
                raise AssemblySyntaxError("unexpected string", node.line, node.col)
            self._instruction(node)
        if self.labels:
            raise AssemblySyntaxError("unclosed block at end of function",
                                      self.decl.node.end_line, self.decl.node.end_col)
        closing = Atom(")", self.decl.node.end_line, self.decl.node.end_col)
        self.out.append((Instruction(ops.END), closing))
        return self.out

    def _instruction(self, tok: Atom) -> None:
        name = tok.text
        info = ops.BY_NAME.get(name)
        if info is None:
            if name.startswith(_UNSUPPORTED_PREFIXES) or name in ("return_call", "return_call_indirect", "select_t"):
                raise UnsupportedConstruct(name, tok.line, tok.col)
            raise AssemblySyntaxError(f"unknown instruction {name}", tok.line, tok.col)
        kind = info.imm
        imm: tuple[int, ...] = ()
        s = self.asm.s

        if kind == ops.BLOCKTYPE:
            label = None
            nxt = self._next()
            if _is_id(nxt):
                label = nxt.text
                self.pos += 1
            imm = (self._blocktype(),)
            self.labels.append((info.code, label))
        elif info.code in (ops.ELSE, ops.END):
            if not self.labels:
                raise AssemblySyntaxError(f"{name} without an open block", tok.line, tok.col)
            opener, label = self.labels[-1]
            if info.code == ops.ELSE:
                if opener != ops.IF:
                    raise AssemblySyntaxError("else outside of if", tok.line, tok.col)
                self.labels[-1] = (ops.ELSE, label)
            else:
                self.labels.pop()
            nxt = self._next()
            if _is_id(nxt):
                if nxt.text != label:
                    raise AssemblySyntaxError(f"mismatched label {nxt.text}", nxt.line, nxt.col)
                self.pos += 1
        elif kind == ops.LABEL:
            imm = (self._label_depth(self._take_atom("label", tok)),)
        elif kind == ops.LABEL_TABLE:
            depths = []
            while _is_index(self._next()):
                depths.append(self._label_depth(self.items[self.pos]))
                self.pos += 1
            if not depths:
                raise AssemblySyntaxError("br_table needs at least a default label", tok.line, tok.col)
            imm = tuple(depths)
        elif kind == ops.FUNC:
            ref = self._take_atom("function index", tok)
            imm = (self.asm._resolve(ref, s.func_names, len(self.asm.imports) + len(self.asm.decls), "function"),)
        elif kind == ops.CALL_INDIRECT:
            nxt = self._next()
            if isinstance(nxt, Atom) and _is_index(nxt):
                if _int(nxt, "table") != 0:
                    raise UnsupportedConstruct("table other than 0", nxt.line, nxt.col)
                self.pos += 1
                nxt = self._next()
            if not isinstance(nxt, SList) or nxt.head != "type" or len(nxt.items) != 2:
                raise UnsupportedConstruct("call_indirect without (type index)", tok.line, tok.col)
            self.pos += 1
            imm = (self.asm._resolve(nxt.items[1], s.type_names, len(s.types), "type"), 0)
        elif kind == ops.LOCAL:
            ref = self._take_atom("local index", tok)
            imm = (self.asm._resolve(ref, self.local_names, self.nlocals, "local"),)
        elif kind == ops.GLOBAL:
            ref = self._take_atom("global index", tok)
            index = self.asm._resolve(ref, s.global_names, len(s.globals), "global")
            if name == "global.set" and not s.globals[index].mutable:
                raise AssemblySyntaxError(f"global {ref.text} is immutable", ref.line, ref.col)
            imm = (index,)
        elif kind == ops.MEMARG:
            if not self.asm.memories:
                raise AssemblySyntaxError("memory access without a memory", tok.line, tok.col)
            imm = self._memarg(info)
        elif kind in (ops.I32, ops.I64):
            imm = (_const_value(self._take_atom("literal", tok), 32 if kind == ops.I32 else 64),)
        self.out.append((Instruction(info.code, imm), tok))


def _module_node(top: list[Node]) -> Optional[SList]:
    if not top:
        return None
    first = top[0]
    if not isinstance(first, SList) or first.head != "module":
        raise AssemblySyntaxError("expected (module ...)", first.line, first.col)
    if len(top) > 1:
        raise AssemblySyntaxError("text after the module", top[1].line, top[1].col)
    return first


def assemble(source: str) -> tuple[Module, bytes, SourceMap]:
    """Assemble text into a module whose instructions carry their byte offsets."""
    node = _module_node(read_sexprs(source))
    if node is None:
        module = Module()
        return module, encode_module_with_offsets(module)[0], SourceMap([])

    asm = _Assembler(node)
    module = asm.assemble()
    try:
        validate_module(module)
    except ValidationFailure as e:
        at = node
        if e.function is not None and e.instruction is not None:
            at = asm.tokens[e.function][e.instruction]
        raise AssemblySyntaxError(str(e), at.line, at.col) from e

    data, offsets = encode_module_with_offsets(module)
    entries = []
    functions = []
    for f, tokens, offs in zip(module.functions, asm.tokens, offsets):
        body = []
        for ins, tok, off in zip(f.body, tokens, offs):
            entries.append((off, tok.line, tok.col))
            body.append(Instruction(ins.opcode, ins.immediates, off))
        functions.append(Function(f.type_index, f.type, f.locals, tuple(body)))
    placed = Module(module.types, module.imports, tuple(functions), module.tables, module.memories,
                    module.globals, module.exports, module.start, module.elements)
    logger.debug(f"assembled {len(functions)} functions into {len(data)} bytes")
    return placed, data, SourceMap(entries)


def assemble_text(source: str) -> tuple[bytes, SourceMap]:
    """Reference builder: identical text always yields identical bytes."""
    _, data, source_map = assemble(source)
    return data, source_map
