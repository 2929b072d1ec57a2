"""In-memory model of a WebAssembly subset module, its validation and its
canonical binary encoding.

Byte offsets of instructions are relative to the first byte of the code
section contents (the byte after the section id and size).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

from . import opcodes as ops

logger = logging.getLogger(__name__)

MAGIC = b"\x00asm"
VERSION = b"\x01\x00\x00\x00"
HEADER = MAGIC + VERSION

I32, I64, F32, F64 = 0x7F, 0x7E, 0x7D, 0x7C
FUNCREF = 0x70
BLOCK_EMPTY = 0x40
VALTYPE_NAMES = {I32: "i32", I64: "i64", F32: "f32", F64: "f64"}
VALTYPES_BY_NAME = {v: k for k, v in VALTYPE_NAMES.items()}
# floats only pass through as raw bit patterns
WIDTH = {I32: 32, I64: 64, F32: 32, F64: 64}

PAGE_SIZE = 65536
MAX_PAGES = 65536
MAX_LOCALS = 50000

EXPORT_FUNC, EXPORT_TABLE, EXPORT_MEMORY, EXPORT_GLOBAL = 0, 1, 2, 3

ASSERT_IMPORT = ("env", "tcpa_assert")

SECTION_ORDER = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10)


class WasmError(Exception):
    """Base error for module decoding, assembling and validation."""


class BadMagic(WasmError):
    pass


class UnsupportedSection(WasmError):
    def __init__(self, section_id: int):
        super().__init__(f"unsupported section id {section_id}")
        self.section_id = section_id


class UnsupportedOpcode(WasmError):
    def __init__(self, opcode: int, offset: int = -1):
        super().__init__(f"unsupported opcode 0x{opcode:02x} at offset {offset}")
        self.opcode = opcode
        self.offset = offset


class TruncatedInput(WasmError):
    pass


class IntegerTooWide(TruncatedInput):
    """A LEB128 integer does not fit its declared width."""


class ValidationFailure(WasmError):
    def __init__(self, invariant: str, function: Optional[int] = None, instruction: Optional[int] = None):
        super().__init__(f"validation failed: {invariant}")
        self.invariant = invariant
        # defined-function and instruction index of the offending instruction, when there is one
        self.function = function
        self.instruction = instruction


class MalformedNesting(WasmError):
    pass


# ---------------------------------------------------------------------------
# LEB128
# ---------------------------------------------------------------------------

def _max_leb_bytes(bits: int) -> int:
    return (bits + 6) // 7


def read_uleb(data: bytes, pos: int, bits: int = 32, limit: Optional[int] = None) -> tuple[int, int]:
    end = len(data) if limit is None else limit
    result = shift = 0
    for _ in range(_max_leb_bytes(bits)):
        if pos >= end:
            raise TruncatedInput(f"LEB128 runs past end of input at {pos}")
        b = data[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        shift += 7
        if not b & 0x80:
            if result >> bits:
                raise IntegerTooWide(f"unsigned LEB128 wider than {bits} bits")
            return result, pos
    raise IntegerTooWide(f"unsigned LEB128 longer than {_max_leb_bytes(bits)} bytes")


def read_sleb(data: bytes, pos: int, bits: int = 32, limit: Optional[int] = None) -> tuple[int, int]:
    end = len(data) if limit is None else limit
    result = shift = 0
    for _ in range(_max_leb_bytes(bits)):
        if pos >= end:
            raise TruncatedInput(f"LEB128 runs past end of input at {pos}")
        b = data[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        shift += 7
        if not b & 0x80:
            if b & 0x40:
                result -= 1 << shift
            if not -(1 << (bits - 1)) <= result < (1 << (bits - 1)):
                raise IntegerTooWide(f"signed LEB128 wider than {bits} bits")
            return result, pos
    raise IntegerTooWide(f"signed LEB128 longer than {_max_leb_bytes(bits)} bytes")


def uleb(value: int) -> bytes:
    if value < 0:
        raise ValueError("uleb of a negative value")
    out = bytearray()
    while True:
        b = value & 0x7F
        value >>= 7
        if value:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def sleb(value: int) -> bytes:
    out = bytearray()
    while True:
        b = value & 0x7F
        value >>= 7
        if (value == 0 and not b & 0x40) or (value == -1 and b & 0x40):
            out.append(b)
            return bytes(out)
        out.append(b | 0x80)


def to_signed(value: int, bits: int) -> int:
    value &= (1 << bits) - 1
    return value - (1 << bits) if value >> (bits - 1) else value


# ---------------------------------------------------------------------------
# Module model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FunctionType:
    params: tuple[int, ...] = ()
    results: tuple[int, ...] = ()

    def __str__(self) -> str:
        p = " ".join(VALTYPE_NAMES[t] for t in self.params)
        r = " ".join(VALTYPE_NAMES[t] for t in self.results)
        return f"[{p}] -> [{r}]"


@dataclass(frozen=True)
class Instruction:
    opcode: int
    immediates: tuple[int, ...] = ()
    byte_offset: int = field(default=-1, compare=False)

    @property
    def info(self) -> ops.OpInfo:
        return ops.BY_CODE[self.opcode]

    @property
    def name(self) -> str:
        return self.info.name

    def __str__(self) -> str:
        if not self.immediates:
            return self.name
        return f"{self.name} {' '.join(str(i) for i in self.immediates)}"


@dataclass(frozen=True)
class Function:
    type_index: int
    type: FunctionType
    locals: tuple[int, ...]
    body: tuple[Instruction, ...]

    @property
    def num_locals(self) -> int:
        return len(self.type.params) + len(self.locals)

    def local_type(self, index: int) -> int:
        params = self.type.params
        return params[index] if index < len(params) else self.locals[index - len(params)]

    @cached_property
    def cfg(self):
        from .cfg import build_cfg

        return build_cfg(self)


@dataclass(frozen=True)
class Import:
    module: str
    name: str
    type_index: int


@dataclass(frozen=True)
class TableSpec:
    initial: int
    maximum: Optional[int] = None


@dataclass(frozen=True)
class MemorySpec:
    initial: int
    maximum: Optional[int] = None

    @property
    def size_bytes(self) -> int:
        return self.initial * PAGE_SIZE


@dataclass(frozen=True)
class GlobalSpec:
    valtype: int
    mutable: bool
    init: int


@dataclass(frozen=True)
class Export:
    name: str
    kind: int
    index: int


@dataclass(frozen=True)
class ElementSegment:
    offset: int
    func_indices: tuple[int, ...]


@dataclass(frozen=True)
class Module:
    types: tuple[FunctionType, ...] = ()
    imports: tuple[Import, ...] = ()
    functions: tuple[Function, ...] = ()
    tables: tuple[TableSpec, ...] = ()
    memories: tuple[MemorySpec, ...] = ()
    globals: tuple[GlobalSpec, ...] = ()
    exports: tuple[Export, ...] = ()
    start: Optional[int] = None
    elements: tuple[ElementSegment, ...] = ()

    @property
    def num_imported_functions(self) -> int:
        return len(self.imports)

    @property
    def num_functions(self) -> int:
        return len(self.imports) + len(self.functions)

    def function_type(self, func_index: int) -> FunctionType:
        if func_index < len(self.imports):
            return self.types[self.imports[func_index].type_index]
        return self.functions[func_index - len(self.imports)].type

    def defined(self, func_index: int) -> Function:
        return self.functions[func_index - len(self.imports)]

    def is_assert_import(self, func_index: int) -> bool:
        return func_index < len(self.imports)

    @property
    def export_map(self) -> dict[str, int]:
        """Exported function name -> function index."""
        return {e.name: e.index for e in self.exports if e.kind == EXPORT_FUNC}

    @property
    def table(self) -> tuple[Optional[int], ...]:
        """Function index stored in each table slot; ``None`` for empty slots."""
        if not self.tables:
            return ()
        slots: list[Optional[int]] = [None] * self.tables[0].initial
        for seg in self.elements:
            for i, f in enumerate(seg.func_indices):
                slots[seg.offset + i] = f
        return tuple(slots)

    @property
    def memory_size(self) -> int:
        return self.memories[0].size_bytes if self.memories else 0


def count_instructions(m: Module) -> int:
    """Decoded instructions across all function bodies, every ``end`` included."""
    return sum(len(f.body) for f in m.functions)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def control_depths(body: tuple[Instruction, ...]) -> list[int]:
    """Label depth in effect at each instruction; raises on unbalanced nesting."""
    depths = []
    stack: list[int] = []
    for i, ins in enumerate(body):
        op = ins.opcode
        depths.append(len(stack))
        if op in ops.OPENERS:
            stack.append(op)
        elif op == ops.ELSE:
            if not stack or stack[-1] != ops.IF:
                raise MalformedNesting(f"else without if at instruction {i}")
            stack[-1] = ops.ELSE
        elif op == ops.END:
            if not stack:
                if i != len(body) - 1:
                    raise MalformedNesting(f"end closes the function early at instruction {i}")
            else:
                stack.pop()
    if stack:
        raise MalformedNesting("unclosed block at end of function")
    if not body or body[-1].opcode != ops.END:
        raise MalformedNesting("function body does not end with end")
    return depths


def validate_module(m: Module) -> None:
    def fail(msg: str) -> None:
        raise ValidationFailure(msg)

    ntypes = len(m.types)
    for t in m.types:
        if len(t.results) > 1:
            fail("multi-value results are not supported")
    for imp in m.imports:
        if (imp.module, imp.name) != ASSERT_IMPORT:
            fail(f"only env.tcpa_assert may be imported, got {imp.module}.{imp.name}")
        if imp.type_index >= ntypes:
            fail("import type index out of bounds")
        if m.types[imp.type_index] != FunctionType((I32,), ()):
            fail("env.tcpa_assert must have type [i32] -> []")
    if len(m.imports) > 1:
        fail("at most one import is allowed")
    if len(m.tables) > 1:
        fail("at most one table is allowed")
    if len(m.memories) > 1:
        fail("at most one memory is allowed")
    for mem in m.memories:
        if mem.initial > MAX_PAGES or (mem.maximum is not None and not mem.initial <= mem.maximum <= MAX_PAGES):
            fail("memory limits out of range")
    for tab in m.tables:
        if tab.maximum is not None and tab.maximum < tab.initial:
            fail("table limits out of range")

    nfuncs = m.num_functions
    for seg in m.elements:
        if not m.tables:
            fail("element segment without a table")
        if seg.offset + len(seg.func_indices) > m.tables[0].initial:
            fail("element segment does not fit the table")
        for f in seg.func_indices:
            if f >= nfuncs:
                fail("element function index out of bounds")

    for g in m.globals:
        if g.valtype not in (I32, I64):
            fail("globals must be i32 or i64")

    names = set()
    for e in m.exports:
        if e.name in names:
            fail(f"duplicate export name {e.name!r}")
        names.add(e.name)
        bound = {EXPORT_FUNC: nfuncs, EXPORT_TABLE: len(m.tables),
                 EXPORT_MEMORY: len(m.memories), EXPORT_GLOBAL: len(m.globals)}.get(e.kind)
        if bound is None:
            fail(f"unknown export kind {e.kind}")
        if e.index >= bound:
            fail(f"export {e.name!r} index out of bounds")

    if m.start is not None:
        if m.start >= nfuncs:
            fail("start function index out of bounds")
        if m.function_type(m.start) != FunctionType():
            fail("start function must have type [] -> []")

    for fi, f in enumerate(m.functions):
        if f.type_index >= ntypes:
            fail(f"function {fi} type index out of bounds")
        if m.types[f.type_index] != f.type:
            fail(f"function {fi} type does not match its type index")
        if f.num_locals > MAX_LOCALS:
            fail(f"function {fi} declares too many locals")
        _validate_body(m, fi + len(m.imports), f)


def _validate_body(m: Module, func_index: int, f: Function) -> None:
    defined = func_index - len(m.imports)

    def fail(msg: str, at: Optional[int] = None) -> None:
        where = "" if at is None else f" instruction {at} ({f.body[at]})"
        raise ValidationFailure(f"function {func_index}{where}: {msg}", defined, at)

    depths = control_depths(f.body)
    for i, (ins, depth) in enumerate(zip(f.body, depths)):
        kind = ins.info.imm
        imm = ins.immediates
        if kind == ops.LOCAL and imm[0] >= f.num_locals:
            fail(f"local index {imm[0]} out of bounds", i)
        elif kind == ops.GLOBAL:
            if imm[0] >= len(m.globals):
                fail(f"global index {imm[0]} out of bounds", i)
            if ins.name == "global.set" and not m.globals[imm[0]].mutable:
                fail(f"global {imm[0]} is immutable", i)
        elif kind == ops.FUNC and imm[0] >= m.num_functions:
            fail(f"call target {imm[0]} out of bounds", i)
        elif kind == ops.CALL_INDIRECT:
            if imm[0] >= len(m.types):
                fail("call_indirect type index out of bounds", i)
            if not m.tables or imm[1] != 0:
                fail("call_indirect without a table", i)
        elif kind == ops.LABEL and imm[0] > depth:
            fail(f"branch depth {imm[0]} out of bounds", i)
        elif kind == ops.LABEL_TABLE and max(imm) > depth:
            fail("br_table depth out of bounds", i)
        elif kind == ops.BLOCKTYPE and imm[0] not in (BLOCK_EMPTY, I32, I64):
            fail("unsupported block type", i)
        elif kind == ops.MEMARG:
            if not m.memories:
                fail("memory access without a memory", i)
            natural = ins.info.size.bit_length() - 1
            if imm[0] > natural:
                fail("alignment larger than natural", i)

    checker = _StackChecker(m, f)
    for i, ins in enumerate(f.body):
        try:
            checker.step(ins)
        except _StackMismatch as e:
            fail(str(e), i)


class _StackMismatch(Exception):
    pass


@dataclass
class _ControlFrame:
    opcode: int
    end_types: tuple[int, ...]
    height: int
    unreachable: bool = False

    @property
    def label_types(self) -> tuple[int, ...]:
        return () if self.opcode == ops.LOOP else self.end_types


_NUMERIC = {"i32": I32, "i64": I64}


def _type_name(t: Optional[int]) -> str:
    return "any" if t is None else VALTYPE_NAMES[t]


class _StackChecker:
    """Operand stack typing of one function body.

    ``None`` on the stack is a value of unknown type, which only appears
    after an unconditional branch made the rest of a block unreachable.
    """

    def __init__(self, m: Module, f: Function):
        self.m = m
        self.f = f
        self.values: list[Optional[int]] = []
        self.frames = [_ControlFrame(ops.BLOCK, f.type.results, 0)]

    def push(self, t: Optional[int]) -> None:
        self.values.append(t)

    def push_all(self, types: tuple[int, ...]) -> None:
        self.values.extend(types)

    def pop(self, expect: Optional[int] = None) -> Optional[int]:
        frame = self.frames[-1]
        if len(self.values) == frame.height:
            if frame.unreachable:
                return expect
            raise _StackMismatch(f"operand stack underflow, expected {_type_name(expect)}")
        actual = self.values.pop()
        if actual is None:
            return expect
        if expect is not None and actual != expect:
            raise _StackMismatch(f"type mismatch, expected {_type_name(expect)} but found {_type_name(actual)}")
        return actual

    def pop_all(self, types: tuple[int, ...]) -> None:
        for t in reversed(types):
            self.pop(t)

    def label(self, depth: int) -> tuple[int, ...]:
        return self.frames[-1 - depth].label_types

    def unreachable(self) -> None:
        frame = self.frames[-1]
        del self.values[frame.height:]
        frame.unreachable = True

    def close(self, frame: _ControlFrame) -> None:
        self.pop_all(frame.end_types)
        if len(self.values) != frame.height:
            raise _StackMismatch(f"{len(self.values) - frame.height} values left on the operand stack")

    def step(self, ins: Instruction) -> None:
        op = ins.opcode
        info = ins.info
        imm = ins.immediates
        vt = _NUMERIC.get(info.vt)

        if op in ops.OPENERS:
            if op == ops.IF:
                self.pop(I32)
            end_types = () if imm[0] == BLOCK_EMPTY else (imm[0],)
            self.frames.append(_ControlFrame(op, end_types, len(self.values)))
        elif op == ops.ELSE:
            frame = self.frames[-1]
            self.close(frame)
            frame.opcode = ops.ELSE
            frame.unreachable = False
        elif op == ops.END:
            frame = self.frames[-1]
            if frame.opcode == ops.IF and frame.end_types:
                raise _StackMismatch("if with a result needs an else")
            self.close(frame)
            self.frames.pop()
            self.push_all(frame.end_types)
        elif op == ops.BR:
            self.pop_all(self.label(imm[0]))
            self.unreachable()
        elif op == ops.BR_IF:
            self.pop(I32)
            types = self.label(imm[0])
            self.pop_all(types)
            self.push_all(types)
        elif op == ops.BR_TABLE:
            self.pop(I32)
            types = self.label(imm[-1])
            if any(self.label(d) != types for d in imm[:-1]):
                raise _StackMismatch("br_table targets carry different types")
            self.pop_all(types)
            self.unreachable()
        elif op == ops.RETURN:
            self.pop_all(self.f.type.results)
            self.unreachable()
        elif op == ops.UNREACHABLE:
            self.unreachable()
        elif op == ops.NOP:
            pass
        elif op in (ops.CALL, ops.CALL_INDIRECT_OP):
            if op == ops.CALL:
                ft = self.m.function_type(imm[0])
            else:
                self.pop(I32)
                ft = self.m.types[imm[0]]
            self.pop_all(ft.params)
            self.push_all(ft.results)
        elif op == ops.DROP:
            self.pop()
        elif op == ops.SELECT:
            self.pop(I32)
            first = self.pop()
            second = self.pop(first)
            self.push(first if first is not None else second)
        elif info.imm == ops.LOCAL:
            t = self.f.local_type(imm[0])
            if info.name == "local.get":
                self.push(t)
            else:
                self.pop(t)
                if info.name == "local.tee":
                    self.push(t)
        elif info.imm == ops.GLOBAL:
            t = self.m.globals[imm[0]].valtype
            if info.name == "global.get":
                self.push(t)
            else:
                self.pop(t)
        elif info.op == "const":
            self.push(vt)
        elif info.op == "load":
            self.pop(I32)
            self.push(vt)
        elif info.op == "store":
            self.pop(vt)
            self.pop(I32)
        elif info.op == "eqz":
            self.pop(vt)
            self.push(I32)
        elif info.op in ops.COMPARE_OPS:
            self.pop(vt)
            self.pop(vt)
            self.push(I32)
        elif info.op in ops.BINARY_OPS:
            self.pop(vt)
            self.pop(vt)
            self.push(vt)
        else:
            raise _StackMismatch(f"no typing rule for {info.name}")


# ---------------------------------------------------------------------------
# Canonical encoding
# ---------------------------------------------------------------------------

def _vec(items: list[bytes]) -> bytes:
    return uleb(len(items)) + b"".join(items)


def _name(s: str) -> bytes:
    raw = s.encode("utf-8")
    return uleb(len(raw)) + raw


def _limits(initial: int, maximum: Optional[int]) -> bytes:
    if maximum is None:
        return b"\x00" + uleb(initial)
    return b"\x01" + uleb(initial) + uleb(maximum)


def encode_instruction(ins: Instruction) -> bytes:
    kind = ins.info.imm
    imm = ins.immediates
    out = bytes([ins.opcode])
    if kind == ops.NONE:
        return out
    if kind == ops.BLOCKTYPE:
        return out + bytes([imm[0]])
    if kind in (ops.LABEL, ops.FUNC, ops.LOCAL, ops.GLOBAL):
        return out + uleb(imm[0])
    if kind == ops.LABEL_TABLE:
        targets = imm[:-1]
        return out + uleb(len(targets)) + b"".join(uleb(t) for t in targets) + uleb(imm[-1])
    if kind == ops.CALL_INDIRECT:
        return out + uleb(imm[0]) + bytes([imm[1]])
    if kind == ops.MEMARG:
        return out + uleb(imm[0]) + uleb(imm[1])
    if kind == ops.I32:
        return out + sleb(to_signed(imm[0], 32))
    if kind == ops.I64:
        return out + sleb(to_signed(imm[0], 64))
    raise WasmError(f"cannot encode immediates of kind {kind}")


def _encode_locals(local_types: tuple[int, ...]) -> bytes:
    groups: list[list[int]] = []
    for t in local_types:
        if groups and groups[-1][1] == t:
            groups[-1][0] += 1
        else:
            groups.append([1, t])
    return _vec([uleb(n) + bytes([t]) for n, t in groups])


def _section(section_id: int, payload: bytes) -> bytes:
    return bytes([section_id]) + uleb(len(payload)) + payload


def encode_module_with_offsets(m: Module) -> tuple[bytes, list[list[int]]]:
    """Canonical bytes plus, per defined function, the byte offset of each instruction."""
    out = bytearray(HEADER)
    if m.types:
        out += _section(1, _vec([
            b"\x60" + _vec([bytes([p]) for p in t.params]) + _vec([bytes([r]) for r in t.results])
            for t in m.types
        ]))
    if m.imports:
        out += _section(2, _vec([
            _name(i.module) + _name(i.name) + b"\x00" + uleb(i.type_index) for i in m.imports
        ]))
    if m.functions:
        out += _section(3, _vec([uleb(f.type_index) for f in m.functions]))
    if m.tables:
        out += _section(4, _vec([bytes([FUNCREF]) + _limits(t.initial, t.maximum) for t in m.tables]))
    if m.memories:
        out += _section(5, _vec([_limits(mm.initial, mm.maximum) for mm in m.memories]))
    if m.globals:
        out += _section(6, _vec([
            bytes([g.valtype, 1 if g.mutable else 0])
            + encode_instruction(Instruction(0x41 if g.valtype == I32 else 0x42, (g.init,)))
            + bytes([ops.END])
            for g in m.globals
        ]))
    if m.exports:
        out += _section(7, _vec([_name(e.name) + bytes([e.kind]) + uleb(e.index) for e in m.exports]))
    if m.start is not None:
        out += _section(8, uleb(m.start))
    if m.elements:
        out += _section(9, _vec([
            b"\x00" + encode_instruction(Instruction(0x41, (seg.offset,))) + bytes([ops.END])
            + _vec([uleb(f) for f in seg.func_indices])
            for seg in m.elements
        ]))

    offsets: list[list[int]] = []
    if m.functions:
        payload = bytearray(uleb(len(m.functions)))
        for f in m.functions:
            body = bytearray(_encode_locals(f.locals))
            rel = []
            for ins in f.body:
                rel.append(len(body))
                body += encode_instruction(ins)
            size = uleb(len(body))
            base = len(payload) + len(size)
            offsets.append([base + r for r in rel])
            payload += size + body
        out += _section(10, bytes(payload))
    return bytes(out), offsets


def encode_module(m: Module) -> bytes:
    return encode_module_with_offsets(m)[0]
