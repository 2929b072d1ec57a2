"""Decoder for the WebAssembly binary subset."""
from __future__ import annotations

import logging
from typing import Callable, Optional, TypeVar

from . import opcodes as ops
from .wasm import (
    BLOCK_EMPTY,
    FUNCREF,
    HEADER,
    I32,
    I64,
    MAGIC,
    MAX_LOCALS,
    SECTION_ORDER,
    VALTYPE_NAMES,
    VERSION,
    BadMagic,
    ElementSegment,
    Export,
    Function,
    FunctionType,
    GlobalSpec,
    Import,
    Instruction,
    MalformedNesting,
    MemorySpec,
    Module,
    TableSpec,
    TruncatedInput,
    UnsupportedOpcode,
    UnsupportedSection,
    ValidationFailure,
    read_sleb,
    read_uleb,
    validate_module,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")


class Reader:
    """Cursor over ``data[pos:end]``; every read is bounds checked."""

    def __init__(self, data: bytes, pos: int = 0, end: Optional[int] = None):
        self.data = data
        self.pos = pos
        self.end = len(data) if end is None else end

    def byte(self) -> int:
        if self.pos >= self.end:
            raise TruncatedInput(f"unexpected end of input at {self.pos}")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise TruncatedInput(f"need {n} bytes at {self.pos}, input ends at {self.end}")
        raw = self.data[self.pos:self.pos + n]
        self.pos += n
        return raw

    def u32(self) -> int:
        value, self.pos = read_uleb(self.data, self.pos, 32, self.end)
        return value

    def s32(self) -> int:
        value, self.pos = read_sleb(self.data, self.pos, 32, self.end)
        return value

    def s64(self) -> int:
        value, self.pos = read_sleb(self.data, self.pos, 64, self.end)
        return value

    def vector(self, item: Callable[["Reader"], T]) -> list[T]:
        return [item(self) for _ in range(self.u32())]

    def name(self) -> str:
        raw = self.take(self.u32())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ValidationFailure("names must be valid UTF-8") from e

    def valtype(self) -> int:
        t = self.byte()
        if t not in VALTYPE_NAMES:
            raise ValidationFailure(f"unknown value type 0x{t:02x}")
        return t

    def limits(self) -> tuple[int, Optional[int]]:
        flag = self.byte()
        if flag == 0:
            return self.u32(), None
        if flag == 1:
            return self.u32(), self.u32()
        raise ValidationFailure(f"bad limits flag {flag}")

    def const_expr(self, opcode: int) -> int:
        op = self.byte()
        if op != opcode:
            raise ValidationFailure("constant expression must be a single const of the declared type")
        value = self.s32() if opcode == 0x41 else self.s64()
        if self.byte() != ops.END:
            raise ValidationFailure("constant expression must end after one const")
        return value

    def at_end(self) -> bool:
        return self.pos >= self.end


def _functype(r: Reader) -> FunctionType:
    form = r.byte()
    if form != 0x60:
        raise ValidationFailure(f"function type form 0x{form:02x}")
    return FunctionType(tuple(r.vector(Reader.valtype)), tuple(r.vector(Reader.valtype)))


def _import(r: Reader) -> Import:
    module, name = r.name(), r.name()
    kind = r.byte()
    if kind != 0:
        raise ValidationFailure("only function imports are supported")
    return Import(module, name, r.u32())


def _table(r: Reader) -> TableSpec:
    if r.byte() != FUNCREF:
        raise ValidationFailure("table element type must be funcref")
    return TableSpec(*r.limits())


def _global(r: Reader) -> GlobalSpec:
    vt = r.valtype()
    mut = r.byte()
    if mut not in (0, 1):
        raise ValidationFailure("global mutability flag must be 0 or 1")
    if vt not in (I32, I64):
        raise ValidationFailure("globals must be i32 or i64")
    return GlobalSpec(vt, bool(mut), r.const_expr(0x41 if vt == I32 else 0x42))


def _export(r: Reader) -> Export:
    return Export(r.name(), r.byte(), r.u32())


def _element(r: Reader) -> ElementSegment:
    flags = r.u32()
    if flags != 0:
        raise ValidationFailure("only active element segments for table 0 are supported")
    offset = r.const_expr(0x41)
    if offset < 0:
        raise ValidationFailure("element offset must be non-negative")
    return ElementSegment(offset, tuple(r.vector(Reader.u32)))


def _instruction(r: Reader, code_base: int) -> Instruction:
    offset = r.pos - code_base
    opcode = r.byte()
    info = ops.BY_CODE.get(opcode)
    if info is None:
        raise UnsupportedOpcode(opcode, offset)
    kind = info.imm
    if kind == ops.NONE:
        imm: tuple[int, ...] = ()
    elif kind == ops.BLOCKTYPE:
        bt = r.byte()
        if bt not in (BLOCK_EMPTY, I32, I64):
            raise ValidationFailure(f"unsupported block type 0x{bt:02x}")
        imm = (bt,)
    elif kind in (ops.LABEL, ops.FUNC, ops.LOCAL, ops.GLOBAL):
        imm = (r.u32(),)
    elif kind == ops.LABEL_TABLE:
        targets = r.vector(Reader.u32)
        imm = (*targets, r.u32())
    elif kind == ops.CALL_INDIRECT:
        imm = (r.u32(), r.byte())
    elif kind == ops.MEMARG:
        imm = (r.u32(), r.u32())
    elif kind == ops.I32:
        imm = (r.s32(),)
    else:
        imm = (r.s64(),)
    return Instruction(opcode, imm, offset)


def _code(r: Reader, code_base: int) -> tuple[tuple[int, ...], tuple[Instruction, ...]]:
    size = r.u32()
    body = Reader(r.data, r.pos, r.pos + size)
    if body.end > r.end:
        raise TruncatedInput("function body runs past the code section")

    local_types: list[int] = []
    for _ in range(body.u32()):
        n = body.u32()
        t = body.valtype()
        if len(local_types) + n > MAX_LOCALS:
            raise ValidationFailure("too many locals")
        local_types.extend([t] * n)

    instructions: list[Instruction] = []
    nesting: list[int] = []
    while True:
        ins = _instruction(body, code_base)
        instructions.append(ins)
        if ins.opcode in ops.OPENERS:
            nesting.append(ins.opcode)
        elif ins.opcode == ops.ELSE:
            if not nesting or nesting[-1] != ops.IF:
                raise MalformedNesting(f"else without if at offset {ins.byte_offset}")
            nesting[-1] = ops.ELSE
        elif ins.opcode == ops.END:
            if not nesting:
                break
            nesting.pop()
    if not body.at_end():
        raise ValidationFailure("function body has bytes after its final end")
    r.pos = body.end
    return tuple(local_types), tuple(instructions)


def parse_module(data: bytes) -> Module:
    """Decode and validate a module of the supported subset."""
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic("not a WebAssembly module (bad magic)")
    if len(data) < 8:
        raise TruncatedInput("header truncated")
    if data[4:8] != VERSION:
        raise BadMagic(f"unsupported version {data[4:8].hex()}")

    r = Reader(data, len(HEADER))
    types: list[FunctionType] = []
    imports: list[Import] = []
    func_types: list[int] = []
    tables: list[TableSpec] = []
    memories: list[MemorySpec] = []
    globals_: list[GlobalSpec] = []
    exports: list[Export] = []
    start: Optional[int] = None
    elements: list[ElementSegment] = []
    codes: list[tuple[tuple[int, ...], tuple[Instruction, ...]]] = []

    last_id = 0
    while not r.at_end():
        section_id = r.byte()
        if section_id not in SECTION_ORDER:
            raise UnsupportedSection(section_id)
        if section_id <= last_id:
            raise ValidationFailure(f"section {section_id} out of order")
        last_id = section_id
        size = r.u32()
        s = Reader(data, r.pos, r.pos + size)
        if s.end > len(data):
            raise TruncatedInput(f"section {section_id} runs past end of input")

        if section_id == 1:
            types = s.vector(_functype)
        elif section_id == 2:
            imports = s.vector(_import)
        elif section_id == 3:
            func_types = s.vector(Reader.u32)
        elif section_id == 4:
            tables = s.vector(_table)
        elif section_id == 5:
            memories = [MemorySpec(*s.limits()) for _ in range(s.u32())]
        elif section_id == 6:
            globals_ = s.vector(_global)
        elif section_id == 7:
            exports = s.vector(_export)
        elif section_id == 8:
            start = s.u32()
        elif section_id == 9:
            elements = s.vector(_element)
        elif section_id == 10:
            code_base = s.pos
            codes = [_code(s, code_base) for _ in range(s.u32())]

        if not s.at_end():
            raise ValidationFailure(f"section {section_id} size does not match its contents")
        r.pos = s.end

    if len(codes) != len(func_types):
        raise ValidationFailure("function and code section counts differ")

    functions = []
    for i, (type_index, (local_types, body)) in enumerate(zip(func_types, codes)):
        if type_index >= len(types):
            raise ValidationFailure(f"function {i} type index out of bounds")
        functions.append(Function(type_index, types[type_index], local_types, body))

    module = Module(
        types=tuple(types),
        imports=tuple(imports),
        functions=tuple(functions),
        tables=tuple(tables),
        memories=tuple(memories),
        globals=tuple(globals_),
        exports=tuple(exports),
        start=start,
        elements=tuple(elements),
    )
    validate_module(module)
    logger.debug(f"parsed module: {len(functions)} functions, {len(data)} bytes")
    return module
