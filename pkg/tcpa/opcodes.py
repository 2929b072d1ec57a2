"""Opcode table of the supported WebAssembly subset.

Floating point opcodes are deliberately absent: decoding one raises
``UnsupportedOpcode``.
"""
from dataclasses import dataclass
from typing import Optional

# immediate shapes
NONE = "none"
BLOCKTYPE = "blocktype"
LABEL = "label"
LABEL_TABLE = "label_table"
FUNC = "func"
CALL_INDIRECT = "call_indirect"
LOCAL = "local"
GLOBAL = "global"
MEMARG = "memarg"
I32 = "i32"
I64 = "i64"


@dataclass(frozen=True)
class OpInfo:
    code: int
    name: str
    imm: str = NONE
    # value type of arithmetic, comparison and memory operations
    vt: Optional[str] = None
    # semantic operator name shared with the symbolic layer ("add", "lt_s", ...)
    op: Optional[str] = None
    # bytes touched by loads and stores
    size: int = 0
    signed: bool = False


_TABLE: list[OpInfo] = [
    OpInfo(0x00, "unreachable"),
    OpInfo(0x01, "nop"),
    OpInfo(0x02, "block", BLOCKTYPE),
    OpInfo(0x03, "loop", BLOCKTYPE),
    OpInfo(0x04, "if", BLOCKTYPE),
    OpInfo(0x05, "else"),
    OpInfo(0x0B, "end"),
    OpInfo(0x0C, "br", LABEL),
    OpInfo(0x0D, "br_if", LABEL),
    OpInfo(0x0E, "br_table", LABEL_TABLE),
    OpInfo(0x0F, "return"),
    OpInfo(0x10, "call", FUNC),
    OpInfo(0x11, "call_indirect", CALL_INDIRECT),
    OpInfo(0x1A, "drop"),
    OpInfo(0x1B, "select"),
    OpInfo(0x20, "local.get", LOCAL),
    OpInfo(0x21, "local.set", LOCAL),
    OpInfo(0x22, "local.tee", LOCAL),
    OpInfo(0x23, "global.get", GLOBAL),
    OpInfo(0x24, "global.set", GLOBAL),
    OpInfo(0x41, "i32.const", I32, vt="i32", op="const"),
    OpInfo(0x42, "i64.const", I64, vt="i64", op="const"),
]

_LOADS = [
    (0x28, "i32.load", "i32", 4, False),
    (0x29, "i64.load", "i64", 8, False),
    (0x2C, "i32.load8_s", "i32", 1, True),
    (0x2D, "i32.load8_u", "i32", 1, False),
    (0x2E, "i32.load16_s", "i32", 2, True),
    (0x2F, "i32.load16_u", "i32", 2, False),
    (0x30, "i64.load8_s", "i64", 1, True),
    (0x31, "i64.load8_u", "i64", 1, False),
    (0x32, "i64.load16_s", "i64", 2, True),
    (0x33, "i64.load16_u", "i64", 2, False),
    (0x34, "i64.load32_s", "i64", 4, True),
    (0x35, "i64.load32_u", "i64", 4, False),
]
for _code, _name, _vt, _size, _signed in _LOADS:
    _TABLE.append(OpInfo(_code, _name, MEMARG, vt=_vt, op="load", size=_size, signed=_signed))

_STORES = [
    (0x36, "i32.store", "i32", 4),
    (0x37, "i64.store", "i64", 8),
    (0x3A, "i32.store8", "i32", 1),
    (0x3B, "i32.store16", "i32", 2),
    (0x3C, "i64.store8", "i64", 1),
    (0x3D, "i64.store16", "i64", 2),
    (0x3E, "i64.store32", "i64", 4),
]
for _code, _name, _vt, _size in _STORES:
    _TABLE.append(OpInfo(_code, _name, MEMARG, vt=_vt, op="store", size=_size))

COMPARE_OPS = ("eq", "ne", "lt_s", "lt_u", "gt_s", "gt_u", "le_s", "le_u", "ge_s", "ge_u")
BINARY_OPS = ("add", "sub", "mul", "div_s", "div_u", "rem_s", "rem_u",
              "and", "or", "xor", "shl", "shr_s", "shr_u")

for _vt, _eqz, _cmp_base, _bin_base in (("i32", 0x45, 0x46, 0x6A), ("i64", 0x50, 0x51, 0x7C)):
    _TABLE.append(OpInfo(_eqz, f"{_vt}.eqz", vt=_vt, op="eqz"))
    for _i, _op in enumerate(COMPARE_OPS):
        _TABLE.append(OpInfo(_cmp_base + _i, f"{_vt}.{_op}", vt=_vt, op=_op))
    for _i, _op in enumerate(BINARY_OPS):
        _TABLE.append(OpInfo(_bin_base + _i, f"{_vt}.{_op}", vt=_vt, op=_op))

BY_CODE: dict[int, OpInfo] = {info.code: info for info in _TABLE}
BY_NAME: dict[str, OpInfo] = {info.name: info for info in _TABLE}

# float instructions; named so diagnostics can say what was rejected
FLOAT_CODES = frozenset(
    {0x2A, 0x2B, 0x38, 0x39, 0x43, 0x44} | set(range(0x5B, 0x67)) | set(range(0x8B, 0xA7))
)

OPENERS = frozenset({0x02, 0x03, 0x04})
ELSE = 0x05
END = 0x0B
BR = 0x0C
BR_IF = 0x0D
BR_TABLE = 0x0E
RETURN = 0x0F
CALL = 0x10
CALL_INDIRECT_OP = 0x11
UNREACHABLE = 0x00
NOP = 0x01
DROP = 0x1A
SELECT = 0x1B
IF = 0x04
LOOP = 0x03
BLOCK = 0x02


def info(code: int) -> OpInfo:
    return BY_CODE[code]
