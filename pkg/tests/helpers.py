"""Test-only oracles: an independent instruction counter and program generators."""
from __future__ import annotations

import random

from tcpa.bench import CORPUS_DIR
from tcpa.binary import parse_module
from tcpa.properties import PropertySet
from tcpa.symexec import Analysis, init_analysis
from tcpa.text import assemble

# immediate layout by opcode, decoded without tcpa.binary
_U = "u"
_S = "s"
_BT = "bt"
_TABLE = "table"
_CI = "ci"
_MEM = "mem"

_IMMEDIATES = {
    0x02: _BT, 0x03: _BT, 0x04: _BT,
    0x0C: _U, 0x0D: _U, 0x0E: _TABLE,
    0x10: _U, 0x11: _CI,
    0x20: _U, 0x21: _U, 0x22: _U, 0x23: _U, 0x24: _U,
    0x41: _S, 0x42: _S,
}
_IMMEDIATES.update({op: _MEM for op in range(0x28, 0x3F)})


def _uleb(data: bytes, pos: int) -> tuple[int, int]:
    result = shift = 0
    while True:
        b = data[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        shift += 7
        if not b & 0x80:
            return result, pos


def _skip_leb(data: bytes, pos: int) -> int:
    while data[pos] & 0x80:
        pos += 1
    return pos + 1


def disassembled_count(data: bytes) -> int:
    """Instructions in the code section, ``end`` included."""
    pos = 8
    total = 0
    while pos < len(data):
        section_id = data[pos]
        size, pos = _uleb(data, pos + 1)
        end = pos + size
        if section_id == 10:
            count, p = _uleb(data, pos)
            for _ in range(count):
                body_size, p = _uleb(data, p)
                body_end = p + body_size
                groups, p = _uleb(data, p)
                for _ in range(groups):
                    _, p = _uleb(data, p)
                    p += 1
                while p < body_end:
                    op = data[p]
                    p += 1
                    total += 1
                    kind = _IMMEDIATES.get(op)
                    if kind == _BT:
                        p += 1
                    elif kind in (_U, _S):
                        p = _skip_leb(data, p)
                    elif kind == _TABLE:
                        n, p = _uleb(data, p)
                        for _ in range(n + 1):
                            p = _skip_leb(data, p)
                    elif kind == _CI:
                        p = _skip_leb(data, p) + 1
                    elif kind == _MEM:
                        p = _skip_leb(data, _skip_leb(data, p))
        pos = end
    return total


# ---------------------------------------------------------------------------
# Random loop-free programs over one 8-bit input
# ---------------------------------------------------------------------------

_LOCALS = ("$a", "$b", "$c")
_BINOPS = ("add", "sub", "mul", "and", "or", "xor", "shl", "shr_u", "div_u", "rem_u", "div_s")
_CMPS = ("lt_u", "gt_u", "eq", "ne", "le_s", "ge_u")


def _operand(rng: random.Random) -> list[str]:
    if rng.random() < 0.4:
        return [f"i32.const {rng.randint(0, 20)}"]
    return [f"local.get {rng.choice(_LOCALS)}"]


def _statements(rng: random.Random, depth: int, count: int) -> list[str]:
    out: list[str] = []
    for _ in range(count):
        roll = rng.random()
        if roll < 0.55 or depth >= 2:
            out += [f"local.get {rng.choice(_LOCALS)}", *_operand(rng),
                    f"i32.{rng.choice(_BINOPS)}", f"local.set {rng.choice(_LOCALS)}"]
        elif roll < 0.8:
            out += [f"local.get {rng.choice(_LOCALS)}", f"i32.const {rng.randint(0, 40)}",
                    f"i32.{rng.choice(_CMPS)}", "if"]
            out += _statements(rng, depth + 1, rng.randint(1, 2))
            if rng.random() < 0.5:
                out.append("else")
                out += _statements(rng, depth + 1, rng.randint(1, 2))
            out.append("end")
        else:
            out += [f"local.get {rng.choice(_LOCALS)}", f"i32.const {rng.randint(0, 40)}",
                    "i32.ne", "call $assert"]
    return out


def random_program(rng: random.Random) -> str:
    """Export ``f`` of one i32 parameter, masked to 8 bits on entry."""
    body = [
        "local.get $a", "i32.const 255", "i32.and", "local.set $a",
        "local.get $a", "i32.const 3", "i32.shr_u", "local.set $b",
    ]
    body += _statements(rng, 0, rng.randint(2, 6))
    body.append("local.get $c")
    lines = [
        "(module",
        '  (import "env" "tcpa_assert" (func $assert (param i32)))',
        '  (func $f (export "f") (param $a i32) (result i32) (local $b i32) (local $c i32)',
    ]
    lines += [f"    {ins}" for ins in body]
    lines += ["  )", ")"]
    return "\n".join(lines) + "\n"


def random_module_text(rng: random.Random) -> str:
    """Random program plus globals, memory, a table and a helper, for codec tests."""
    helper_ops = [f"i32.{rng.choice(('add', 'xor', 'mul'))}" for _ in range(rng.randint(1, 3))]
    lines = [
        "(module",
        '  (import "env" "tcpa_assert" (func $assert (param i32)))',
        "  (type $un (func (param i32) (result i32)))",
        f"  (memory {rng.randint(0, 2)} {rng.randint(2, 4)})",
        f"  (table {rng.randint(1, 3)} funcref)",
        "  (elem (i32.const 0) $helper)",
        f"  (global $g (mut i32) (i32.const {rng.randint(-100, 100)}))",
        f"  (global $k i64 (i64.const {rng.randint(-(1 << 40), 1 << 40)}))",
        "  (func $helper (type $un)",
        "    local.get 0",
    ]
    for op in helper_ops:
        lines += [f"    i32.const {rng.randint(-5000, 5000)}", f"    {op}"]
    lines.append("  )")
    program = random_program(rng).splitlines()
    # splice the generated export in after the helper
    lines += program[2:-1]
    lines += ['  (export "helper" (func $helper))', '  (export "g" (global $g))', ")"]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Corpus access
# ---------------------------------------------------------------------------

DEFAULT_PROPS_TEXT = "no-assert-failure assertion_unreachable\nnever-traps no_trap\n"


def corpus_source(name: str) -> str:
    return (CORPUS_DIR / name).read_text(encoding="utf-8")


def analysis_of(source: str, props: str = DEFAULT_PROPS_TEXT) -> Analysis:
    _, executable, source_map = assemble(source)
    return init_analysis(parse_module(executable), source_map, PropertySet.parse(props))
