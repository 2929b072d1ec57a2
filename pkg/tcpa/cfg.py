"""Control-flow graphs of function bodies.

A ``br`` to a ``block`` or ``if`` label lands on the label's ``end``; a ``br``
to a ``loop`` label lands on the ``loop`` instruction itself.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from . import opcodes as ops
from .wasm import Function, Instruction, MalformedNesting

FALLTHROUGH = "fallthrough"
BRANCH_TAKEN = "branch-taken"
BRANCH_NOT_TAKEN = "branch-not-taken"
TABLE_CASE = "table-case"


@dataclass(frozen=True)
class ControlMap:
    end_of: dict[int, int]
    else_of: dict[int, int]
    # openers enclosing each instruction, innermost last
    enclosing: tuple[tuple[int, ...], ...]

    def branch_target(self, body: Sequence[Instruction], at: int, depth: int) -> int:
        enclosing = self.enclosing[at]
        if depth == len(enclosing):
            return len(body) - 1
        opener = enclosing[-1 - depth]
        if body[opener].opcode == ops.LOOP:
            return opener
        return self.end_of[opener]


def control_map(body: Sequence[Instruction]) -> ControlMap:
    end_of: dict[int, int] = {}
    else_of: dict[int, int] = {}
    enclosing: list[tuple[int, ...]] = []
    stack: list[int] = []
    for i, ins in enumerate(body):
        enclosing.append(tuple(stack))
        op = ins.opcode
        if op in ops.OPENERS:
            stack.append(i)
        elif op == ops.ELSE:
            if not stack or body[stack[-1]].opcode != ops.IF or stack[-1] in else_of:
                raise MalformedNesting(f"else without if at instruction {i}")
            else_of[stack[-1]] = i
        elif op == ops.END:
            if stack:
                end_of[stack.pop()] = i
            elif i != len(body) - 1:
                raise MalformedNesting(f"unbalanced end at instruction {i}")
    if stack:
        raise MalformedNesting("unclosed block at end of function")
    if not body or body[-1].opcode != ops.END:
        raise MalformedNesting("function body does not end with end")
    for if_index, else_index in else_of.items():
        end_of[else_index] = end_of[if_index]
    return ControlMap(end_of, else_of, tuple(enclosing))


@dataclass(frozen=True)
class BasicBlock:
    index: int
    start: int
    end: int  # exclusive


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    kind: str


@dataclass(frozen=True)
class Cfg:
    blocks: tuple[BasicBlock, ...]
    edges: tuple[Edge, ...]

    entry: int = 0

    def successors(self, block: int) -> list[int]:
        return [e.dst for e in self.edges if e.src == block]

    def block_at(self, instruction: int) -> BasicBlock:
        for b in self.blocks:
            if b.start <= instruction < b.end:
                return b
        raise IndexError(instruction)


def _branch_targets(body: Sequence[Instruction], cmap: ControlMap, i: int) -> list[int]:
    ins = body[i]
    if ins.opcode in (ops.BR, ops.BR_IF):
        return [cmap.branch_target(body, i, ins.immediates[0])]
    if ins.opcode == ops.BR_TABLE:
        seen: list[int] = []
        for depth in ins.immediates:
            t = cmap.branch_target(body, i, depth)
            if t not in seen:
                seen.append(t)
        return seen
    return []


def build_cfg(f: Function) -> Cfg:
    body = f.body
    n = len(body)
    cmap = control_map(body)

    leaders = {0}
    for i, ins in enumerate(body):
        op = ins.opcode
        if op in (ops.BR, ops.BR_IF, ops.BR_TABLE, ops.RETURN, ops.UNREACHABLE, ops.IF, ops.ELSE):
            if i + 1 < n:
                leaders.add(i + 1)
        if op == ops.LOOP:
            leaders.add(i)
        if op == ops.IF:
            leaders.add(cmap.end_of[i])
            if i in cmap.else_of:
                leaders.add(cmap.else_of[i] + 1)
        leaders.update(_branch_targets(body, cmap, i))

    starts = sorted(leaders)
    blocks = tuple(
        BasicBlock(k, s, starts[k + 1] if k + 1 < len(starts) else n) for k, s in enumerate(starts)
    )
    block_of = {}
    for b in blocks:
        for i in range(b.start, b.end):
            block_of[i] = b.index

    edges: list[Edge] = []
    for b in blocks:
        last = b.end - 1
        op = body[last].opcode
        nxt = block_of.get(b.end)
        if op == ops.BR:
            edges.append(Edge(b.index, block_of[_branch_targets(body, cmap, last)[0]], BRANCH_TAKEN))
        elif op == ops.BR_IF:
            if nxt is not None:
                edges.append(Edge(b.index, nxt, BRANCH_NOT_TAKEN))
            edges.append(Edge(b.index, block_of[_branch_targets(body, cmap, last)[0]], BRANCH_TAKEN))
        elif op == ops.BR_TABLE:
            for t in _branch_targets(body, cmap, last):
                edges.append(Edge(b.index, block_of[t], TABLE_CASE))
        elif op == ops.IF:
            edges.append(Edge(b.index, block_of[last + 1], BRANCH_TAKEN))
            not_taken = cmap.else_of[last] + 1 if last in cmap.else_of else cmap.end_of[last]
            edges.append(Edge(b.index, block_of[not_taken], BRANCH_NOT_TAKEN))
        elif op == ops.ELSE:
            edges.append(Edge(b.index, block_of[cmap.end_of[last]], BRANCH_TAKEN))
        elif op in (ops.RETURN, ops.UNREACHABLE):
            pass
        elif nxt is not None:
            edges.append(Edge(b.index, nxt, FALLTHROUGH))
    return Cfg(blocks, tuple(edges))
