"""Deterministic concrete interpreter for the supported subset.

It is the oracle against which symbolic verdicts are checked, so it favours
plainness over speed. The start function is not run implicitly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence, Union

from . import numeric
from . import opcodes as ops
from .cfg import ControlMap, control_map
from .wasm import BLOCK_EMPTY, WIDTH, Module

logger = logging.getLogger(__name__)

MAX_CALL_DEPTH = 1024


class TrapReason(str, Enum):
    UNREACHABLE = "Unreachable"
    DIV_BY_ZERO = "DivByZero"
    INTEGER_OVERFLOW = "IntegerOverflow"
    OUT_OF_BOUNDS = "OutOfBounds"
    INDIRECT_CALL = "IndirectCallFault"
    ASSERT_FAILED = "AssertFailed"
    STACK_EXHAUSTED = "StackExhausted"


class InterpError(Exception):
    pass


class NoSuchExport(InterpError):
    pass


class ArityMismatch(InterpError):
    pass


@dataclass(frozen=True)
class Terminated:
    values: tuple[int, ...]


@dataclass(frozen=True)
class Trapped:
    reason: TrapReason
    byte_offset: int
    func_index: int = -1
    instr_index: int = -1


@dataclass(frozen=True)
class OutOfFuel:
    pass


TraceResult = Union[Terminated, Trapped, OutOfFuel]


@dataclass
class Label:
    height: int
    arity: int
    cont: int


@dataclass
class Frame:
    func_index: int
    pc: int
    locals: list[int]
    height: int
    labels: list[Label] = field(default_factory=list)


@dataclass
class ConcreteState:
    stack: list[int]
    frames: list[Frame]
    memory: bytearray
    globals: list[int]
    fuel: int


def block_arity(blocktype: int) -> int:
    return 0 if blocktype == BLOCK_EMPTY else 1


class _Trap(Exception):
    def __init__(self, reason: TrapReason):
        self.reason = reason


class Interpreter:
    def __init__(self, module: Module):
        self.module = module
        self.table = module.table
        self._cmaps: dict[int, ControlMap] = {}

    def cmap(self, func_index: int) -> ControlMap:
        cm = self._cmaps.get(func_index)
        if cm is None:
            cm = self._cmaps[func_index] = control_map(self.module.defined(func_index).body)
        return cm

    def initial_state(self, fuel: int) -> ConcreteState:
        m = self.module
        return ConcreteState(
            stack=[],
            frames=[],
            memory=bytearray(m.memory_size),
            globals=[g.init & numeric.mask(WIDTH[g.valtype]) for g in m.globals],
            fuel=fuel,
        )

    def _push_frame(self, state: ConcreteState, func_index: int) -> None:
        if len(state.frames) >= MAX_CALL_DEPTH:
            raise _Trap(TrapReason.STACK_EXHAUSTED)
        f = self.module.defined(func_index)
        nparams = len(f.type.params)
        args = state.stack[len(state.stack) - nparams:] if nparams else []
        del state.stack[len(state.stack) - nparams:]
        state.frames.append(Frame(func_index, 0, list(args) + [0] * len(f.locals), len(state.stack)))

    def _return(self, state: ConcreteState) -> bool:
        """Pop the current frame; True once the outermost frame returned."""
        frame = state.frames.pop()
        nres = len(self.module.defined(frame.func_index).type.results)
        results = state.stack[len(state.stack) - nres:] if nres else []
        del state.stack[frame.height:]
        state.stack.extend(results)
        if not state.frames:
            return True
        state.frames[-1].pc += 1
        return False

    def _branch(self, state: ConcreteState, depth: int) -> bool:
        frame = state.frames[-1]
        if depth >= len(frame.labels):
            return self._return(state)
        label = frame.labels[-1 - depth]
        vals = state.stack[len(state.stack) - label.arity:] if label.arity else []
        del state.stack[label.height:]
        state.stack.extend(vals)
        del frame.labels[len(frame.labels) - 1 - depth:]
        frame.pc = label.cont
        return False

    def _call(self, state: ConcreteState, func_index: int) -> None:
        m = self.module
        if m.is_assert_import(func_index):
            if state.stack.pop() == 0:
                raise _Trap(TrapReason.ASSERT_FAILED)
            state.frames[-1].pc += 1
            return
        self._push_frame(state, func_index)

    def execute(self, state: ConcreteState) -> TraceResult:
        m = self.module
        stack = state.stack
        while True:
            if state.fuel <= 0:
                return OutOfFuel()
            state.fuel -= 1
            frame = state.frames[-1]
            body = m.defined(frame.func_index).body
            ins = body[frame.pc]
            try:
                if self._step(state, frame, body, ins):
                    return Terminated(tuple(stack))
            except _Trap as trap:
                return Trapped(trap.reason, ins.byte_offset, frame.func_index, frame.pc)

    def _step(self, state: ConcreteState, frame: Frame, body: Sequence, ins) -> bool:
        m = self.module
        stack = state.stack
        op = ins.opcode
        info = ins.info
        imm = ins.immediates

        if op == ops.UNREACHABLE:
            raise _Trap(TrapReason.UNREACHABLE)
        if op == ops.NOP:
            frame.pc += 1
        elif op in (ops.BLOCK, ops.LOOP):
            cm = self.cmap(frame.func_index)
            if op == ops.LOOP:
                frame.labels.append(Label(len(stack), 0, frame.pc))
            else:
                frame.labels.append(Label(len(stack), block_arity(imm[0]), cm.end_of[frame.pc] + 1))
            frame.pc += 1
        elif op == ops.IF:
            cm = self.cmap(frame.func_index)
            cond = stack.pop()
            frame.labels.append(Label(len(stack), block_arity(imm[0]), cm.end_of[frame.pc] + 1))
            if cond:
                frame.pc += 1
            elif frame.pc in cm.else_of:
                frame.pc = cm.else_of[frame.pc] + 1
            else:
                frame.pc = cm.end_of[frame.pc]
        elif op == ops.ELSE:
            frame.pc = self.cmap(frame.func_index).end_of[frame.pc]
        elif op == ops.END:
            if frame.labels:
                frame.labels.pop()
                frame.pc += 1
            else:
                return self._return(state)
        elif op == ops.BR:
            return self._branch(state, imm[0])
        elif op == ops.BR_IF:
            if stack.pop():
                return self._branch(state, imm[0])
            frame.pc += 1
        elif op == ops.BR_TABLE:
            i = stack.pop()
            targets = imm[:-1]
            return self._branch(state, targets[i] if i < len(targets) else imm[-1])
        elif op == ops.RETURN:
            return self._return(state)
        elif op == ops.CALL:
            self._call(state, imm[0])
        elif op == ops.CALL_INDIRECT_OP:
            i = stack.pop()
            if i >= len(self.table) or self.table[i] is None:
                raise _Trap(TrapReason.INDIRECT_CALL)
            target = self.table[i]
            if m.function_type(target) != m.types[imm[0]]:
                raise _Trap(TrapReason.INDIRECT_CALL)
            self._call(state, target)
        elif op == ops.DROP:
            stack.pop()
            frame.pc += 1
        elif op == ops.SELECT:
            c = stack.pop()
            b = stack.pop()
            a = stack.pop()
            stack.append(a if c else b)
            frame.pc += 1
        elif info.imm == ops.LOCAL:
            if info.name == "local.get":
                stack.append(frame.locals[imm[0]])
            elif info.name == "local.set":
                frame.locals[imm[0]] = stack.pop()
            else:
                frame.locals[imm[0]] = stack[-1]
            frame.pc += 1
        elif info.imm == ops.GLOBAL:
            if info.name == "global.get":
                stack.append(state.globals[imm[0]])
            else:
                state.globals[imm[0]] = stack.pop()
            frame.pc += 1
        elif info.op == "load":
            addr = stack.pop()
            ea = addr + imm[1]
            if ea + info.size > len(state.memory):
                raise _Trap(TrapReason.OUT_OF_BOUNDS)
            raw = int.from_bytes(state.memory[ea:ea + info.size], "little")
            width = 32 if info.vt == "i32" else 64
            if info.signed:
                raw = numeric.sign_extend(raw, info.size * 8, width)
            stack.append(raw)
            frame.pc += 1
        elif info.op == "store":
            value = stack.pop()
            addr = stack.pop()
            ea = addr + imm[1]
            if ea + info.size > len(state.memory):
                raise _Trap(TrapReason.OUT_OF_BOUNDS)
            state.memory[ea:ea + info.size] = (value & numeric.mask(info.size * 8)).to_bytes(info.size, "little")
            frame.pc += 1
        elif info.op == "const":
            stack.append(imm[0] & numeric.mask(32 if info.vt == "i32" else 64))
            frame.pc += 1
        elif info.op == "eqz":
            stack.append(1 if stack.pop() == 0 else 0)
            frame.pc += 1
        elif info.op in numeric.COMPARE:
            b = stack.pop()
            a = stack.pop()
            stack.append(numeric.compare(info.op, a, b, 32 if info.vt == "i32" else 64))
            frame.pc += 1
        elif info.op in numeric.BINARY:
            w = 32 if info.vt == "i32" else 64
            b = stack.pop()
            a = stack.pop()
            if info.op in ("div_s", "div_u", "rem_s", "rem_u") and b == 0:
                raise _Trap(TrapReason.DIV_BY_ZERO)
            if info.op == "div_s" and a == 1 << (w - 1) and b == numeric.mask(w):
                raise _Trap(TrapReason.INTEGER_OVERFLOW)
            stack.append(numeric.binary(info.op, a, b, w))
            frame.pc += 1
        else:
            raise InterpError(f"instruction {info.name} has no concrete semantics")
        return False


def run_concrete(m: Module, entry: str, args: Sequence[int], fuel: int = 1_000_000) -> TraceResult:
    """Run export ``entry`` on ``args`` with a step budget of ``fuel``."""
    if fuel <= 0:
        raise ValueError("fuel must be positive")
    exports = m.export_map
    if entry not in exports:
        raise NoSuchExport(entry)
    func_index = exports[entry]
    ftype = m.function_type(func_index)
    if len(args) != len(ftype.params):
        raise ArityMismatch(f"{entry} takes {len(ftype.params)} arguments, got {len(args)}")

    interp = Interpreter(m)
    state = interp.initial_state(fuel)
    state.stack.extend(a & numeric.mask(WIDTH[t]) for a, t in zip(args, ftype.params))
    if m.is_assert_import(func_index):
        # an exported import: calling it directly is just the assertion
        return Trapped(TrapReason.ASSERT_FAILED, -1) if state.stack.pop() == 0 else Terminated(())
    interp._push_frame(state, func_index)
    return interp.execute(state)
