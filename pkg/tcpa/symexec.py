"""Symbolic execution of module functions.

An ``Analysis`` fixes what is analysed (modules, source map, properties);
a ``Configuration`` is one live execution state. ``step`` is the transition
relation and ``explore`` drives it depth-first, not-taken successor first,
until every path of every entry function has completed or a bound was hit.

Entry arguments become variables ``arg0``, ``arg1``, ... of the parameter
widths. Linear memory maps concrete byte addresses to 8-bit expressions;
symbolic addresses are concretized to at most four feasible values.
"""
from __future__ import annotations

import logging
import time
import tracemalloc
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

from . import numeric
from . import opcodes as ops
from .cfg import ControlMap, control_map
from .config import LOOP_UNROLL
from .graph import (
    CONTROL_FLOW,
    DATA_FLOW,
    SemanticGraph,
    condition_vertex,
    global_vertex,
    local_vertex,
    memory_vertex,
)
from .interp import MAX_CALL_DEPTH, TrapReason, block_arity
from .models import CheckBudget, ExploreBounds
from .properties import PropertyKind, PropertySet
from .report import AnalysisReport, Outcome, PropertyOutcome, ReportStats, Witness
from .solver import PathCondition, check_sat
from .symexpr import (
    SymExpr,
    binop,
    cmp,
    concat,
    const,
    eqz,
    evaluate,
    extract,
    ite,
    sext,
    simplify,
    var,
    zext,
)
from .text import SourceLocation, SourceMap
from .wasm import WIDTH, Module, validate_module

logger = logging.getLogger(__name__)

SPEC_VERSION = "wasm-core-1/integer-subset"

MAX_CONCRETIZATIONS = 4

# reasons recorded for unknown paths
LOOP_BOUND = "loop-bound"
DEPTH_BOUND = "depth-bound"
PATH_BOUND = "path-bound"
SYMBOLIC_ADDRESS = "symbolic-address"
SOLVER_UNKNOWN = "solver-unknown"
UNSUPPORTED = "unsupported"


class SymexecError(Exception):
    pass


class UnknownTarget(SymexecError):
    pass


class SubsetViolation(SymexecError):
    pass


class IncompleteSourceMap(SymexecError):
    pass


def arg_name(index: int) -> str:
    return f"arg{index}"


# ---------------------------------------------------------------------------
# Analysis and configurations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Analysis:
    modules: tuple[Module, ...]
    src_map: SourceMap
    props: PropertySet
    spec_version: str = SPEC_VERSION
    # explored export names, in first-use order of the properties
    entries: tuple[str, ...] = ()
    budget: CheckBudget = field(default_factory=CheckBudget)
    loop_unroll: int = LOOP_UNROLL
    # frames and operands every configuration starts from, below the entry frame
    call_stack_template: tuple["SymFrame", ...] = ()
    operand_stack_template: tuple["StackValue", ...] = ()
    _control: dict[int, ControlMap] = field(default_factory=dict, compare=False, repr=False)

    @property
    def module(self) -> Module:
        return self.modules[0]

    def control(self, func_index: int) -> ControlMap:
        cm = self._control.get(func_index)
        if cm is None:
            cm = self._control[func_index] = control_map(self.module.defined(func_index).body)
        return cm

    def with_bounds(self, bounds: ExploreBounds) -> "Analysis":
        return replace(self, budget=bounds.per_path_solver_budget, loop_unroll=bounds.loop_unroll,
                       _control=self._control)


StackValue = tuple[SymExpr, frozenset[str]]


@dataclass(frozen=True)
class SymLabel:
    height: int
    arity: int
    cont: int
    is_loop: bool = False
    guards: tuple[str, ...] = ()


@dataclass
class SymFrame:
    func_index: int
    pc: int
    locals: list[SymExpr]
    height: int
    labels: list[SymLabel] = field(default_factory=list)
    guards: tuple[str, ...] = ()

    def copy(self) -> "SymFrame":
        return SymFrame(self.func_index, self.pc, list(self.locals), self.height, list(self.labels), self.guards)


@dataclass
class ModuleState:
    memory: dict[int, SymExpr]
    globals: list[SymExpr]
    memory_size: int

    def copy(self) -> "ModuleState":
        return ModuleState(dict(self.memory), list(self.globals), self.memory_size)


class HaltKind(str, Enum):
    TRAPPED = "trapped"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Halt:
    kind: HaltKind
    func_index: int
    byte_offset: int
    trap: Optional[TrapReason] = None
    reason: Optional[str] = None


@dataclass
class Configuration:
    entry: str
    k_f: list[SymFrame]
    k_o: list[StackValue]
    module_states: list[ModuleState]
    path_condition: PathCondition
    graph: SemanticGraph
    src: Optional[SourceLocation] = None
    loop_counts: dict[tuple[int, int, int], int] = field(default_factory=dict)
    depth: int = 0
    halt: Optional[Halt] = None

    @property
    def pc(self) -> Optional[tuple[int, int]]:
        if not self.k_f:
            return None
        f = self.k_f[-1]
        return f.func_index, f.pc

    @property
    def returned(self) -> bool:
        return not self.k_f and self.halt is None

    def clone(self) -> "Configuration":
        return Configuration(
            entry=self.entry,
            k_f=[f.copy() for f in self.k_f],
            k_o=list(self.k_o),
            module_states=[s.copy() for s in self.module_states],
            path_condition=self.path_condition,
            graph=self.graph,
            src=self.src,
            loop_counts=dict(self.loop_counts),
            depth=self.depth,
            halt=self.halt,
        )


def _exported_functions(m: Module) -> list[str]:
    nimp = m.num_imported_functions
    return [name for name, index in m.export_map.items() if index >= nimp]


def init_analysis(m: Module, src_map: SourceMap, props: PropertySet,
                  budget: Optional[CheckBudget] = None) -> Analysis:
    """Modules that did not come through the parser or assembler are validated here."""
    validate_module(m)
    exports = m.export_map
    defined = set(_exported_functions(m))
    entries: list[str] = []
    for p in props:
        if p.target is None:
            targets = _exported_functions(m)
        else:
            if p.target not in exports:
                raise UnknownTarget(f"property {p.id}: no export named {p.target!r}")
            if p.target not in defined:
                raise UnknownTarget(f"property {p.id}: export {p.target!r} is not a defined function")
            targets = [p.target]
        for t in targets:
            if t not in entries:
                entries.append(t)
    if not src_map.covers(m):
        raise IncompleteSourceMap("source map does not cover every instruction of the module")
    return Analysis((m,), src_map, props, SPEC_VERSION, tuple(entries), budget or CheckBudget())


def initial_configuration(a: Analysis, entry: str) -> Configuration:
    m = a.module
    func_index = m.export_map[entry]
    f = m.defined(func_index)
    params = [var(arg_name(i), WIDTH[t]) for i, t in enumerate(f.type.params)]
    locals_ = params + [const(0, WIDTH[t]) for t in f.locals]
    state = ModuleState({}, [const(g.init, WIDTH[g.valtype]) for g in m.globals], m.memory_size)
    vertices = [global_vertex(i) for i in range(len(m.globals))]
    vertices += [local_vertex(func_index, i) for i in range(f.num_locals)]
    c = Configuration(
        entry=entry,
        k_f=[fr.copy() for fr in a.call_stack_template]
        + [SymFrame(func_index, 0, locals_, len(a.operand_stack_template))],
        k_o=list(a.operand_stack_template),
        module_states=[state],
        path_condition=PathCondition(),
        graph=SemanticGraph(vertices),
    )
    _sync_src(a, c)
    return c


def _sync_src(a: Analysis, c: Configuration) -> None:
    if c.halt is not None:
        offset = c.halt.byte_offset
    elif c.k_f:
        fr = c.k_f[-1]
        offset = a.module.defined(fr.func_index).body[fr.pc].byte_offset
    else:
        c.src = None
        return
    c.src = a.src_map.location_of(offset) if offset in a.src_map else None


# ---------------------------------------------------------------------------
# Transition relation
# ---------------------------------------------------------------------------

def _extend(c: Configuration, expr: SymExpr, taken: bool) -> Optional[Configuration]:
    """Record a branch decision; None when it simplifies to false."""
    test = simplify(expr)
    if test.is_const:
        return c if (test.value != 0) == taken else None
    c.path_condition = c.path_condition.extend(test, taken)
    return c


def _guards(c: Configuration) -> tuple[str, ...]:
    out: list[str] = []
    for fr in c.k_f:
        out.extend(fr.guards)
        for label in fr.labels:
            out.extend(label.guards)
    return tuple(dict.fromkeys(out))


def _assign(c: Configuration, vertex: str, deps: frozenset[str]) -> None:
    edges = [(d, vertex, DATA_FLOW) for d in sorted(deps)]
    edges += [(g, vertex, CONTROL_FLOW) for g in _guards(c)]
    c.graph = c.graph.extend([vertex], edges)


def _condition(c: Configuration, func_index: int, byte_offset: int, deps: frozenset[str]) -> Optional[str]:
    """Vertex standing for a branch condition that reads ``deps``."""
    if not deps:
        return None
    v = condition_vertex(func_index, byte_offset)
    _assign(c, v, deps)
    return v


class _Stepper:
    def __init__(self, a: Analysis, c: Configuration):
        self.a = a
        self.m = a.module
        self.c = c
        self.frame = c.k_f[-1]
        self.body = self.m.defined(self.frame.func_index).body
        self.ins = self.body[self.frame.pc]

    # helpers bound to the current configuration

    def trap(self, c: Configuration, reason: TrapReason) -> Configuration:
        c.halt = Halt(HaltKind.TRAPPED, self.frame.func_index, self.ins.byte_offset, trap=reason)
        return c

    def unknown(self, c: Configuration, reason: str) -> Configuration:
        c.halt = Halt(HaltKind.UNKNOWN, self.frame.func_index, self.ins.byte_offset, reason=reason)
        return c

    def pop(self, c: Configuration) -> StackValue:
        return c.k_o.pop()

    def push(self, c: Configuration, e: SymExpr, deps: frozenset[str] = frozenset()) -> None:
        c.k_o.append((simplify(e), deps))

    def advance(self, c: Configuration) -> list[Configuration]:
        c.k_f[-1].pc += 1
        return [c]

    # control

    def ret(self, c: Configuration) -> list[Configuration]:
        frame = c.k_f.pop()
        nres = len(self.m.defined(frame.func_index).type.results)
        results = c.k_o[len(c.k_o) - nres:] if nres else []
        del c.k_o[frame.height:]
        c.k_o.extend(results)
        if not c.k_f:
            return [c]
        c.k_f[-1].pc += 1
        return [c]

    def branch(self, c: Configuration, depth: int) -> list[Configuration]:
        frame = c.k_f[-1]
        if depth >= len(frame.labels):
            return self.ret(c)
        label = frame.labels[-1 - depth]
        vals = c.k_o[len(c.k_o) - label.arity:] if label.arity else []
        del c.k_o[label.height:]
        c.k_o.extend(vals)
        del frame.labels[len(frame.labels) - 1 - depth:]
        if label.is_loop:
            key = (len(c.k_f), frame.func_index, label.cont)
            count = c.loop_counts.get(key, 0) + 1
            if count > self.a.loop_unroll:
                return [self.unknown(c, LOOP_BOUND)]
            c.loop_counts[key] = count
            frame.labels.append(SymLabel(label.height, 0, label.cont, True))
            frame.pc = label.cont + 1
        else:
            frame.pc = label.cont
        return [c]

    def call(self, c: Configuration, func_index: int) -> list[Configuration]:
        m = self.m
        if m.is_assert_import(func_index):
            cond, deps = self.pop(c)
            fails = _extend(c.clone(), cond, False)
            passes = _extend(c, cond, True)
            out = []
            if fails is not None:
                out.append(self.trap(fails, TrapReason.ASSERT_FAILED))
            if passes is not None:
                out.extend(self.advance(passes))
            return out
        if len(c.k_f) >= MAX_CALL_DEPTH:
            return [self.trap(c, TrapReason.STACK_EXHAUSTED)]
        f = m.defined(func_index)
        nparams = len(f.type.params)
        args = c.k_o[len(c.k_o) - nparams:] if nparams else []
        del c.k_o[len(c.k_o) - nparams:]
        locals_ = [e for e, _ in args] + [const(0, WIDTH[t]) for t in f.locals]
        c.graph = c.graph.extend(local_vertex(func_index, i) for i in range(f.num_locals))
        for i, (_, deps) in enumerate(args):
            _assign(c, local_vertex(func_index, i), deps)
        c.k_f.append(SymFrame(func_index, 0, locals_, len(c.k_o)))
        return [c]

    # memory

    def accesses(self, c: Configuration, addr: SymExpr, offset: int, size: int
                 ) -> tuple[list[Configuration], list[tuple[Configuration, int]]]:
        """Trap successors and (configuration, effective address) pairs of an access."""
        mem_size = c.module_states[0].memory_size
        limit = mem_size - size - offset
        if addr.is_const:
            if limit < 0 or addr.value > limit:
                return [self.trap(c, TrapReason.OUT_OF_BOUNDS)], []
            return [], [(c, addr.value + offset)]
        if limit < 0:
            return [self.trap(c, TrapReason.OUT_OF_BOUNDS)], []
        traps = []
        out_of_bounds = _extend(c.clone(), cmp("gt_u", addr, const(limit, 32)), True)
        if out_of_bounds is not None:
            traps.append(self.trap(out_of_bounds, TrapReason.OUT_OF_BOUNDS))
        inside = _extend(c, cmp("le_u", addr, const(limit, 32)), True)
        if inside is None:
            return traps, []

        values: list[int] = []
        pc = inside.path_condition
        while True:
            result = check_sat(pc, self.a.budget)
            if result.is_unsat:
                break
            if not result.is_sat:
                return traps + [self.unknown(inside, SOLVER_UNKNOWN)], []
            if len(values) == MAX_CONCRETIZATIONS:
                return traps + [self.unknown(inside, SYMBOLIC_ADDRESS)], []
            v = evaluate(addr, result.model)
            values.append(v)
            pc = pc.extend(cmp("ne", addr, const(v, 32)), True)
        pairs = []
        for v in sorted(values):
            s = _extend(inside.clone(), cmp("eq", addr, const(v, 32)), True)
            if s is not None:
                pairs.append((s, v + offset))
        return traps, pairs

    def load(self, c: Configuration, info: ops.OpInfo) -> list[Configuration]:
        addr, addr_deps = self.pop(c)
        traps, pairs = self.accesses(c, addr, self.ins.immediates[1], info.size)
        out = list(traps)
        width = 32 if info.vt == "i32" else 64
        for s, ea in pairs:
            memory = s.module_states[0].memory
            acc: Optional[SymExpr] = None
            for k in range(info.size):
                byte = memory.get(ea + k, const(0, 8))
                acc = byte if acc is None else concat(byte, acc)
            value = simplify(acc)
            if info.size * 8 < width:
                value = sext(value, width) if info.signed else zext(value, width)
            deps = frozenset(memory_vertex(ea + k) for k in range(info.size))
            s.graph = s.graph.extend(deps)
            self.push(s, value, deps)
            out.extend(self.advance(s))
        return out

    def store(self, c: Configuration, info: ops.OpInfo) -> list[Configuration]:
        value, deps = self.pop(c)
        addr, _ = self.pop(c)
        traps, pairs = self.accesses(c, addr, self.ins.immediates[1], info.size)
        out = list(traps)
        for s, ea in pairs:
            memory = s.module_states[0].memory
            for k in range(info.size):
                memory[ea + k] = simplify(extract(value, 8 * k, 8))
                _assign(s, memory_vertex(ea + k), deps)
            out.extend(self.advance(s))
        return out

    # arithmetic

    def arith(self, c: Configuration, info: ops.OpInfo) -> list[Configuration]:
        b, b_deps = self.pop(c)
        a, a_deps = self.pop(c)
        deps = a_deps | b_deps
        op = info.op
        w = a.width
        out: list[Configuration] = []
        if op in ("div_s", "div_u", "rem_s", "rem_u"):
            zero = _extend(c.clone(), b, False)
            if zero is not None:
                out.append(self.trap(zero, TrapReason.DIV_BY_ZERO))
            nonzero = _extend(c, b, True)
            if nonzero is None:
                return out
            c = nonzero
            if op == "div_s":
                overflow = binop("and", cmp("eq", a, const(1 << (w - 1), w)),
                                 cmp("eq", b, const(numeric.mask(w), w)))
                over = _extend(c.clone(), overflow, True)
                if over is not None:
                    out.append(self.trap(over, TrapReason.INTEGER_OVERFLOW))
                fine = _extend(c, overflow, False)
                if fine is None:
                    return out
                c = fine
        self.push(c, binop(op, a, b), deps)
        out.extend(self.advance(c))
        return out

    # dispatch

    def run(self) -> list[Configuration]:
        c, ins = self.c, self.ins
        frame = c.k_f[-1]
        op = ins.opcode
        info = ins.info
        imm = ins.immediates
        fi = frame.func_index

        if op == ops.UNREACHABLE:
            return [self.trap(c, TrapReason.UNREACHABLE)]
        if op == ops.NOP:
            return self.advance(c)
        if op == ops.BLOCK:
            cm = self.a.control(fi)
            frame.labels.append(SymLabel(len(c.k_o), block_arity(imm[0]), cm.end_of[frame.pc] + 1))
            return self.advance(c)
        if op == ops.LOOP:
            c.loop_counts[(len(c.k_f), fi, frame.pc)] = 0
            frame.labels.append(SymLabel(len(c.k_o), 0, frame.pc, True))
            return self.advance(c)
        if op == ops.IF:
            cm = self.a.control(fi)
            cond, deps = self.pop(c)
            guard = _condition(c, fi, ins.byte_offset, deps)
            label = SymLabel(len(c.k_o), block_arity(imm[0]), cm.end_of[frame.pc] + 1,
                             guards=(guard,) if guard else ())
            out = []
            not_taken = _extend(c.clone(), cond, False)
            if not_taken is not None:
                nf = not_taken.k_f[-1]
                nf.labels.append(label)
                nf.pc = cm.else_of[nf.pc] + 1 if nf.pc in cm.else_of else cm.end_of[nf.pc]
                out.append(not_taken)
            taken = _extend(c, cond, True)
            if taken is not None:
                taken.k_f[-1].labels.append(label)
                out.extend(self.advance(taken))
            return out
        if op == ops.ELSE:
            frame.pc = self.a.control(fi).end_of[frame.pc]
            return [c]
        if op == ops.END:
            if frame.labels:
                frame.labels.pop()
                return self.advance(c)
            return self.ret(c)
        if op == ops.BR:
            return self.branch(c, imm[0])
        if op == ops.BR_IF:
            cond, deps = self.pop(c)
            guard = _condition(c, fi, ins.byte_offset, deps)
            out = []
            not_taken = _extend(c.clone(), cond, False)
            if not_taken is not None:
                nf = not_taken.k_f[-1]
                if guard:
                    if imm[0] < len(nf.labels):
                        i = len(nf.labels) - 1 - imm[0]
                        lab = nf.labels[i]
                        nf.labels[i] = SymLabel(lab.height, lab.arity, lab.cont, lab.is_loop, lab.guards + (guard,))
                    else:
                        nf.guards = nf.guards + (guard,)
                out.extend(self.advance(not_taken))
            taken = _extend(c, cond, True)
            if taken is not None:
                out.extend(self.branch(taken, imm[0]))
            return out
        if op == ops.BR_TABLE:
            index, _ = self.pop(c)
            targets = imm[:-1]
            if index.is_const:
                i = index.value
                return self.branch(c, targets[i] if i < len(targets) else imm[-1])
            out = []
            for i, depth in enumerate(targets):
                s = _extend(c.clone(), cmp("eq", index, const(i, 32)), True)
                if s is not None:
                    out.extend(self.branch(s, depth))
            s = _extend(c, cmp("ge_u", index, const(len(targets), 32)), True)
            if s is not None:
                out.extend(self.branch(s, imm[-1]))
            return out
        if op == ops.RETURN:
            return self.ret(c)
        if op == ops.CALL:
            return self.call(c, imm[0])
        if op == ops.CALL_INDIRECT_OP:
            return self.call_indirect(c, imm[0])
        if op == ops.DROP:
            self.pop(c)
            return self.advance(c)
        if op == ops.SELECT:
            cond, c_deps = self.pop(c)
            b, b_deps = self.pop(c)
            a, a_deps = self.pop(c)
            self.push(c, ite(cond, a, b), a_deps | b_deps | c_deps)
            return self.advance(c)
        if info.imm == ops.LOCAL:
            vertex = local_vertex(fi, imm[0])
            if info.name == "local.get":
                self.push(c, frame.locals[imm[0]], frozenset({vertex}))
            elif info.name == "local.set":
                e, deps = self.pop(c)
                frame.locals[imm[0]] = e
                _assign(c, vertex, deps)
            else:
                e, deps = c.k_o[-1]
                frame.locals[imm[0]] = e
                _assign(c, vertex, deps)
            return self.advance(c)
        if info.imm == ops.GLOBAL:
            vertex = global_vertex(imm[0])
            state = c.module_states[0]
            if info.name == "global.get":
                self.push(c, state.globals[imm[0]], frozenset({vertex}))
            else:
                e, deps = self.pop(c)
                state.globals[imm[0]] = e
                _assign(c, vertex, deps)
            return self.advance(c)
        if info.op == "load":
            return self.load(c, info)
        if info.op == "store":
            return self.store(c, info)
        if info.op == "const":
            self.push(c, const(imm[0], 32 if info.vt == "i32" else 64))
            return self.advance(c)
        if info.op == "eqz":
            e, deps = self.pop(c)
            self.push(c, eqz(e), deps)
            return self.advance(c)
        if info.op in numeric.COMPARE:
            b, b_deps = self.pop(c)
            a, a_deps = self.pop(c)
            self.push(c, cmp(info.op, a, b), a_deps | b_deps)
            return self.advance(c)
        if info.op in numeric.BINARY:
            return self.arith(c, info)
        raise SubsetViolation(f"instruction {info.name} has no symbolic semantics")

    def call_indirect(self, c: Configuration, type_index: int) -> list[Configuration]:
        m = self.m
        index, _ = self.pop(c)
        table = m.table
        wanted = m.types[type_index]
        good = [i for i, f in enumerate(table) if f is not None and m.function_type(f) == wanted]
        if index.is_const:
            if index.value not in good:
                return [self.trap(c, TrapReason.INDIRECT_CALL)]
            return self.call(c, table[index.value])
        out = []
        fault = c.clone()
        for i in good:
            fault = _extend(fault, cmp("ne", index, const(i, 32)), True) if fault is not None else None
        if fault is not None:
            out.append(self.trap(fault, TrapReason.INDIRECT_CALL))
        for i in good:
            s = _extend(c.clone(), cmp("eq", index, const(i, 32)), True)
            if s is not None:
                out.extend(self.call(s, table[i]))
        return out


def step(a: Analysis, c: Configuration) -> list[Configuration]:
    """Successors of ``c``; empty once the entry function has returned or ``c`` halted."""
    if c.halt is not None or not c.k_f:
        return []
    frame = c.k_f[-1]
    body = a.module.defined(frame.func_index).body
    if not 0 <= frame.pc < len(body):
        raise SubsetViolation(f"pc {frame.pc} outside function {frame.func_index}")
    n = c.clone()
    n.depth += 1
    successors = _Stepper(a, n).run()
    for s in successors:
        _sync_src(a, s)
    return successors


# ---------------------------------------------------------------------------
# Exploration
# ---------------------------------------------------------------------------

class PathStatus(str, Enum):
    RETURNED = "returned"
    TRAPPED = "trapped"
    UNKNOWN = "unknown"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class PathRecord:
    entry: str
    status: PathStatus
    path_condition: PathCondition
    func_index: int = -1
    byte_offset: int = -1
    trap: Optional[TrapReason] = None
    reason: Optional[str] = None
    model: Optional[dict[str, int]] = None


@dataclass
class EntryResult:
    entry: str
    paths: list[PathRecord] = field(default_factory=list)
    exhaustive: bool = True
    infeasible: int = 0

    @property
    def recorded(self) -> list[PathRecord]:
        return [p for p in self.paths if p.status != PathStatus.INFEASIBLE]


class Explorer:
    """Depth-first exploration of every entry function of an analysis."""

    def __init__(self, a: Analysis, bounds: ExploreBounds):
        self.a = a.with_bounds(bounds)
        self.bounds = bounds
        self.results: dict[str, EntryResult] = {}

    def _params(self, entry: str) -> list[str]:
        m = self.a.module
        return [arg_name(i) for i in range(len(m.function_type(m.export_map[entry]).params))]

    def _finish_trap(self, c: Configuration, result: EntryResult) -> None:
        halt = c.halt
        verdict = check_sat(c.path_condition, self.a.budget)
        if verdict.is_unsat:
            result.infeasible += 1
            result.paths.append(PathRecord(c.entry, PathStatus.INFEASIBLE, c.path_condition,
                                           halt.func_index, halt.byte_offset, halt.trap))
            return
        if verdict.is_sat:
            model = {n: verdict.model.get(n, 0) for n in self._params(c.entry)}
            result.paths.append(PathRecord(c.entry, PathStatus.TRAPPED, c.path_condition,
                                           halt.func_index, halt.byte_offset, halt.trap, model=model))
            return
        result.paths.append(PathRecord(c.entry, PathStatus.UNKNOWN, c.path_condition, halt.func_index,
                                       halt.byte_offset, halt.trap, reason=verdict.reason or SOLVER_UNKNOWN))

    def explore_entry(self, entry: str) -> EntryResult:
        a, bounds = self.a, self.bounds
        result = EntryResult(entry)
        stack = [initial_configuration(a, entry)]
        while stack:
            if len(result.recorded) >= bounds.max_paths:
                result.exhaustive = False
                result.paths.append(PathRecord(entry, PathStatus.UNKNOWN, stack[-1].path_condition,
                                               reason=PATH_BOUND))
                break
            c = stack.pop()
            if c.halt is not None:
                if c.halt.kind == HaltKind.TRAPPED:
                    self._finish_trap(c, result)
                else:
                    result.paths.append(PathRecord(entry, PathStatus.UNKNOWN, c.path_condition,
                                                   c.halt.func_index, c.halt.byte_offset, reason=c.halt.reason))
                continue
            if c.returned:
                result.paths.append(PathRecord(entry, PathStatus.RETURNED, c.path_condition))
                continue
            if c.depth >= bounds.max_depth:
                fi, _ = c.pc
                result.paths.append(PathRecord(entry, PathStatus.UNKNOWN, c.path_condition, fi, reason=DEPTH_BOUND))
                continue
            try:
                successors = step(a, c)
            except SubsetViolation as e:
                logger.warning(f"{entry}: {e}")
                result.paths.append(PathRecord(entry, PathStatus.UNKNOWN, c.path_condition, reason=UNSUPPORTED))
                continue
            if len(successors) > 1:
                successors = [s for s in successors if self._feasible(c, s, result)]
            stack.extend(reversed(successors))
        return result

    def _feasible(self, parent: Configuration, s: Configuration, result: EntryResult) -> bool:
        if s.halt is not None or len(s.path_condition) == len(parent.path_condition):
            return True
        if check_sat(s.path_condition, self.a.budget).is_unsat:
            result.infeasible += 1
            return False
        return True

    def run(self) -> dict[str, EntryResult]:
        entries = list(self.a.entries)
        if self.bounds.workers > 1 and len(entries) > 1:
            with ThreadPoolExecutor(max_workers=self.bounds.workers) as pool:
                done = list(pool.map(self.explore_entry, entries))
        else:
            done = [self.explore_entry(e) for e in entries]
        self.results = {r.entry: r for r in done}
        return self.results

    def outcomes(self) -> tuple[PropertyOutcome, ...]:
        a = self.a
        out = []
        for p in a.props:
            entries = [p.target] if p.target else _exported_functions(a.module)

            def relevant(rec: PathRecord) -> bool:
                return rec.trap is not None and (p.kind == PropertyKind.NO_TRAP
                                                 or rec.trap == TrapReason.ASSERT_FAILED)

            violation = None
            unknown_reason = None
            for e in entries:
                r = self.results[e]
                for rec in r.paths:
                    if rec.status == PathStatus.TRAPPED and relevant(rec) and violation is None:
                        violation = rec
                    elif rec.status == PathStatus.UNKNOWN and (rec.trap is None or relevant(rec)):
                        unknown_reason = unknown_reason or rec.reason
                if not r.exhaustive:
                    unknown_reason = unknown_reason or PATH_BOUND
            if violation is not None:
                out.append(PropertyOutcome(p.id, Outcome.VIOLATED, self._witness(violation)))
            elif unknown_reason is None:
                out.append(PropertyOutcome(p.id, Outcome.VALID))
            else:
                out.append(PropertyOutcome(p.id, Outcome.UNKNOWN, reason=unknown_reason))
        return tuple(out)

    def _witness(self, rec: PathRecord) -> Witness:
        location = self.a.src_map.location_of(rec.byte_offset) if rec.byte_offset in self.a.src_map else None
        model = tuple((n, rec.model.get(n, 0)) for n in self._params(rec.entry))
        return Witness(rec.entry, rec.trap, rec.byte_offset, location, model)

    def report(self, elapsed_ms: float = 0.0, peak_memory: int = 0) -> AnalysisReport:
        records = [p for r in self.results.values() for p in r.paths]
        completed = sum(1 for p in records if p.status in (PathStatus.RETURNED, PathStatus.TRAPPED))
        unknown = sum(1 for p in records if p.status == PathStatus.UNKNOWN)
        stats = ReportStats(
            paths=completed + unknown,
            completed=completed,
            unknown=unknown,
            infeasible=sum(r.infeasible for r in self.results.values()),
            time_ms=elapsed_ms,
            peak_memory=peak_memory,
        )
        # eo belongs to the executable checker; it starts out false
        return AnalysisReport(False, self.outcomes(), stats)


def explore(a: Analysis, bounds: Optional[ExploreBounds] = None) -> AnalysisReport:
    bounds = bounds or ExploreBounds()
    started = time.perf_counter()
    explorer = Explorer(a, bounds)
    explorer.run()
    peak = tracemalloc.get_traced_memory()[1] if tracemalloc.is_tracing() else 0
    report = explorer.report((time.perf_counter() - started) * 1000.0, peak)
    logger.info(f"explored {len(a.entries)} entries: {report.verdicts()} "
                f"({report.stats.completed} completed, {report.stats.unknown} unknown paths)")
    return report
