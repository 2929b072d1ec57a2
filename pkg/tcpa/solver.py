"""Path conditions and a small bit-vector decision procedure.

``check_sat`` narrows each variable's domain (comparisons against constants,
affine equalities, masks), filters single-variable constraints, and then
enumerates what is left within the budget. It never guesses: a model is only
returned after every conjunct evaluated true under it, ``unsat`` is only
returned after an exhaustive argument, and everything else is ``unknown``.
"""
from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional

from . import numeric
from .models import CheckBudget
from .numeric import mask, signed
from .symexpr import (
    SymExpr,
    compile_expr,
    negate,
    simplify,
    truth,
    variables,
    variables_of,
)

logger = logging.getLogger(__name__)

try:
    import z3  # type: ignore[import]
except Exception:
    z3 = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Conjunct:
    """``expr`` was nonzero (``taken``) or zero (not ``taken``) on this path."""

    expr: SymExpr
    taken: bool = True

    def as_truth(self) -> SymExpr:
        t = truth(self.expr)
        return simplify(t if self.taken else negate(t))


@dataclass(frozen=True)
class PathCondition:
    conjuncts: tuple[Conjunct, ...] = ()

    def extend(self, expr: SymExpr, taken: bool = True) -> "PathCondition":
        return PathCondition(self.conjuncts + (Conjunct(expr, taken),))

    def holds(self, model: dict[str, int]) -> bool:
        for c in self.conjuncts:
            value = compile_expr(c.expr)(model)
            if (value != 0) != c.taken:
                return False
        return True

    def __len__(self) -> int:
        return len(self.conjuncts)


class SatStatus(str, Enum):
    SAT = "sat"
    UNSAT = "unsat"
    UNKNOWN = "unknown"


REASON_BUDGET = "budget"
REASON_UNSUPPORTED = "unsupported"


@dataclass(frozen=True)
class SatResult:
    status: SatStatus
    model: Optional[dict[str, int]] = None
    reason: Optional[str] = None

    @property
    def is_sat(self) -> bool:
        return self.status == SatStatus.SAT

    @property
    def is_unsat(self) -> bool:
        return self.status == SatStatus.UNSAT


UNSAT = SatResult(SatStatus.UNSAT)


class _BudgetExceeded(Exception):
    pass


# ---------------------------------------------------------------------------
# Domains: sorted disjoint inclusive ranges of unsigned values
# ---------------------------------------------------------------------------

Ranges = list[tuple[int, int]]


def _size(rs: Ranges) -> int:
    return sum(hi - lo + 1 for lo, hi in rs)


def _intersect(a: Ranges, b: Ranges) -> Ranges:
    out: Ranges = []
    i = j = 0
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if lo <= hi:
            out.append((lo, hi))
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return out


def _points(values: list[int]) -> Ranges:
    out: Ranges = []
    for v in sorted(set(values)):
        if out and out[-1][1] + 1 == v:
            out[-1] = (out[-1][0], v)
        else:
            out.append((v, v))
    return out


def _values(rs: Ranges) -> Iterator[int]:
    for lo, hi in rs:
        yield from range(lo, hi + 1)


def _signed_range(lo: int, hi: int, w: int) -> Ranges:
    """Unsigned ranges holding the signed interval [lo, hi]."""
    if lo > hi:
        return []
    if hi < 0:
        return [(lo + (1 << w), hi + (1 << w))]
    if lo >= 0:
        return [(lo, hi)]
    return [(0, hi), (lo + (1 << w), (1 << w) - 1)]


def _range_for(op: str, c: int, w: int) -> Optional[Ranges]:
    """Values x with ``op(x, c)``; None when the operator is not a comparison."""
    top = mask(w)
    smin, smax = -(1 << (w - 1)), (1 << (w - 1)) - 1
    sc = signed(c, w)
    table = {
        "eq": [(c, c)],
        "ne": [r for r in ((0, c - 1), (c + 1, top)) if r[0] <= r[1]],
        "lt_u": [(0, c - 1)] if c > 0 else [],
        "le_u": [(0, c)],
        "gt_u": [(c + 1, top)] if c < top else [],
        "ge_u": [(c, top)],
        "lt_s": _signed_range(smin, sc - 1, w),
        "le_s": _signed_range(smin, sc, w),
        "gt_s": _signed_range(sc + 1, smax, w),
        "ge_s": _signed_range(sc, smax, w),
    }
    return table.get(op)


def _affine(e: SymExpr) -> Optional[tuple[Optional[str], int, int]]:
    """(var, a, b) with e == a*var + b modulo 2**width, if e has that shape."""
    w = e.width
    if e.op == "const":
        return None, 0, e.value
    if e.op == "var":
        return e.name, 1, 0
    if e.op in ("add", "sub"):
        left, right = _affine(e.args[0]), _affine(e.args[1])
        if left is None or right is None:
            return None
        if left[0] and right[0] and left[0] != right[0]:
            return None
        sign = 1 if e.op == "add" else -1
        return (left[0] or right[0], (left[1] + sign * right[1]) & mask(w),
                (left[2] + sign * right[2]) & mask(w))
    if e.op == "mul":
        left, right = _affine(e.args[0]), _affine(e.args[1])
        if left is None or right is None:
            return None
        if left[0] and right[0]:
            return None
        if right[0]:
            left, right = right, left
        k = right[2]
        return left[0], (left[1] * k) & mask(w), (left[2] * k) & mask(w)
    return None


def _solve_affine(a: int, b: int, c: int, w: int, limit: int) -> Optional[Ranges]:
    """Solutions of a*x + b == c mod 2**w; None when there are too many to list."""
    modulus = 1 << w
    rhs = (c - b) % modulus
    if a == 0:
        return None if rhs == 0 else []
    d = a & -a
    if rhs % d:
        return []
    if d > limit:
        return None
    m = modulus // d
    x0 = (rhs // d) * pow(a // d, -1, m) % m if m > 1 else 0
    return _points([x0 + k * m for k in range(d)])


def _masks(formulas: list[SymExpr]) -> dict[str, Optional[int]]:
    """For each variable: the union of masks if it only ever occurs as ``and(var, const)``."""
    out: dict[str, Optional[int]] = {}
    seen: set[int] = set()
    todo = list(formulas)
    while todo:
        n = todo.pop()
        if id(n) in seen:
            continue
        seen.add(id(n))
        for i, a in enumerate(n.args):
            if a.op == "var":
                other = n.args[1 - i] if len(n.args) == 2 else None
                if n.op == "and" and other is not None and other.op == "const":
                    if a.name not in out or out[a.name] is not None:
                        out[a.name] = (out.get(a.name) or 0) | other.value
                else:
                    out[a.name] = None
            else:
                todo.append(a)
    for f in formulas:
        if f.op == "var":
            out[f.name] = None
    return out


def _submask_points(m: int) -> Ranges:
    values = []
    sub = m
    while True:
        values.append(sub)
        if sub == 0:
            break
        sub = (sub - 1) & m
    return _points(values)


# ---------------------------------------------------------------------------
# Decision procedure
# ---------------------------------------------------------------------------

def check_sat(pc: PathCondition, budget: Optional[CheckBudget] = None) -> SatResult:
    budget = budget or CheckBudget()
    deadline = time.perf_counter() + budget.max_millis / 1000.0
    limit = budget.max_enumeration

    formulas: list[SymExpr] = []
    for c in pc.conjuncts:
        f = c.as_truth()
        if f.is_const:
            if f.value == 0:
                return UNSAT
            continue
        formulas.append(f)
    if not formulas:
        return SatResult(SatStatus.SAT, {})

    try:
        compiled = [compile_expr(f) for f in formulas]
    except ValueError as e:
        logger.debug(f"unsupported constraint: {e}")
        return SatResult(SatStatus.UNKNOWN, reason=REASON_UNSUPPORTED)

    widths = variables_of(formulas)
    names = sorted(widths)
    masks = _masks(formulas)
    domains: dict[str, Ranges] = {}
    for name in names:
        m = masks.get(name)
        if m is not None and bin(m).count("1") <= 20:
            domains[name] = _submask_points(m & mask(widths[name]))
        else:
            domains[name] = [(0, mask(widths[name]))]

    # constraint propagation over plain variable occurrences
    for f in formulas:
        if f.op == "eqz" and f.args[0].op == "var":
            x = f.args[0]
            domains[x.name] = _intersect(domains[x.name], [(0, 0)])
        elif f.op in numeric.COMPARE:
            lhs, rhs = f.args
            if lhs.op == "var" and rhs.op == "const":
                rs = _range_for(f.op, rhs.value, lhs.width)
                if rs is not None:
                    domains[lhs.name] = _intersect(domains[lhs.name], rs)
            elif f.op == "eq" and rhs.op == "const":
                aff = _affine(lhs)
                if aff is not None and aff[0] is not None:
                    sols = _solve_affine(aff[1], aff[2], rhs.value, lhs.width, limit)
                    if sols is not None:
                        domains[aff[0]] = _intersect(domains[aff[0]], sols)
        if any(not rs for rs in domains.values()):
            return UNSAT

    try:
        # single-variable filtering
        by_var: dict[str, list] = {}
        multi = []
        for f, fn in zip(formulas, compiled):
            vs = variables(f)
            if len(vs) == 1:
                by_var.setdefault(next(iter(vs)), []).append(fn)
            else:
                multi.append(fn)
        for name in names:
            fns = by_var.get(name)
            if not fns or _size(domains[name]) > limit:
                continue
            kept = []
            for k, v in enumerate(_values(domains[name])):
                if k & 1023 == 0 and time.perf_counter() > deadline:
                    raise _BudgetExceeded
                env = {name: v}
                if all(fn(env) for fn in fns):
                    kept.append(v)
            if not kept:
                return UNSAT
            domains[name] = _points(kept)

        product = math.prod(_size(domains[n]) for n in names)
        if product <= limit:
            for k, combo in enumerate(itertools.product(*(list(_values(domains[n])) for n in names))):
                if k & 1023 == 0 and time.perf_counter() > deadline:
                    raise _BudgetExceeded
                env = dict(zip(names, combo))
                if all(fn(env) for fn in compiled):
                    return SatResult(SatStatus.SAT, env)
            return UNSAT

        model = _search_candidates(names, domains, formulas, compiled, limit, deadline)
        if model is not None:
            return SatResult(SatStatus.SAT, model)
    except _BudgetExceeded:
        pass
    return SatResult(SatStatus.UNKNOWN, reason=REASON_BUDGET)


def _search_candidates(names, domains, formulas, compiled, limit, deadline) -> Optional[dict[str, int]]:
    """Try boundary and constant-derived values; only a verified model is returned."""
    constants: set[int] = set()
    todo = list(formulas)
    while todo:
        n = todo.pop()
        if n.op == "const":
            constants.update({n.value, n.value + 1, n.value - 1})
        todo.extend(n.args)

    per_var = []
    for name in names:
        rs = domains[name]
        if _size(rs) <= 16:
            per_var.append(list(_values(rs)))
            continue
        cands = [rs[0][0], rs[-1][1], rs[0][0] + 1, rs[-1][1] - 1, 0, 1]
        cands += sorted(constants)
        mid = rs[len(rs) // 2]
        cands.append((mid[0] + mid[1]) // 2)
        picked = []
        for v in cands:
            if v not in picked and _intersect([(v, v)], rs):
                picked.append(v)
        per_var.append(picked[:32])

    for k, combo in enumerate(itertools.product(*per_var)):
        if k >= limit:
            return None
        if k & 1023 == 0 and time.perf_counter() > deadline:
            raise _BudgetExceeded
        env = dict(zip(names, combo))
        if all(fn(env) for fn in compiled):
            return env
    return None


# ---------------------------------------------------------------------------
# SMT-LIB export
# ---------------------------------------------------------------------------

_SMT_BINARY = {
    "add": "bvadd", "sub": "bvsub", "mul": "bvmul",
    "div_s": "bvsdiv", "div_u": "bvudiv", "rem_s": "bvsrem", "rem_u": "bvurem",
    "and": "bvand", "or": "bvor", "xor": "bvxor",
    "shl": "bvshl", "shr_u": "bvlshr", "shr_s": "bvashr",
}
_SMT_COMPARE = {
    "eq": "=", "ne": "distinct",
    "lt_u": "bvult", "gt_u": "bvugt", "le_u": "bvule", "ge_u": "bvuge",
    "lt_s": "bvslt", "gt_s": "bvsgt", "le_s": "bvsle", "ge_s": "bvsge",
}


def _symbol(name: str) -> str:
    if name and all(ch.isalnum() or ch in "_.$" for ch in name) and not name[0].isdigit():
        return name
    return f"|{name}|"


def _bv(value: int, width: int) -> str:
    return f"(_ bv{value & mask(width)} {width})"


def to_smtlib(e: SymExpr) -> str:
    op, w = e.op, e.width
    if op == "const":
        return _bv(e.value, w)
    if op == "var":
        return _symbol(e.name)
    args = [to_smtlib(a) for a in e.args]
    if op in ("shl", "shr_u", "shr_s"):
        return f"({_SMT_BINARY[op]} {args[0]} (bvurem {args[1]} {_bv(w, w)}))"
    if op in _SMT_BINARY:
        return f"({_SMT_BINARY[op]} {args[0]} {args[1]})"
    one, zero = _bv(1, w), _bv(0, w)
    if op in _SMT_COMPARE:
        return f"(ite ({_SMT_COMPARE[op]} {args[0]} {args[1]}) {one} {zero})"
    if op == "eqz":
        return f"(ite (= {args[0]} {_bv(0, e.args[0].width)}) {one} {zero})"
    if op == "ite":
        return f"(ite (distinct {args[0]} {_bv(0, e.args[0].width)}) {args[1]} {args[2]})"
    if op == "extract":
        return f"((_ extract {e.value + w - 1} {e.value}) {args[0]})"
    if op == "concat":
        return f"(concat {args[0]} {args[1]})"
    if op == "zext":
        return f"((_ zero_extend {w - e.args[0].width}) {args[0]})"
    if op == "sext":
        return f"((_ sign_extend {w - e.args[0].width}) {args[0]})"
    raise ValueError(f"no SMT-LIB form for {op}")


def export_smtlib(pc: PathCondition) -> str:
    """QF_BV script: declarations sorted by name, assertions in path order."""
    lines = ["(set-logic QF_BV)"]
    widths = variables_of(c.expr for c in pc.conjuncts)
    for name in sorted(widths):
        lines.append(f"(declare-const {_symbol(name)} (_ BitVec {widths[name]}))")
    if not pc.conjuncts:
        lines.append("(assert true)")
    for c in pc.conjuncts:
        relation = "distinct" if c.taken else "="
        lines.append(f"(assert ({relation} {to_smtlib(c.expr)} {_bv(0, c.expr.width)}))")
    lines.append("(check-sat)")
    lines.append("(get-model)")
    return "\n".join(lines) + "\n"


def discharge_external(script: str) -> tuple[SatStatus, dict[str, int]]:
    """Hand an exported script to z3, when it is installed."""
    if z3 is None:
        raise RuntimeError("z3-solver is not installed")
    body = "\n".join(
        line for line in script.splitlines() if not line.startswith(("(check-sat", "(get-model"))
    )
    solver = z3.Solver()
    solver.add(z3.parse_smt2_string(body))
    verdict = solver.check()
    if verdict == z3.sat:
        model = solver.model()
        return SatStatus.SAT, {d.name(): model[d].as_long() for d in model.decls()}
    if verdict == z3.unsat:
        return SatStatus.UNSAT, {}
    return SatStatus.UNKNOWN, {}
