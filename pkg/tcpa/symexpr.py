"""Bit-vector expressions built by symbolic execution.

Comparisons and ``eqz`` produce width-32 values in {0, 1}, as the
corresponding instructions do. Evaluation reuses ``numeric`` so expression
values agree with the concrete interpreter.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from . import numeric
from .numeric import COMMUTATIVE, NEGATED, SWAPPED, mask

BOOL_WIDTH = 32

UNARY_OPS = frozenset({"eqz", "extract", "zext", "sext"})


@dataclass(frozen=True, eq=False)
class SymExpr:
    op: str
    width: int
    args: tuple["SymExpr", ...] = ()
    # constant value, or the low bit of an extract
    value: int = 0
    # variable name
    name: str = ""
    _hash: int = field(init=False, repr=False, compare=False, default=0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_hash", hash((self.op, self.width, self.value, self.name, self.args)))

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other: object) -> bool:
        if self is other:
            return True
        if not isinstance(other, SymExpr) or self._hash != other._hash:
            return False
        return (self.op, self.width, self.value, self.name, self.args) == (
            other.op, other.width, other.value, other.name, other.args)

    @property
    def is_const(self) -> bool:
        return self.op == "const"

    @property
    def is_var(self) -> bool:
        return self.op == "var"

    @property
    def is_bool(self) -> bool:
        return self.op in numeric.COMPARE or self.op == "eqz"

    def __str__(self) -> str:
        if self.op == "const":
            return f"#{self.value}"
        if self.op == "var":
            return self.name
        if self.op == "extract":
            return f"(extract[{self.value}+{self.width}] {self.args[0]})"
        return f"({self.op} {' '.join(str(a) for a in self.args)})"


def const(value: int, width: int) -> SymExpr:
    return SymExpr("const", width, value=value & mask(width))


def var(name: str, width: int) -> SymExpr:
    return SymExpr("var", width, name=name)


def binop(op: str, a: SymExpr, b: SymExpr) -> SymExpr:
    if a.width != b.width:
        raise ValueError(f"{op}: operand widths {a.width} and {b.width} differ")
    return SymExpr(op, a.width, (a, b))


def cmp(op: str, a: SymExpr, b: SymExpr) -> SymExpr:
    if a.width != b.width:
        raise ValueError(f"{op}: operand widths {a.width} and {b.width} differ")
    return SymExpr(op, BOOL_WIDTH, (a, b))


def eqz(a: SymExpr) -> SymExpr:
    return SymExpr("eqz", BOOL_WIDTH, (a,))


def ite(c: SymExpr, a: SymExpr, b: SymExpr) -> SymExpr:
    if a.width != b.width:
        raise ValueError("ite: branch widths differ")
    return SymExpr("ite", a.width, (c, a, b))


def extract(a: SymExpr, lo: int, width: int) -> SymExpr:
    if lo < 0 or lo + width > a.width:
        raise ValueError("extract out of range")
    return SymExpr("extract", width, (a,), value=lo)


def concat(hi: SymExpr, lo: SymExpr) -> SymExpr:
    return SymExpr("concat", hi.width + lo.width, (hi, lo))


def zext(a: SymExpr, width: int) -> SymExpr:
    return SymExpr("zext", width, (a,))


def sext(a: SymExpr, width: int) -> SymExpr:
    return SymExpr("sext", width, (a,))


def negate(b: SymExpr) -> SymExpr:
    """Boolean negation of a comparison-valued expression."""
    if b.op in NEGATED:
        return SymExpr(NEGATED[b.op], BOOL_WIDTH, b.args)
    if b.op == "eqz":
        a = b.args[0]
        return cmp("ne", a, const(0, a.width))
    return eqz(b)


def truth(e: SymExpr) -> SymExpr:
    """A width-32 {0,1} expression that is 1 exactly when ``e`` is nonzero."""
    if e.is_bool:
        return e
    return cmp("ne", e, const(0, e.width))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

Env = Mapping[str, int]


def compile_expr(e: SymExpr) -> Callable[[Env], int]:
    """Turn ``e`` into a closure over a variable assignment."""
    built: dict[int, Callable[[Env], int]] = {}

    def build(n: SymExpr) -> Callable[[Env], int]:
        fn = built.get(id(n))
        if fn is not None:
            return fn
        op, w = n.op, n.width
        if op == "const":
            v = n.value
            fn = lambda env: v  # noqa: E731
        elif op == "var":
            name, m = n.name, mask(w)
            fn = lambda env: env.get(name, 0) & m  # noqa: E731
        elif op in numeric.BINARY:
            f, a, b = numeric.BINARY[op], build(n.args[0]), build(n.args[1])
            fn = lambda env: f(a(env), b(env), w)  # noqa: E731
        elif op in numeric.COMPARE:
            f, a, b, aw = numeric.COMPARE[op], build(n.args[0]), build(n.args[1]), n.args[0].width
            fn = lambda env: 1 if f(a(env), b(env), aw) else 0  # noqa: E731
        elif op == "eqz":
            a = build(n.args[0])
            fn = lambda env: 1 if a(env) == 0 else 0  # noqa: E731
        elif op == "ite":
            c, a, b = (build(x) for x in n.args)
            fn = lambda env: a(env) if c(env) else b(env)  # noqa: E731
        elif op == "extract":
            a, lo, m = build(n.args[0]), n.value, mask(w)
            fn = lambda env: (a(env) >> lo) & m  # noqa: E731
        elif op == "concat":
            hi, lo, lw = build(n.args[0]), build(n.args[1]), n.args[1].width
            fn = lambda env: (hi(env) << lw) | lo(env)  # noqa: E731
        elif op == "zext":
            fn = build(n.args[0])
        elif op == "sext":
            a, aw = build(n.args[0]), n.args[0].width
            fn = lambda env: numeric.sign_extend(a(env), aw, w)  # noqa: E731
        else:
            raise ValueError(f"unknown expression operator {op}")
        built[id(n)] = fn
        return fn

    return build(e)


def evaluate(e: SymExpr, env: Env) -> int:
    return compile_expr(e)(env)


def variables(e: SymExpr) -> dict[str, int]:
    """Free variables of ``e`` with their widths."""
    out: dict[str, int] = {}
    seen: set[int] = set()
    todo = [e]
    while todo:
        n = todo.pop()
        if id(n) in seen:
            continue
        seen.add(id(n))
        if n.op == "var":
            out[n.name] = n.width
        todo.extend(n.args)
    return out


def variables_of(exprs: Iterable[SymExpr]) -> dict[str, int]:
    out: dict[str, int] = {}
    for e in exprs:
        out.update(variables(e))
    return out


# ---------------------------------------------------------------------------
# Simplification
# ---------------------------------------------------------------------------

def _c(n: SymExpr, v: int) -> bool:
    return n.op == "const" and n.value == (v & mask(n.width))


def _rewrite(n: SymExpr) -> SymExpr:
    op, w, args = n.op, n.width, n.args
    if op in ("const", "var"):
        return n
    if all(a.op == "const" for a in args):
        return const(evaluate(n, {}), w)

    if len(args) == 2 and op in numeric.BINARY or op in numeric.COMPARE:
        a, b = args
        if a.is_const and not b.is_const:
            if op in COMMUTATIVE:
                return SymExpr(op, w, (b, a))
            if op in SWAPPED:
                return SymExpr(SWAPPED[op], w, (b, a))

    if op == "add":
        a, b = args
        if _c(b, 0):
            return a
        if a.op == "add" and a.args[1].is_const and b.is_const:
            return binop("add", a.args[0], const(a.args[1].value + b.value, w))
    elif op == "sub":
        a, b = args
        if _c(b, 0):
            return a
        if a == b:
            return const(0, w)
        if b.is_const:
            return binop("add", a, const(-b.value, w))
    elif op == "mul":
        a, b = args
        if _c(b, 0):
            return b
        if _c(b, 1):
            return a
        if a.op == "mul" and a.args[1].is_const and b.is_const:
            return binop("mul", a.args[0], const(a.args[1].value * b.value, w))
    elif op == "and":
        a, b = args
        if _c(b, 0):
            return b
        if _c(b, -1) or a == b:
            return a
        if a.op == "and" and a.args[1].is_const and b.is_const:
            return binop("and", a.args[0], const(a.args[1].value & b.value, w))
    elif op == "or":
        a, b = args
        if _c(b, 0) or a == b:
            return a
        if _c(b, -1):
            return b
    elif op == "xor":
        a, b = args
        if _c(b, 0):
            return a
        if a == b:
            return const(0, w)
    elif op in ("shl", "shr_s", "shr_u"):
        a, b = args
        if b.is_const and b.value % w == 0:
            return a
    elif op in ("div_s", "div_u"):
        if _c(args[1], 1):
            return args[0]
    elif op in ("rem_s", "rem_u"):
        if _c(args[1], 1):
            return const(0, w)
    elif op in numeric.COMPARE:
        a, b = args
        if a == b:
            return const(1 if op in ("eq", "le_s", "le_u", "ge_s", "ge_u") else 0, w)
        if a.is_bool and b.is_const:
            if (op == "ne" and b.value == 0) or (op == "eq" and b.value == 1):
                return a
            if (op == "eq" and b.value == 0) or (op == "ne" and b.value == 1):
                return negate(a)
            if op == "eq" or (op == "ne" and b.value > 1):
                return const(0 if op == "eq" else 1, w)
    elif op == "eqz":
        a = args[0]
        if a.is_bool:
            return negate(a)
    elif op == "ite":
        c, a, b = args
        if c.is_const:
            return a if c.value else b
        if a == b:
            return a
        if w == BOOL_WIDTH and _c(a, 1) and _c(b, 0):
            return truth(c)
    elif op == "extract":
        a, lo = args[0], n.value
        if lo == 0 and w == a.width:
            return a
        if a.op == "concat":
            hi_part, lo_part = a.args
            if lo + w <= lo_part.width:
                return extract(lo_part, lo, w)
            if lo >= lo_part.width:
                return extract(hi_part, lo - lo_part.width, w)
        if a.op == "extract":
            return extract(a.args[0], a.value + lo, w)
        if a.op in ("zext", "sext") and lo + w <= a.args[0].width:
            return extract(a.args[0], lo, w)
    elif op == "concat":
        hi, lo = args
        if (hi.op == "extract" and lo.op == "extract" and hi.args[0] == lo.args[0]
                and hi.value == lo.value + lo.width):
            return extract(lo.args[0], lo.value, hi.width + lo.width)
    elif op in ("zext", "sext"):
        if args[0].width == w:
            return args[0]
    return n


def _simplify_pass(e: SymExpr, memo: dict[SymExpr, SymExpr]) -> SymExpr:
    done = memo.get(e)
    if done is not None:
        return done
    if e.args:
        new_args = tuple(_simplify_pass(a, memo) for a in e.args)
        n = e if new_args == e.args else SymExpr(e.op, e.width, new_args, e.value, e.name)
    else:
        n = e
    for _ in range(32):
        r = _rewrite(n)
        if r == n:
            break
        n = r
    memo[e] = n
    return n


def simplify(e: SymExpr) -> SymExpr:
    """Semantics-preserving rewrite to a fixed point of the rule set."""
    memo: dict[SymExpr, SymExpr] = {}
    for _ in range(32):
        n = _simplify_pass(e, memo)
        if n == e:
            return n
        e = n
    return e
