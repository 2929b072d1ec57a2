"""Integer semantics shared by the interpreter and the symbolic layer.

Values are unsigned Python ints below ``2**width``. Division and remainder by
zero follow SMT-LIB bit-vector semantics; callers that model WebAssembly trap
before reaching them.
"""


def mask(width: int) -> int:
    return (1 << width) - 1


def signed(value: int, width: int) -> int:
    return value - (1 << width) if value >> (width - 1) & 1 else value


def _trunc_div(a: int, b: int) -> int:
    q = abs(a) // abs(b)
    return q if (a < 0) == (b < 0) else -q


def div_s(a: int, b: int, w: int) -> int:
    sa, sb = signed(a, w), signed(b, w)
    if sb == 0:
        return 1 if sa < 0 else mask(w)
    return _trunc_div(sa, sb) & mask(w)


def div_u(a: int, b: int, w: int) -> int:
    return mask(w) if b == 0 else a // b


def rem_s(a: int, b: int, w: int) -> int:
    sa, sb = signed(a, w), signed(b, w)
    if sb == 0:
        return a
    return (sa - sb * _trunc_div(sa, sb)) & mask(w)


def rem_u(a: int, b: int, w: int) -> int:
    return a if b == 0 else a % b


BINARY = {
    "add": lambda a, b, w: (a + b) & mask(w),
    "sub": lambda a, b, w: (a - b) & mask(w),
    "mul": lambda a, b, w: (a * b) & mask(w),
    "div_s": div_s,
    "div_u": div_u,
    "rem_s": rem_s,
    "rem_u": rem_u,
    "and": lambda a, b, w: a & b,
    "or": lambda a, b, w: a | b,
    "xor": lambda a, b, w: a ^ b,
    "shl": lambda a, b, w: (a << (b % w)) & mask(w),
    "shr_u": lambda a, b, w: a >> (b % w),
    "shr_s": lambda a, b, w: (signed(a, w) >> (b % w)) & mask(w),
}

COMPARE = {
    "eq": lambda a, b, w: a == b,
    "ne": lambda a, b, w: a != b,
    "lt_u": lambda a, b, w: a < b,
    "gt_u": lambda a, b, w: a > b,
    "le_u": lambda a, b, w: a <= b,
    "ge_u": lambda a, b, w: a >= b,
    "lt_s": lambda a, b, w: signed(a, w) < signed(b, w),
    "gt_s": lambda a, b, w: signed(a, w) > signed(b, w),
    "le_s": lambda a, b, w: signed(a, w) <= signed(b, w),
    "ge_s": lambda a, b, w: signed(a, w) >= signed(b, w),
}

NEGATED = {
    "eq": "ne", "ne": "eq",
    "lt_u": "ge_u", "ge_u": "lt_u", "gt_u": "le_u", "le_u": "gt_u",
    "lt_s": "ge_s", "ge_s": "lt_s", "gt_s": "le_s", "le_s": "gt_s",
}

SWAPPED = {
    "eq": "eq", "ne": "ne",
    "lt_u": "gt_u", "gt_u": "lt_u", "le_u": "ge_u", "ge_u": "le_u",
    "lt_s": "gt_s", "gt_s": "lt_s", "le_s": "ge_s", "ge_s": "le_s",
}

COMMUTATIVE = frozenset({"add", "mul", "and", "or", "xor", "eq", "ne"})


def binary(op: str, a: int, b: int, width: int) -> int:
    return BINARY[op](a, b, width)


def compare(op: str, a: int, b: int, width: int) -> int:
    return 1 if COMPARE[op](a, b, width) else 0


def sign_extend(value: int, from_width: int, to_width: int) -> int:
    return signed(value & mask(from_width), from_width) & mask(to_width)
