"""Canonical length-prefixed encoding.

Every field is a 4-byte big-endian length followed by the bytes. Records are
fixed sequences of fields, so equal values always encode to equal bytes.
"""
import struct
from typing import Iterable

U32 = struct.Struct(">I")
MAX_FIELD = 0xFFFFFFFF


class CodecError(ValueError):
    """Bytes are not a well-formed canonical record."""


def field(data: bytes) -> bytes:
    if len(data) > MAX_FIELD:
        raise CodecError("field too large")
    return U32.pack(len(data)) + data


def fields(items: Iterable[bytes]) -> bytes:
    return b"".join(field(bytes(item)) for item in items)


def u32(value: int) -> bytes:
    return U32.pack(value)


def text(value: str) -> bytes:
    return field(value.encode("utf-8"))


class FieldReader:
    """Sequential reader; ``finish`` insists nothing is left over."""

    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def raw(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise CodecError(f"record truncated at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.raw(1)[0]

    def u32(self) -> int:
        return U32.unpack(self.raw(4))[0]

    def field(self) -> bytes:
        return self.raw(self.u32())

    def text(self) -> str:
        try:
            return self.field().decode("utf-8")
        except UnicodeDecodeError as e:
            raise CodecError("text field is not UTF-8") from e

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise CodecError(f"{len(self.data) - self.pos} trailing bytes")


def split_fields(data: bytes, count: int) -> list[bytes]:
    r = FieldReader(data)
    out = [r.field() for _ in range(count)]
    r.finish()
    return out
