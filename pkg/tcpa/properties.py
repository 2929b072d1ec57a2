"""Regulatory property sets.

Text form, one property per line (``#`` starts a comment)::

    no-assert-failure  assertion_unreachable  main
    never-traps        no_trap

A missing target means every exported function. The canonical byte image (the
P that is measured and signed) is a 4-byte count followed by the
length-prefixed ``id``, ``kind`` and ``target`` of each property, an empty
target standing for "every export".
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional

from . import codec


class PropertyError(ValueError):
    pass


class PropertyKind(str, Enum):
    ASSERTION_UNREACHABLE = "assertion_unreachable"
    NO_TRAP = "no_trap"


_ID_RE = re.compile(r"[A-Za-z0-9_.:-]+")


@dataclass(frozen=True)
class Property:
    id: str
    kind: PropertyKind
    target: Optional[str] = None

    def __str__(self) -> str:
        parts = [self.id, self.kind.value] + ([self.target] if self.target else [])
        return " ".join(parts)


@dataclass(frozen=True)
class PropertySet:
    properties: tuple[Property, ...] = ()

    def __post_init__(self) -> None:
        seen = set()
        for p in self.properties:
            if not _ID_RE.fullmatch(p.id):
                raise PropertyError(f"bad property id {p.id!r}")
            if p.id in seen:
                raise PropertyError(f"duplicate property id {p.id!r}")
            seen.add(p.id)

    def __iter__(self) -> Iterator[Property]:
        return iter(self.properties)

    def __len__(self) -> int:
        return len(self.properties)

    @property
    def ids(self) -> list[str]:
        return [p.id for p in self.properties]

    @classmethod
    def parse(cls, text: str) -> "PropertySet":
        props = []
        for n, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise PropertyError(f"line {n}: expected 'id kind [target]'")
            try:
                kind = PropertyKind(parts[1])
            except ValueError as e:
                raise PropertyError(f"line {n}: unknown property kind {parts[1]!r}") from e
            props.append(Property(parts[0], kind, parts[2] if len(parts) == 3 else None))
        return cls(tuple(props))

    def to_text(self) -> str:
        return "".join(f"{p}\n" for p in self.properties)

    def to_bytes(self) -> bytes:
        out = bytearray(codec.u32(len(self.properties)))
        for p in self.properties:
            out += codec.text(p.id) + codec.text(p.kind.value) + codec.text(p.target or "")
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "PropertySet":
        try:
            r = codec.FieldReader(data)
            props = []
            for _ in range(r.u32()):
                pid, kind, target = r.text(), r.text(), r.text()
                props.append(Property(pid, PropertyKind(kind), target or None))
            r.finish()
        except (codec.CodecError, ValueError) as e:
            raise PropertyError(f"malformed property image: {e}") from e
        result = cls(tuple(props))
        if result.to_bytes() != data:
            raise PropertyError("property image is not canonical")
        return result
