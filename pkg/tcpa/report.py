"""Analysis reports and their canonical text.

The canonical text is ``key=value`` lines in this order::

    eo=<true|false>
    properties=<n>
    property.<i>.id=<id>
    property.<i>.outcome=<valid|violated|unknown>
    property.<i>.reason=<text>                  (unknown only)
    property.<i>.witness.function=<export>      (violated only, with the lines below)
    property.<i>.witness.trap=<trap reason>
    property.<i>.witness.offset=<byte offset>
    property.<i>.witness.location=<line:col>
    property.<i>.witness.model=<name=value,...>
    stats.paths=<n>
    stats.completed=<n>
    stats.unknown=<n>
    stats.infeasible=<n>
    stats.time_ms=<float>
    stats.peak_memory=<bytes>

Free-text values are percent-encoded so they never contain ``=`` or newlines.
A compliance certificate carries the UTF-8 bytes of this text.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional
from urllib.parse import quote, unquote

from .interp import TrapReason
from .text import SourceLocation


class ReportError(ValueError):
    pass


class Outcome(str, Enum):
    VALID = "valid"
    VIOLATED = "violated"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Witness:
    function: str
    trap: TrapReason
    byte_offset: int
    location: Optional[SourceLocation]
    # entry arguments in parameter order
    model: tuple[tuple[str, int], ...] = ()

    @property
    def args(self) -> list[int]:
        return [v for _, v in self.model]


@dataclass(frozen=True)
class PropertyOutcome:
    id: str
    outcome: Outcome
    witness: Optional[Witness] = None
    reason: Optional[str] = None


@dataclass(frozen=True)
class ReportStats:
    paths: int = 0
    completed: int = 0
    unknown: int = 0
    infeasible: int = 0
    time_ms: float = 0.0
    peak_memory: int = 0


@dataclass(frozen=True)
class AnalysisReport:
    eo: bool
    property_outcomes: tuple[PropertyOutcome, ...] = ()
    stats: ReportStats = field(default_factory=ReportStats)

    @property
    def all_valid(self) -> bool:
        return all(p.outcome == Outcome.VALID for p in self.property_outcomes)

    def with_eo(self, eo: bool) -> "AnalysisReport":
        return replace(self, eo=eo)

    def with_unknown_outcomes(self, ids: list[str], reason: str) -> "AnalysisReport":
        return replace(self, property_outcomes=tuple(PropertyOutcome(i, Outcome.UNKNOWN, reason=reason) for i in ids))

    def outcome(self, property_id: str) -> PropertyOutcome:
        for p in self.property_outcomes:
            if p.id == property_id:
                return p
        raise KeyError(property_id)

    def verdicts(self) -> str:
        """Compact ``id:outcome`` summary, stable across runs."""
        return " ".join(f"{p.id}:{p.outcome.value}" for p in self.property_outcomes)

    # -- canonical text --------------------------------------------------

    def to_text(self) -> str:
        lines = [f"eo={'true' if self.eo else 'false'}", f"properties={len(self.property_outcomes)}"]
        for i, p in enumerate(self.property_outcomes):
            key = f"property.{i}"
            lines.append(f"{key}.id={quote(p.id, safe='')}")
            lines.append(f"{key}.outcome={p.outcome.value}")
            if p.outcome == Outcome.UNKNOWN:
                lines.append(f"{key}.reason={quote(p.reason or '', safe='')}")
            if p.witness is not None:
                w = p.witness
                model = ",".join(f"{quote(n, safe='')}={v}" for n, v in w.model)
                lines.append(f"{key}.witness.function={quote(w.function, safe='')}")
                lines.append(f"{key}.witness.trap={w.trap.value}")
                lines.append(f"{key}.witness.offset={w.byte_offset}")
                lines.append(f"{key}.witness.location={w.location or ''}")
                lines.append(f"{key}.witness.model={model}")
        s = self.stats
        lines += [
            f"stats.paths={s.paths}",
            f"stats.completed={s.completed}",
            f"stats.unknown={s.unknown}",
            f"stats.infeasible={s.infeasible}",
            f"stats.time_ms={s.time_ms:.3f}",
            f"stats.peak_memory={s.peak_memory}",
        ]
        return "\n".join(lines) + "\n"

    def to_bytes(self) -> bytes:
        return self.to_text().encode("utf-8")

    @classmethod
    def from_text(cls, text: str) -> "AnalysisReport":
        try:
            return _parse(text)
        except (KeyError, ValueError, IndexError) as e:
            raise ReportError(f"malformed report: {e}") from e

    @classmethod
    def from_bytes(cls, data: bytes) -> "AnalysisReport":
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ReportError("report is not UTF-8") from e
        report = cls.from_text(text)
        if report.to_bytes() != data:
            raise ReportError("report text is not canonical")
        return report


def _parse(text: str) -> AnalysisReport:
    if not text.endswith("\n"):
        raise ValueError("missing final newline")
    pairs = []
    for line in text[:-1].split("\n"):
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line without '=': {line!r}")
        pairs.append((key, value))
    pos = 0

    def take(expected: str) -> str:
        nonlocal pos
        key, value = pairs[pos]
        if key != expected:
            raise ValueError(f"expected {expected}, found {key}")
        pos += 1
        return value

    def peek() -> str:
        return pairs[pos][0] if pos < len(pairs) else ""

    eo_text = take("eo")
    if eo_text not in ("true", "false"):
        raise ValueError("eo must be true or false")
    count = int(take("properties"))
    outcomes = []
    for i in range(count):
        key = f"property.{i}"
        pid = unquote(take(f"{key}.id"))
        outcome = Outcome(take(f"{key}.outcome"))
        reason = unquote(take(f"{key}.reason")) if outcome == Outcome.UNKNOWN else None
        witness = None
        if peek() == f"{key}.witness.function":
            function = unquote(take(f"{key}.witness.function"))
            trap = TrapReason(take(f"{key}.witness.trap"))
            offset = int(take(f"{key}.witness.offset"))
            loc_text = take(f"{key}.witness.location")
            location = None
            if loc_text:
                line, col = loc_text.split(":")
                location = SourceLocation(int(line), int(col))
            model_text = take(f"{key}.witness.model")
            model = []
            for item in model_text.split(",") if model_text else []:
                name, value = item.split("=")
                model.append((unquote(name), int(value)))
            witness = Witness(function, trap, offset, location, tuple(model))
        outcomes.append(PropertyOutcome(pid, outcome, witness, reason))
    stats = ReportStats(
        paths=int(take("stats.paths")),
        completed=int(take("stats.completed")),
        unknown=int(take("stats.unknown")),
        infeasible=int(take("stats.infeasible")),
        time_ms=float(take("stats.time_ms")),
        peak_memory=int(take("stats.peak_memory")),
    )
    if pos != len(pairs):
        raise ValueError("trailing report lines")
    return AnalysisReport(eo_text == "true", tuple(outcomes), stats)
